"""Frame preprocessing: min-max normalization, log compression, block pooling."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .synthgen import FrameArray, Session, UltrasoundFrame


@dataclass(frozen=True)
class PreprocessConfig:
    """How raw frames are turned into model inputs.

    ``log_dynamic_range`` is the ratio ``R`` in ``log(1 + R x) / log(1 + R)``;
    the default 1000 corresponds to a 60 dB display range.
    """

    target_height: int
    target_width: int
    log_dynamic_range: float = 1000.0
    normalize_mode: str = "per_frame_minmax"

    def __post_init__(self):
        if not self.log_dynamic_range > 1:
            raise ConfigError("log_dynamic_range must exceed 1")
        if self.normalize_mode != "per_frame_minmax":
            raise ConfigError(f"unknown normalize_mode {self.normalize_mode!r}")
        if self.target_height < 1 or self.target_width < 1:
            raise ConfigError("target dimensions must be positive")

    @property
    def target_shape(self):
        return (self.target_height, self.target_width)

    def block(self, shape):
        """Pooling block size for a source of ``shape``; raises on mismatch."""
        h, w = shape
        if h % self.target_height or w % self.target_width:
            raise ConfigError(
                f"target {self.target_height}x{self.target_width} does not "
                f"divide source {h}x{w}")
        return h // self.target_height, w // self.target_width

    def as_dict(self):
        return {"target_height": self.target_height,
                "target_width": self.target_width,
                "log_dynamic_range": self.log_dynamic_range,
                "normalize_mode": self.normalize_mode}


# defaults for 636 x 256 frames
SVC_DEFAULT = PreprocessConfig(159, 64)
CNN_DEFAULT = PreprocessConfig(53, 32)


def normalize(x):
    """Min-max scale each frame of ``x`` (..., H, W) to [0, 1].

    A constant frame maps to all zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=(-2, -1), keepdims=True)
    span = x.max(axis=(-2, -1), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def log_compress(x, dynamic_range=1000.0):
    r = float(dynamic_range)
    return np.log1p(r * np.asarray(x, dtype=np.float64)) / np.log1p(r)


def block_pool(x, block):
    bh, bw = block
    *lead, h, w = x.shape
    return x.reshape(*lead, h // bh, bh, w // bw, bw).mean(axis=(-3, -1))


def preprocess_array(x, cfg: PreprocessConfig):
    """Vectorized preprocessing of a stack of frames ``(..., H, W)``."""
    x = np.asarray(x)
    block = cfg.block(x.shape[-2:])
    y = log_compress(normalize(x), cfg.log_dynamic_range)
    return block_pool(y, block)


def preprocess_frame(frame: UltrasoundFrame, cfg: PreprocessConfig) -> UltrasoundFrame:
    if frame.pixels.size == 0:
        raise ConfigError("empty frame")
    return UltrasoundFrame(preprocess_array(frame.pixels, cfg),
                           frame.frame_index, frame.meta)


def preprocess_session(session: Session, cfg: PreprocessConfig,
                       chunk=128) -> Session:
    """Apply :func:`preprocess_frame` to every frame of a session.

    Angles, triggers and mocap are carried over unchanged. The result holds
    its frames in memory as float32.
    """
    n = len(session)
    cfg.block(session.frames.frame_shape)
    out = np.empty((n,) + cfg.target_shape, dtype=np.float32)
    for lo in range(0, n, chunk):
        idx = range(lo, min(n, lo + chunk))
        out[lo:lo + len(idx)] = preprocess_array(session.frames.array(idx), cfg)
    return replace(session, frames=FrameArray(out, session.frames.meta))
