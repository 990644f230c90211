"""
Deterministic synthetic recording sessions.

A session reproduces the timing of the acquisition protocol: the subject
alternates between the open hand and one of eleven hand configurations, cued
at a switching rate of 0.5, 1 or 2 Hz, while the ultrasound scanner records
25 frames per second of 636 x 256 pixels for 56 seconds (1400 frames) and the
motion-capture system samples 16 hand markers at 100 Hz.

Images come from a deliberately simple forward model, not an acoustic one:
each finger owns a horizontal quadrant of the image holding a bright
Gaussian band whose depth moves linearly with that finger's MCP flexion.
A faint configuration-specific blob near the bottom of the image stands in
for the session-level differences (probe seating, resting posture of the
thumb and wrist) that make recordings of different configurations separable
even at rest. Multiplicative exponential speckle supplies the noise.

Random streams are derived from the session seed with
:class:`numpy.random.SeedSequence` spawn keys, one per purpose and one per
frame, so any frame can be rendered on its own and in any order.

Session directory layout
------------------------
``meta.txt``
    ``key=value`` lines: format, version, configuration, speed, seed,
    duration, frame_rate, image_height, image_width, noise_level, mocap_rate,
    bridge_latency, n_frames, frame_height, frame_width, n_mocap, dtype.
``frames.f32``
    All frames as little-endian float32, frame-major then row-major:
    byte offset of pixel (k, r, c) is ``4 * ((k * frame_height + r) *
    frame_width + c)``.
``angles.txt``, ``mocap.txt``, ``triggers.txt``
    Columnar text, see :mod:`sonomyo.kinematics`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .kinematics import (AngleStream, MarkerStream, TriggerStream, McpAngles,
                         MAX_FLEXION)

SESSION_FORMAT = "sonomyo-session"
SESSION_VERSION = 1

# forward-model geometry, as fractions of image height / quadrant width
BACKGROUND = 0.08
BAND_PEAK = 0.8
BAND_REST_ROW = 0.2
BAND_SHIFT_PER_DEGREE = 0.005
BAND_SIGMA = 0.03
BAND_SIGMA_SPAN = 0.2  # +-20 % width modulation over 0..100 degrees
BAND_SIGMA_COLS = 0.2
SIGNATURE_ROW = 0.88
SIGNATURE_SIGMA = 0.025
SIGNATURE_PEAK = 0.35

JITTER = 0.05

# spawn keys of the per-purpose random streams
_KEY_JITTER, _KEY_FRAME, _KEY_OCCLUSION, _KEY_POSE = 0, 1, 2, 3


@dataclass(frozen=True)
class HandConfiguration:
    id: str
    name: str
    amplitudes: tuple  # peak MCP flexion per finger, degrees
    mcp_frozen: bool = False

    @property
    def involved(self):
        return tuple(a > 0 for a in self.amplitudes)


FLEX_AMPLITUDE = 60.0
PINCH_AMPLITUDE = 40.0
FIST_AMPLITUDE = 90.0

_F, _P = FLEX_AMPLITUDE, PINCH_AMPLITUDE
CONFIGURATIONS: dict[str, HandConfiguration] = {c.id: c for c in [
    HandConfiguration("C1", "IndFlex", (_F, 0, 0, 0)),
    HandConfiguration("C2", "MidFlex", (0, _F, 0, 0)),
    HandConfiguration("C3", "RinFlex", (0, 0, _F, 0)),
    HandConfiguration("C4", "PinFlex", (0, 0, 0, _F)),
    HandConfiguration("C5", "IndPinch", (_P, 0, 0, 0)),
    HandConfiguration("C6", "IndMidPinch", (_P, _P, 0, 0)),
    HandConfiguration("C7", "IndMidRinPinch", (_P, _P, _P, 0)),
    HandConfiguration("C8", "AllPinch", (_P, _P, _P, _P)),
    HandConfiguration("C9", "MidRinPinch", (0, _P, _P, 0)),
    HandConfiguration("C10", "Fist", (FIST_AMPLITUDE,) * 4),
    HandConfiguration("C11", "Hook", (0, 0, 0, 0), mcp_frozen=True),
    HandConfiguration("Open", "Open", (0, 0, 0, 0)),
]}
del _F, _P

# the eleven classes, in classifier order
CLASS_IDS = tuple(f"C{i}" for i in range(1, 12))


def get_configuration(config) -> HandConfiguration:
    if isinstance(config, HandConfiguration):
        return config
    try:
        return CONFIGURATIONS[str(config)]
    except KeyError:
        raise ConfigError(f"unknown hand configuration {config!r}") from None


class Speed(enum.Enum):
    """Rest/motion switching rate of the audio cue, in Hz."""

    SLOW = 0.5
    MEDIUM = 1.0
    FAST = 2.0

    @property
    def hz(self):
        return self.value

    @property
    def cycle_period(self):
        # one rest->flex->rest cycle spans two switches
        return 2.0 / self.value

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                pass
        for s in cls:
            try:
                if math.isclose(float(value), s.value):
                    return s
            except (TypeError, ValueError):
                break
        raise ConfigError(f"unknown speed {value!r}")


@dataclass(frozen=True)
class SessionSpec:
    configuration: HandConfiguration | str
    speed: Speed | str | float = Speed.MEDIUM
    duration: float = 56.0
    frame_rate: float = 25.0
    image_height: int = 636
    image_width: int = 256
    seed: int = 0
    noise_level: float = 0.1
    mocap_rate: float = 100.0
    bridge_latency: float = 0.001  # trigger delay through the bridge, s

    def __post_init__(self):
        object.__setattr__(self, "configuration",
                           get_configuration(self.configuration))
        object.__setattr__(self, "speed", Speed.parse(self.speed))
        problems = []
        for name in ("duration", "frame_rate", "mocap_rate"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.image_height < 8 or self.image_width < 4:
            problems.append("image must be at least 8 x 4 pixels")
        if not 0.0 <= self.noise_level <= 1.0:
            problems.append("noise_level must lie in [0, 1]")
        for name, rate in (("frame_rate", self.frame_rate),
                           ("mocap_rate", self.mocap_rate)):
            n = self.duration * rate
            if rate > 0 and abs(n - round(n)) > 1e-9 * max(1.0, n):
                problems.append(f"duration x {name} must be an integer")
        if not 0 <= self.bridge_latency < 0.5 / self.mocap_rate:
            problems.append("bridge_latency must be below half a mocap period")
        if not 0 <= int(self.seed) < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def n_frames(self):
        return int(round(self.duration * self.frame_rate))

    @property
    def n_mocap(self):
        return int(round(self.duration * self.mocap_rate))

    @property
    def frame_times(self):
        return np.arange(self.n_frames) / self.frame_rate

    @property
    def px_per_degree(self):
        return BAND_SHIFT_PER_DEGREE * self.image_height

    @property
    def meta(self):
        return {"configuration": self.configuration.id,
                "speed": self.speed.name.lower(), "seed": int(self.seed)}


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def flexion_at(spec: SessionSpec, t) -> np.ndarray:
    """Flexion ``(len(t), 4)`` in degrees at arbitrary session times."""
    t = np.asarray(t, dtype=float).reshape(-1)
    period = spec.speed.cycle_period
    n_cycles = int(math.ceil(spec.duration / period)) + 1
    jitter = _rng(spec.seed, _KEY_JITTER).uniform(-JITTER, JITTER, (n_cycles, 4))
    cycle = np.clip(np.floor(t / period).astype(int), 0, n_cycles - 1)
    amp = np.asarray(spec.configuration.amplitudes, dtype=float) * (1 + jitter[cycle])
    phase = 0.5 * (1 - np.cos(2 * np.pi * t / period))
    return np.minimum(amp * phase[:, None], MAX_FLEXION)


def trajectory(spec: SessionSpec) -> AngleStream:
    """Ground-truth flexion at every ultrasound frame time.

    Each finger follows ``A * (1 - cos(2 pi t / T)) / 2`` with ``T`` the
    rest->flex->rest period (two cue switches) and ``A`` the configuration's
    amplitude scaled by a per-cycle factor in ``1 +- 0.05``.
    """
    t = spec.frame_times
    flex = flexion_at(spec, t)
    return AngleStream(t, flex, np.zeros_like(flex, dtype=bool))


@dataclass(frozen=True)
class UltrasoundFrame:
    pixels: np.ndarray
    frame_index: int
    meta: Mapping = field(default_factory=dict)

    @property
    def shape(self):
        return self.pixels.shape


def _gauss(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def render(flexion, spec: SessionSpec, rng=None) -> np.ndarray:
    """Render one frame's pixels (float32, values in [0, 1])."""
    flexion = np.asarray(flexion, dtype=float).reshape(4)
    h, w = spec.image_height, spec.image_width
    rows = np.arange(h, dtype=float)
    cols = np.arange(w, dtype=float)
    quad = w / 4.0
    img = np.full((h, w), BACKGROUND)
    for j in range(4):
        center = BAND_REST_ROW * h + spec.px_per_degree * flexion[j]
        sigma = BAND_SIGMA * h * (1 - BAND_SIGMA_SPAN
                                  + 2 * BAND_SIGMA_SPAN * flexion[j] / MAX_FLEXION)
        vert = _gauss(rows, center, sigma)
        horiz = _gauss(cols, (j + 0.5) * quad - 0.5, BAND_SIGMA_COLS * quad)
        img += BAND_PEAK * np.outer(vert, horiz)
    cfg = spec.configuration
    if cfg.id in CLASS_IDS:
        slot = w / len(CLASS_IDS)
        k = CLASS_IDS.index(cfg.id)
        img += SIGNATURE_PEAK * np.outer(
            _gauss(rows, SIGNATURE_ROW * h, SIGNATURE_SIGMA * h),
            _gauss(cols, (k + 0.5) * slot - 0.5, 0.3 * slot))
    if spec.noise_level > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_level > 0")
        speckle = rng.standard_exponential((h, w))
        img *= (1 - spec.noise_level) + spec.noise_level * speckle
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def forward_model(angles, spec: SessionSpec, rng=None, frame_index=0) -> UltrasoundFrame:
    """Synthetic B-mode-like frame for one hand posture.

    Parameters
    ----------
    angles : McpAngles or array_like, shape (4,)
        Flexion in degrees, each within [0, 100].
    spec : SessionSpec
        Supplies image size, noise level and configuration signature.
    rng : numpy.random.Generator, optional
        Speckle source; required when ``spec.noise_level > 0``.
    """
    flex = angles.flexion if isinstance(angles, McpAngles) else angles
    flex = np.asarray(flex, dtype=float)
    if not ((flex >= 0) & (flex <= MAX_FLEXION)).all():
        raise ValueError("flexion must lie in [0, 100] degrees")
    return UltrasoundFrame(render(flex, spec, rng), int(frame_index), spec.meta)


class FrameStack(Sequence):
    """Read-only sequence of :class:`UltrasoundFrame` of a single size."""

    meta: Mapping = {}

    @property
    def frame_shape(self):
        raise NotImplementedError

    def pixels(self, i) -> np.ndarray:
        raise NotImplementedError

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return UltrasoundFrame(self.pixels(i), i, self.meta)

    def array(self, indices=None) -> np.ndarray:
        idx = range(len(self)) if indices is None else indices
        idx = list(idx)
        out = np.empty((len(idx),) + tuple(self.frame_shape), dtype=np.float32)
        for n, k in enumerate(idx):
            out[n] = self.pixels(int(k))
        return out


class RenderedFrames(FrameStack):
    """Frames rendered on demand from the session's flexion trajectory."""

    def __init__(self, spec: SessionSpec, flexion):
        self.spec = spec
        self.flexion = np.asarray(flexion, dtype=float)
        self.meta = spec.meta

    def __len__(self):
        return self.flexion.shape[0]

    @property
    def frame_shape(self):
        return (self.spec.image_height, self.spec.image_width)

    def pixels(self, i):
        rng = _rng(self.spec.seed, _KEY_FRAME, int(i))
        return render(self.flexion[i], self.spec, rng)


class FrameArray(FrameStack):
    def __init__(self, data, meta=None):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ValueError("frame array must be (n, height, width)")
        self.data = data
        self.meta = dict(meta or {})

    def __len__(self):
        return self.data.shape[0]

    @property
    def frame_shape(self):
        return self.data.shape[1:]

    def pixels(self, i):
        return np.asarray(self.data[i])

    def array(self, indices=None):
        if indices is None:
            return np.asarray(self.data, dtype=np.float32)
        return np.asarray(self.data[np.asarray(list(indices), dtype=int)],
                          dtype=np.float32)


@dataclass(frozen=True)
class Session:
    spec: SessionSpec
    frames: FrameStack
    angles: AngleStream
    triggers: TriggerStream
    mocap: MarkerStream

    def __post_init__(self):
        n = len(self.frames)
        if not (len(self.angles) == len(self.triggers) == n):
            raise DataError("frames, angles and triggers differ in length")

    def __len__(self):
        return len(self.frames)


# hand model, mm: knuckle positions and marker offsets along the bones
_KNUCKLE_Z = np.array([-27.0, -9.0, 9.0, 27.0])
_METACARPAL = (5.0, 60.0)  # M1, M2 distance proximal of the knuckle
_PHALANX = (6.0, 40.0)  # P1, P2 distance distal of the knuckle
_OCCLUSION_RATE = 0.2  # gaps per second
_OCCLUSION_MAX = 2  # frames


def _random_rotation(rng):
    q = rng.standard_normal(4)
    a, b, c, d = q / np.linalg.norm(q)
    return np.array([
        [a*a + b*b - c*c - d*d, 2*(b*c - a*d), 2*(b*d + a*c)],
        [2*(b*c + a*d), a*a - b*b + c*c - d*d, 2*(c*d - a*b)],
        [2*(b*d - a*c), 2*(c*d + a*b), a*a - b*b - c*c + d*d]])


def marker_positions(flexion, rotation=None, offset=None):
    """Marker coordinates ``(n, 4, 4, 3)`` for flexion ``(n, 4)`` degrees.

    In hand coordinates the metacarpals point along +x towards the knuckles
    and fingers flex towards -y; ``M1 -> M2`` runs proximal, ``P1 -> P2``
    runs from the distal phalanx marker back to the knuckle, so an extended
    finger gives anti-parallel vectors.
    """
    flex = np.radians(np.asarray(flexion, dtype=float).reshape(-1, 4))
    n = flex.shape[0]
    pos = np.zeros((n, 4, 4, 3))
    pos[..., 2] = _KNUCKLE_Z[None, :, None]
    pos[:, :, 0, 0] = -_METACARPAL[0]
    pos[:, :, 1, 0] = -_METACARPAL[1]
    ux, uy = np.cos(flex), -np.sin(flex)
    for m, dist in ((2, _PHALANX[0]), (3, _PHALANX[1])):
        pos[:, :, m, 0] = dist * ux
        pos[:, :, m, 1] = dist * uy
    if rotation is not None:
        pos = pos @ np.asarray(rotation).T
    if offset is not None:
        pos = pos + np.asarray(offset)
    return pos


def synthesize_mocap(spec: SessionSpec) -> MarkerStream:
    """Marker stream at ``spec.mocap_rate`` with brief seeded occlusions."""
    t = np.arange(spec.n_mocap) / spec.mocap_rate
    pose = _rng(spec.seed, _KEY_POSE)
    pos = marker_positions(flexion_at(spec, t), _random_rotation(pose),
                           pose.uniform(-200, 200, 3))
    occ = np.zeros(pos.shape[:3], dtype=bool)
    rng = _rng(spec.seed, _KEY_OCCLUSION)
    n_gaps = rng.poisson(_OCCLUSION_RATE * spec.duration)
    for _ in range(n_gaps):
        start = rng.integers(1, max(2, t.size - _OCCLUSION_MAX - 1))
        length = rng.integers(1, _OCCLUSION_MAX + 1)
        occ[start:start + length, rng.integers(4), rng.integers(4)] = True
    pos = np.where(occ[..., None], np.nan, pos)
    return MarkerStream(t, pos, occ)


def generate_session(spec: SessionSpec) -> Session:
    """Assemble trajectory, lazily rendered frames, mocap and triggers."""
    angles = trajectory(spec)
    triggers = TriggerStream(spec.frame_times + spec.bridge_latency,
                             np.arange(spec.n_frames))
    return Session(spec, RenderedFrames(spec, angles.flexion), angles,
                   triggers, synthesize_mocap(spec))


def _spec_meta(spec: SessionSpec):
    return {
        "configuration": spec.configuration.id,
        "speed": spec.speed.name.lower(),
        "seed": int(spec.seed),
        "duration": repr(float(spec.duration)),
        "frame_rate": repr(float(spec.frame_rate)),
        "image_height": spec.image_height,
        "image_width": spec.image_width,
        "noise_level": repr(float(spec.noise_level)),
        "mocap_rate": repr(float(spec.mocap_rate)),
        "bridge_latency": repr(float(spec.bridge_latency)),
    }


def write_session(session: Session, directory, chunk=64) -> Path:
    """Serialize a session; identical sessions give identical bytes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(session)
    fh, fw = session.frames.frame_shape
    meta = {"format": SESSION_FORMAT, "version": SESSION_VERSION}
    meta.update(_spec_meta(session.spec))
    meta.update(n_frames=n, frame_height=fh, frame_width=fw,
                n_mocap=len(session.mocap), dtype="<f4")
    (directory / "meta.txt").write_text(
        "".join(f"{k}={v}\n" for k, v in meta.items()))
    with open(directory / "frames.f32", "wb") as f:
        for lo in range(0, n, chunk):
            block = session.frames.array(range(lo, min(n, lo + chunk)))
            f.write(block.astype("<f4").tobytes())
    (directory / "angles.txt").write_text(session.angles.to_text())
    (directory / "mocap.txt").write_text(session.mocap.to_text())
    (directory / "triggers.txt").write_text(session.triggers.to_text())
    return directory


def read_meta(directory) -> dict:
    path = Path(directory) / "meta.txt"
    if not path.exists():
        raise DataError(f"no session metadata at {path}")
    meta = {}
    for line in path.read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    if meta.get("format") != SESSION_FORMAT:
        raise DataError(f"{path} is not a session header")
    if int(meta.get("version", -1)) != SESSION_VERSION:
        raise DataError(f"unsupported session version {meta.get('version')}")
    return meta


def read_session(directory, mmap=True) -> Session:
    directory = Path(directory)
    meta = read_meta(directory)
    spec = SessionSpec(
        configuration=meta["configuration"], speed=meta["speed"],
        duration=float(meta["duration"]), frame_rate=float(meta["frame_rate"]),
        image_height=int(meta["image_height"]),
        image_width=int(meta["image_width"]), seed=int(meta["seed"]),
        noise_level=float(meta["noise_level"]),
        mocap_rate=float(meta["mocap_rate"]),
        bridge_latency=float(meta["bridge_latency"]))
    n, fh, fw = (int(meta[k]) for k in ("n_frames", "frame_height", "frame_width"))
    path = directory / "frames.f32"
    if path.stat().st_size != 4 * n * fh * fw:
        raise DataError(f"{path}: size does not match {n} x {fh} x {fw} float32")
    if n == 0:
        data = np.zeros((0, fh, fw), dtype="<f4")
    elif mmap:
        data = np.memmap(path, dtype="<f4", mode="r", shape=(n, fh, fw))
    else:
        data = np.fromfile(path, dtype="<f4").reshape(n, fh, fw)
    return Session(
        spec, FrameArray(data, spec.meta),
        AngleStream.from_text((directory / "angles.txt").read_text()),
        TriggerStream.from_text((directory / "triggers.txt").read_text()),
        MarkerStream.from_text((directory / "mocap.txt").read_text()))


def with_overrides(spec: SessionSpec, **kw) -> SessionSpec:
    return replace(spec, **kw)
