"""
Combined frame-by-frame predictor: SVC configuration -> per-configuration CNN.

For every incoming frame the pipeline preprocesses it for the classifier,
predicts the hand configuration, picks that configuration's CNN from the
bundle and predicts the four MCP flexion angles. Each stage is timed with
:func:`time.perf_counter`. Frames are handled independently; nothing is
carried from one frame to the next.

Bundle directory layout
-----------------------
``bundle.txt``
    ``key=value`` lines: ``format=sonomyo-bundle``, ``version=1``,
    ``classes=C1,C2,...``, and the two preprocessing configs as
    ``svc.target_height``, ``svc.target_width``, ``svc.log_dynamic_range``,
    ``cnn.target_height``, ``cnn.target_width``, ``cnn.log_dynamic_range``.
``svc.model``
    :class:`~sonomyo.svc.SvcModel` file.
``cnn_<configuration>.model``
    One :class:`~sonomyo.cnn.CnnModel` file per SVC class.

Result stream
-------------
:func:`write_results` writes one JSON object per line with keys
``frame_index``, ``configuration``, ``flexion`` (4 floats), ``svc_seconds``,
``cnn_seconds``, ``total_seconds`` and, when known, ``true_configuration``
and ``true_flexion``. The summary is ``key=value`` text.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import cnn as cnn_mod
from .errors import BundleError, CoverageGap, MissingModelFile
from .kinematics import FINGERS, McpAngles
from .metrics import accuracy, kv_text, rmse
from .preprocess import PreprocessConfig, preprocess_array
from .svc import SvcModel

BUNDLE_FORMAT = "sonomyo-bundle"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    svc: SvcModel
    cnn_by_configuration: dict
    svc_preprocess: PreprocessConfig
    cnn_preprocess: PreprocessConfig

    def __post_init__(self):
        for c in self.svc.classes:
            if c not in self.cnn_by_configuration:
                raise CoverageGap(c)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION,
                "classes": ",".join(self.svc.classes)}
        for prefix, cfg in (("svc", self.svc_preprocess), ("cnn", self.cnn_preprocess)):
            meta[f"{prefix}.target_height"] = cfg.target_height
            meta[f"{prefix}.target_width"] = cfg.target_width
            meta[f"{prefix}.log_dynamic_range"] = repr(float(cfg.log_dynamic_range))
        (directory / "bundle.txt").write_text(kv_text(meta))
        self.svc.save(directory / "svc.model")
        for c in self.svc.classes:
            self.cnn_by_configuration[c].save(directory / f"cnn_{c}.model")
        return directory


def _read_kv(path):
    out = {}
    for line in path.read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def load_bundle(directory) -> ModelBundle:
    """Load and validate a saved bundle.

    Raises
    ------
    MissingModelFile
        ``bundle.txt`` or ``svc.model`` is absent.
    CoverageGap
        A class the SVC can emit has no CNN file.
    ModelFormatError
        A model file has bad magic bytes, an unknown version or is truncated.
    """
    directory = Path(directory)
    header = directory / "bundle.txt"
    if not header.exists():
        raise MissingModelFile(header)
    meta = _read_kv(header)
    if meta.get("format") != BUNDLE_FORMAT or meta.get("version") != str(BUNDLE_VERSION):
        raise BundleError(f"{header}: unsupported bundle header")

    def cfg(prefix):
        return PreprocessConfig(int(meta[f"{prefix}.target_height"]),
                                int(meta[f"{prefix}.target_width"]),
                                float(meta[f"{prefix}.log_dynamic_range"]))

    svc_path = directory / "svc.model"
    if not svc_path.exists():
        raise MissingModelFile(svc_path)
    svc = SvcModel.load(svc_path)
    if ",".join(svc.classes) != meta.get("classes"):
        raise BundleError("bundle header and SVC model disagree on classes")
    cnn_cfg = cfg("cnn")
    expected = None
    models = {}
    for c in svc.classes:
        path = directory / f"cnn_{c}.model"
        if not path.exists():
            raise CoverageGap(c)
        models[c] = cnn_mod.CnnModel.load(path, expected)
        expected = models[c].descriptor
        if models[c].input_shape[1:] != cnn_cfg.target_shape:
            raise BundleError(f"cnn_{c}.model input does not match the CNN preprocessing")
    return ModelBundle(svc, models, cfg("svc"), cnn_cfg)


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    configuration: str
    angles: McpAngles
    svc_seconds: float
    cnn_seconds: float
    total_seconds: float
    true_configuration: str | None = None
    true_angles: np.ndarray | None = None

    def to_record(self):
        rec = {"frame_index": self.frame_index,
               "configuration": self.configuration,
               "flexion": [float(v) for v in self.angles.flexion],
               "svc_seconds": self.svc_seconds,
               "cnn_seconds": self.cnn_seconds,
               "total_seconds": self.total_seconds}
        if self.true_configuration is not None:
            rec["true_configuration"] = self.true_configuration
        if self.true_angles is not None:
            rec["true_flexion"] = [float(v) for v in self.true_angles]
        return rec


@dataclass
class PipelineSummary:
    n_frames: int = 0
    svc_seconds: dict = field(default_factory=dict)  # mean / min / max
    cnn_seconds: dict = field(default_factory=dict)
    total_seconds: dict = field(default_factory=dict)
    throughput_hz: float = 0.0
    accuracy: float | None = None
    rmse_by_finger: dict = field(default_factory=dict)

    def to_kv(self):
        out = {"n_frames": self.n_frames, "throughput_hz": repr(self.throughput_hz)}
        for name in ("svc_seconds", "cnn_seconds", "total_seconds"):
            for stat, v in getattr(self, name).items():
                out[f"{name}.{stat}"] = repr(v)
        if self.accuracy is not None:
            out["accuracy"] = repr(self.accuracy)
        for finger, v in self.rmse_by_finger.items():
            out[f"rmse.{finger}"] = repr(v)
        return kv_text(out)


def _stats(values):
    return {"mean": float(np.mean(values)), "min": float(np.min(values)),
            "max": float(np.max(values))}


def process_frame(bundle: ModelBundle, pixels, frame_index=0):
    """Run both stages on one raw frame; returns a :class:`FrameResult`."""
    start = time.perf_counter()
    features = preprocess_array(pixels, bundle.svc_preprocess).reshape(-1)
    scores = bundle.svc.decision_function(features)
    config = bundle.svc.classes[int(np.argmax(scores))]
    mid = time.perf_counter()
    try:
        model = bundle.cnn_by_configuration[config]
    except KeyError:
        raise CoverageGap(config) from None
    angles = cnn_mod.predict_angles(model, preprocess_array(pixels, bundle.cnn_preprocess))
    end = time.perf_counter()
    return FrameResult(int(frame_index), config, angles, mid - start,
                       end - mid, end - start)


def run_pipeline(bundle: ModelBundle, frames: Iterable, truth_configuration=None,
                 truth_angles=None):
    """Process a stream of raw frames one at a time.

    Parameters
    ----------
    bundle : ModelBundle
    frames : iterable of UltrasoundFrame or 2-D arrays
    truth_configuration : str or sequence of str, optional
        Known configuration, one for all frames or one per frame.
    truth_angles : ndarray, shape (n, 4), optional
        Known flexion per frame.

    Returns
    -------
    results : list of FrameResult
    summary : PipelineSummary
    """
    results = []
    for k, frame in enumerate(frames):
        pixels = getattr(frame, "pixels", frame)
        index = getattr(frame, "frame_index", k)
        res = process_frame(bundle, np.asarray(pixels), index)
        true_cfg = truth_configuration
        if true_cfg is not None and not isinstance(true_cfg, str):
            true_cfg = true_cfg[k]
        true_ang = None if truth_angles is None else np.asarray(truth_angles[k], float)
        if true_cfg is not None or true_ang is not None:
            res = FrameResult(res.frame_index, res.configuration, res.angles,
                              res.svc_seconds, res.cnn_seconds, res.total_seconds,
                              true_cfg, true_ang)
        results.append(res)
    return results, summarize(results)


def summarize(results) -> PipelineSummary:
    if not results:
        return PipelineSummary()
    total = [r.total_seconds for r in results]
    summary = PipelineSummary(
        n_frames=len(results),
        svc_seconds=_stats([r.svc_seconds for r in results]),
        cnn_seconds=_stats([r.cnn_seconds for r in results]),
        total_seconds=_stats(total),
        throughput_hz=1.0 / float(np.mean(total)))
    if all(r.true_configuration is not None for r in results):
        summary.accuracy = accuracy([r.true_configuration for r in results],
                                    [r.configuration for r in results])
    if all(r.true_angles is not None for r in results):
        truth = np.array([r.true_angles for r in results])
        pred = np.array([r.angles.flexion for r in results])
        summary.rmse_by_finger = {f: rmse(truth[:, j], pred[:, j])
                                  for j, f in enumerate(FINGERS)}
    return summary


def write_results(results, path):
    with open(path, "w") as f:
        for r in results:
            f.write(json.dumps(r.to_record()) + "\n")


def read_results(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
