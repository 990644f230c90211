"""Dataset assembly and train/evaluate loops shared by the CLI and the demos."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cnn as cnn_mod
from .kinematics import FINGERS
from .metrics import RmseCell, rmse
from .pipeline import ModelBundle
from .preprocess import PreprocessConfig, preprocess_array
from .svc import train_svc, shuffled_split
from .synthgen import CLASS_IDS, Session, SessionSpec, generate_session


@dataclass(frozen=True)
class Grid:
    configurations: tuple = CLASS_IDS
    speeds: tuple = ("slow", "medium", "fast")
    seeds: tuple = (0,)
    generator: dict = field(default_factory=dict)  # SessionSpec overrides

    def specs(self):
        return [SessionSpec(c, s, seed=seed, **self.generator)
                for seed in self.seeds for c in self.configurations
                for s in self.speeds]


def cell_name(spec: SessionSpec):
    return f"{spec.configuration.id}_{spec.speed.name.lower()}_s{spec.seed}"


def session_features(session: Session, cfg: PreprocessConfig, chunk=256):
    """Preprocessed frames of a session, ``(n, h, w)`` float32."""
    n = len(session)
    out = np.empty((n,) + cfg.target_shape, dtype=np.float32)
    for lo in range(0, n, chunk):
        idx = range(lo, min(n, lo + chunk))
        out[lo:lo + len(idx)] = preprocess_array(session.frames.array(idx), cfg)
    return out


def svc_dataset(sessions, cfg: PreprocessConfig):
    """Flattened features and configuration labels for a list of sessions."""
    X, y = [], []
    for s in sessions:
        f = session_features(s, cfg)
        X.append(f.reshape(len(f), -1))
        y += [s.spec.configuration.id] * len(f)
    return np.concatenate(X), np.array(y, dtype=object)


def fit_svc(sessions, cfg: PreprocessConfig, lam=1e-4, epochs=20, seed=0,
            batch_size=64, test_split=0.3, classes=None):
    """Shuffle-split the combined sessions and train the classifier.

    Returns the model and the held-out ``(X_test, y_test)``.
    """
    X, y = svc_dataset(sessions, cfg)
    train, test = shuffled_split(len(y), test_split, seed)
    model = train_svc(X[train], y[train], lam=lam, epochs=epochs, seed=seed,
                      batch_size=batch_size, classes=classes, split=test_split)
    return model, (X[test], y[test])


def fit_cnn(session: Session, cfg: PreprocessConfig,
            train_cfg: cnn_mod.TrainConfig = cnn_mod.TrainConfig()):
    """Train one CNN on a session; returns ``(model, history, test RMSE per finger)``."""
    frames = session_features(session, cfg)
    angles = session.angles.flexion
    model, history = cnn_mod.train_cnn(frames, angles, train_cfg)
    _, _, test = cnn_mod.split_indices(len(frames), train_cfg)
    pred = np.clip(cnn_mod.predict_batch(model, frames[test]), 0.0, 100.0)
    errors = {f: rmse(angles[test, j], pred[:, j]) for j, f in enumerate(FINGERS)}
    return model, history, errors


def rmse_cells(spec: SessionSpec, errors):
    return [RmseCell(spec.configuration.id, spec.speed.name.lower(), int(spec.seed),
                     f, float(v)) for f, v in errors.items()]


def build_bundle(svc_model, cnn_models, svc_cfg, cnn_cfg) -> ModelBundle:
    return ModelBundle(svc_model, dict(cnn_models), svc_cfg, cnn_cfg)


def generate_all(specs):
    return [generate_session(s) for s in specs]
