"""Accuracy, confusion matrices and RMSE reports."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

FINGER_NAMES = ("index", "middle", "ring", "pinky")


def _paired(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def accuracy(y_true, y_pred) -> float:
    """Percentage of correct predictions.

    For a binary problem this is ``(TP + TN) / N * 100``; with several
    classes it is the overall correct rate.
    """
    y_true, y_pred = _paired(y_true, y_pred)
    return 100.0 * np.count_nonzero(y_true == y_pred) / y_true.size


def rmse(y, y_hat) -> float:
    y, y_hat = _paired(np.asarray(y, float), np.asarray(y_hat, float))
    d = y - y_hat
    scale = np.max(np.abs(d))
    if scale == 0:
        return 0.0
    # scaled so tiny or huge residuals neither underflow nor overflow
    return float(scale * np.sqrt(np.mean((d / scale) ** 2)))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    classes: tuple
    counts: np.ndarray

    @classmethod
    def from_labels(cls, y_true, y_pred, classes=None):
        y_true, y_pred = list(y_true), list(y_pred)
        if len(y_true) != len(y_pred):
            raise ValueError("length mismatch")
        if classes is None:
            classes = sorted(set(y_true) | set(y_pred), key=str)
        classes = tuple(classes)
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[index[t], index[p]] += 1
        return cls(classes, counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def correct(self):
        return int(np.trace(self.counts))

    def accuracy(self):
        if self.total == 0:
            raise ValueError("empty confusion matrix")
        return 100.0 * self.correct / self.total

    def to_csv(self):
        out = io.StringIO()
        out.write("true\\pred," + ",".join(map(str, self.classes)) + "\n")
        for c, row in zip(self.classes, self.counts):
            out.write(f"{c}," + ",".join(str(int(v)) for v in row) + "\n")
        return out.getvalue()

    def to_table(self):
        width = max(4, *(len(str(c)) for c in self.classes),
                    len(str(self.counts.max(initial=0))))
        head = " " * width + " " + " ".join(f"{c:>{width}}" for c in self.classes)
        lines = [head]
        for c, row in zip(self.classes, self.counts):
            lines.append(f"{c:>{width}} " + " ".join(f"{v:>{width}}" for v in row))
        return "\n".join(lines)


@dataclass(frozen=True)
class RmseCell:
    configuration: str
    speed: str
    seed: int
    finger: str
    rmse: float


@dataclass
class RmseReport:
    """Per-cell RMSE with the per-configuration and per-seed views.

    ``per_seed`` plays the role of the per-subject view: each generator seed
    stands in for one subject.
    """

    cells: list = field(default_factory=list)
    per_configuration: dict = field(default_factory=dict)
    per_seed: dict = field(default_factory=dict)
    grand_mean: float = float("nan")

    def to_text(self):
        lines = ["configuration speed seed finger rmse_deg"]
        for c in self.cells:
            lines.append(f"{c.configuration} {c.speed} {c.seed} {c.finger} "
                         f"{c.rmse:.4f}")
        lines.append("")
        lines.append("per-configuration mean RMSE (deg)")
        for k, v in self.per_configuration.items():
            lines.append(f"  {k:<6} {v:8.4f}")
        lines.append("per-seed mean RMSE (deg)")
        for k, v in self.per_seed.items():
            lines.append(f"  {k!s:<6} {v:8.4f}")
        lines.append(f"grand mean RMSE (deg) {self.grand_mean:.4f}")
        return "\n".join(lines) + "\n"

    def to_kv(self):
        out = [f"grand_mean={self.grand_mean!r}", f"n_cells={len(self.cells)}"]
        out += [f"configuration.{k}={v!r}" for k, v in self.per_configuration.items()]
        out += [f"seed.{k}={v!r}" for k, v in self.per_seed.items()]
        return "\n".join(out) + "\n"


def aggregate_rmse(cells: Sequence[RmseCell]) -> RmseReport:
    """Group per-(configuration, speed, seed, finger) RMSE values.

    Every aggregate is a plain mean of the cells that fall into it.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("no RMSE cells to aggregate")
    values = np.array([c.rmse for c in cells])
    if (values < 0).any() or not np.isfinite(values).all():
        raise ValueError("RMSE values must be finite and non-negative")

    def group(key):
        out = {}
        for c in cells:
            out.setdefault(key(c), []).append(c.rmse)
        return {k: float(np.mean(v)) for k, v in out.items()}

    return RmseReport(cells, group(lambda c: c.configuration),
                      group(lambda c: c.seed), float(values.mean()))


def kv_text(mapping: Mapping) -> str:
    return "".join(f"{k}={v}\n" for k, v in mapping.items())
