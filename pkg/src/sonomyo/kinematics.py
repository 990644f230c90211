"""
Ground-truth MCP joint angles from hand motion-capture markers.

Each of the index, middle, ring and pinky fingers carries four markers: M1 and
M2 on the metacarpal, P1 and P2 on the proximal phalanx. The flexion angle is
derived from the dot product of the two marker vectors M1->M2 and P1->P2.
With the hand fully extended the two vectors are anti-parallel (the 180 degree
"display" posture); flexing the proximal phalanx by theta degrees turns the
display angle to 180 + theta.

Marker streams are sampled by the motion-capture clock, ultrasound frames by
the scanner's trigger clock; :func:`align_to_frames` resamples one onto the
other by nearest timestamp.

Columnar text layout
--------------------
Marker stream (``MarkerStream.to_text``), one row per frame, whitespace
separated, ``#`` header lines::

    timestamp
    index_M1_x index_M1_y index_M1_z index_M2_x ... pinky_P2_z   (48 columns)
    index_M1_occ index_M2_occ ... pinky_P2_occ                   (16 columns, 0/1)

Fingers are ordered index, middle, ring, pinky; markers M1, M2, P1, P2; axes
x, y, z. Coordinates are millimetres and written with 17 significant digits so
a round trip is exact. Occluded markers are written as ``nan``.

Angle stream (``AngleStream.to_text``)::

    timestamp index middle ring pinky index_sat middle_sat ring_sat pinky_sat

with flexion in degrees and saturation flags as 0/1.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateVector, OutOfRange, UnrecoverableOcclusion

FINGERS = ("index", "middle", "ring", "pinky")
MARKERS = ("M1", "M2", "P1", "P2")
AXES = ("x", "y", "z")

MAX_FLEXION = 100.0
DISPLAY_OFFSET = 180.0
# occlusion gaps longer than this are not interpolated
MAX_GAP_FRAMES = 5
_TIE_TOL = 1e-9


def _fmt(x):
    return repr(float(x)) if np.isfinite(x) else "nan"


@dataclass(frozen=True)
class McpAngles:
    """Flexion of the four MCP joints, in degrees.

    ``flexion`` is ordered index, middle, ring, pinky. ``saturated`` marks
    fingers whose measured flexion exceeded :data:`MAX_FLEXION` and was
    clamped.
    """

    flexion: np.ndarray
    saturated: np.ndarray

    @classmethod
    def from_flexion(cls, flexion):
        flexion = np.asarray(flexion, dtype=float).reshape(4)
        saturated = flexion > MAX_FLEXION
        return cls(np.clip(flexion, 0.0, MAX_FLEXION), saturated)

    @property
    def display_angle(self):
        return self.flexion + DISPLAY_OFFSET

    def __getitem__(self, finger):
        return float(self.flexion[FINGERS.index(finger)])


@dataclass(frozen=True)
class MarkerFrame:
    timestamp: float
    positions: np.ndarray  # (4 fingers, 4 markers, 3)
    occluded: np.ndarray  # (4, 4) bool

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        occ = np.asarray(self.occluded, dtype=bool)
        if pos.shape != (4, 4, 3) or occ.shape != (4, 4):
            raise ValueError("a marker frame holds exactly 16 markers")
        if not np.isfinite(pos[~occ]).all():
            raise ValueError("non-occluded marker with non-finite position")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "occluded", occ)


@dataclass(frozen=True)
class MarkerStream:
    """A motion-capture recording stored as stacked arrays."""

    timestamps: np.ndarray  # (n,)
    positions: np.ndarray  # (n, 4, 4, 3)
    occluded: np.ndarray  # (n, 4, 4)

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        pos = np.asarray(self.positions, dtype=float)
        occ = np.asarray(self.occluded, dtype=bool)
        n = t.size
        if pos.shape != (n, 4, 4, 3) or occ.shape != (n, 4, 4):
            raise ValueError(
                f"inconsistent marker stream shapes {pos.shape}, {occ.shape} "
                f"for {n} timestamps")
        if n > 1 and not (np.diff(t) > 0).all():
            raise ValueError("marker timestamps must strictly increase")
        if not np.isfinite(pos[~occ]).all():
            raise ValueError("non-occluded marker with non-finite position")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "occluded", occ)

    @classmethod
    def from_frames(cls, frames: Iterable[MarkerFrame]):
        frames = list(frames)
        if not frames:
            return cls(np.zeros(0), np.zeros((0, 4, 4, 3)),
                       np.zeros((0, 4, 4), dtype=bool))
        return cls(np.array([f.timestamp for f in frames]),
                   np.stack([f.positions for f in frames]),
                   np.stack([f.occluded for f in frames]))

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, i):
        return MarkerFrame(float(self.timestamps[i]), self.positions[i],
                           self.occluded[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def to_text(self):
        header = ["timestamp"]
        header += [f"{f}_{m}_{a}" for f in FINGERS for m in MARKERS for a in AXES]
        header += [f"{f}_{m}_occ" for f in FINGERS for m in MARKERS]
        out = io.StringIO()
        out.write("# marker stream: mm, 16 markers, occlusion bits\n")
        out.write("# " + " ".join(header) + "\n")
        pos = self.positions.reshape(len(self), 48)
        occ = self.occluded.reshape(len(self), 16)
        for t, p, o in zip(self.timestamps, pos, occ):
            cols = [_fmt(t)] + [_fmt(v) for v in p] + [str(int(b)) for b in o]
            out.write(" ".join(cols) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text):
        data = np.loadtxt(io.StringIO(text), comments="#", ndmin=2)
        if data.size == 0:
            data = data.reshape(0, 65)
        if data.shape[1] != 65:
            raise ValueError(f"expected 65 columns, got {data.shape[1]}")
        n = data.shape[0]
        return cls(data[:, 0], data[:, 1:49].reshape(n, 4, 4, 3),
                   data[:, 49:].reshape(n, 4, 4).astype(bool))


@dataclass(frozen=True)
class AngleStream:
    """Timestamped MCP flexion samples, ``(n, 4)`` degrees.

    Frames invalidated by long marker occlusions hold ``nan``.
    """

    timestamps: np.ndarray
    flexion: np.ndarray
    saturated: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        flex = np.asarray(self.flexion, dtype=float).reshape(t.size, 4)
        sat = np.asarray(self.saturated, dtype=bool).reshape(t.size, 4)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "flexion", flex)
        object.__setattr__(self, "saturated", sat)

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, i):
        return float(self.timestamps[i]), McpAngles(self.flexion[i],
                                                    self.saturated[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def display_angle(self):
        return self.flexion + DISPLAY_OFFSET

    @property
    def valid(self):
        return np.isfinite(self.flexion).all(axis=1)

    def to_text(self):
        out = io.StringIO()
        out.write("# MCP flexion, degrees; saturation bits\n")
        out.write("# timestamp " + " ".join(FINGERS) + " "
                  + " ".join(f"{f}_sat" for f in FINGERS) + "\n")
        for t, a, s in zip(self.timestamps, self.flexion, self.saturated):
            cols = [_fmt(t)] + [_fmt(v) for v in a] + [str(int(b)) for b in s]
            out.write(" ".join(cols) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text):
        data = np.loadtxt(io.StringIO(text), comments="#", ndmin=2)
        if data.size == 0:
            data = data.reshape(0, 9)
        return cls(data[:, 0], data[:, 1:5], data[:, 5:9].astype(bool))


@dataclass(frozen=True)
class TriggerEvent:
    timestamp: float
    frame_index: int


@dataclass(frozen=True)
class TriggerStream:
    """Frame triggers as seen on the motion-capture (master) clock."""

    timestamps: np.ndarray
    frame_index: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        k = np.asarray(self.frame_index, dtype=np.int64).reshape(-1)
        if t.shape != k.shape:
            raise ValueError("timestamps and frame indices differ in length")
        if t.size > 1 and not ((np.diff(t) > 0).all() and (np.diff(k) > 0).all()):
            raise ValueError("frame_index must strictly increase with timestamp")
        if (k < 0).any():
            raise ValueError("negative frame index")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "frame_index", k)

    @classmethod
    def from_events(cls, events: Iterable[TriggerEvent]):
        events = list(events)
        return cls([e.timestamp for e in events], [e.frame_index for e in events])

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, i):
        return TriggerEvent(float(self.timestamps[i]), int(self.frame_index[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def to_text(self):
        out = io.StringIO()
        out.write("# timestamp frame_index\n")
        for t, k in zip(self.timestamps, self.frame_index):
            out.write(f"{_fmt(t)} {int(k)}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text):
        data = np.loadtxt(io.StringIO(text), comments="#", ndmin=2)
        if data.size == 0:
            data = data.reshape(0, 2)
        return cls(data[:, 0], data[:, 1].astype(np.int64))


def _flexion(mvec, pvec):
    """Raw flexion in degrees for stacked vector pairs, shape ``(..., 3)``.

    Same angle as ``arccos`` of the normalized dot product, computed with
    ``atan2(|a x b|, a . b)`` which stays accurate near 0 and 180 degrees.
    """
    dot = np.einsum("...i,...i->...", mvec, pvec)
    cross = np.linalg.norm(np.cross(mvec, pvec), axis=-1)
    between = np.degrees(np.arctan2(cross, dot))
    return np.clip(DISPLAY_OFFSET - between, 0.0, 180.0)


def mcp_angle(m1, m2, p1, p2, finger="index"):
    """MCP flexion from the four markers of one finger.

    Parameters
    ----------
    m1, m2 : array_like, shape (3,)
        Metacarpal markers; the metacarpal vector is ``m2 - m1``.
    p1, p2 : array_like, shape (3,)
        Proximal phalanx markers; the phalanx vector is ``p2 - p1``.
    finger : str
        Only used to label errors.

    Returns
    -------
    float
        ``180 - angle(m2 - m1, p2 - p1)`` in degrees, within [0, 180]. Full
        extension (anti-parallel vectors) gives 0.
    """
    m1, m2, p1, p2 = (np.asarray(v, dtype=float) for v in (m1, m2, p1, p2))
    mvec, pvec = m2 - m1, p2 - p1
    if not all(np.isfinite(v).all() for v in (mvec, pvec)):
        raise ValueError(f"non-finite marker position for finger {finger!r}")
    if not np.linalg.norm(mvec) > 0:
        raise DegenerateVector(finger, "metacarpal vector")
    if not np.linalg.norm(pvec) > 0:
        raise DegenerateVector(finger, "phalanx vector")
    return float(_flexion(mvec, pvec))


def _fill_gaps(t, values, valid, finger):
    if not valid.any():
        raise UnrecoverableOcclusion(finger)
    out = np.where(valid, values, np.nan)
    bad = np.flatnonzero(~valid)
    if bad.size == 0:
        return out
    # split invalid indices into contiguous runs
    runs = np.split(bad, np.flatnonzero(np.diff(bad) > 1) + 1)
    for run in runs:
        lo, hi = run[0] - 1, run[-1] + 1
        if lo < 0 or hi >= t.size or run.size > MAX_GAP_FRAMES:
            continue
        out[run] = np.interp(t[run], [t[lo], t[hi]], [values[lo], values[hi]])
    return out


def angles_from_stream(frames: MarkerStream | Sequence[MarkerFrame]) -> AngleStream:
    """Per-frame MCP flexion for all four fingers of a marker stream.

    Frames where any of a finger's markers is occluded are filled by linear
    interpolation in time when the gap spans at most :data:`MAX_GAP_FRAMES`
    frames and is bracketed on both sides; otherwise that finger is ``nan``
    for the gap. Flexion above :data:`MAX_FLEXION` is clamped and flagged.
    """
    if not isinstance(frames, MarkerStream):
        frames = MarkerStream.from_frames(frames)
    if len(frames) == 0:
        raise ValueError("empty marker stream")
    pos = frames.positions
    mvec = pos[:, :, 1] - pos[:, :, 0]
    pvec = pos[:, :, 3] - pos[:, :, 2]
    finger_ok = ~frames.occluded.any(axis=2)  # (n, 4)
    for j, name in enumerate(FINGERS):
        ok = finger_ok[:, j]
        if ok.any():
            if not (np.linalg.norm(mvec[ok, j], axis=-1) > 0).all():
                raise DegenerateVector(name, "metacarpal vector")
            if not (np.linalg.norm(pvec[ok, j], axis=-1) > 0).all():
                raise DegenerateVector(name, "phalanx vector")
    raw = _flexion(mvec, pvec)
    flex = np.empty_like(raw)
    for j, name in enumerate(FINGERS):
        flex[:, j] = _fill_gaps(frames.timestamps, raw[:, j], finger_ok[:, j], name)
    saturated = np.nan_to_num(flex, nan=0.0) > MAX_FLEXION
    flex = np.where(saturated, MAX_FLEXION, flex)
    return AngleStream(frames.timestamps, flex, saturated)


def align_to_frames(triggers: TriggerStream | Sequence[TriggerEvent],
                    mocap: AngleStream) -> AngleStream:
    """Resample mocap angles at the ultrasound trigger times.

    Each trigger takes the mocap sample with the nearest timestamp, the
    earlier one on a tie. The returned stream carries the trigger timestamps.
    """
    if not isinstance(triggers, TriggerStream):
        triggers = TriggerStream.from_events(triggers)
    if len(triggers) == 0:
        raise ValueError("no triggers to align")
    mt = mocap.timestamps
    tt = triggers.timestamps
    if len(mocap) == 0:
        raise OutOfRange(int(triggers.frame_index[0]), float(tt[0]))
    outside = (tt < mt[0] - _TIE_TOL) | (tt > mt[-1] + _TIE_TOL)
    if outside.any():
        k = int(np.flatnonzero(outside)[0])
        raise OutOfRange(int(triggers.frame_index[k]), float(tt[k]))
    right = np.clip(np.searchsorted(mt, tt, side="left"), 0, mt.size - 1)
    left = np.clip(right - 1, 0, mt.size - 1)
    d_left = np.abs(tt - mt[left])
    d_right = np.abs(mt[right] - tt)
    pick = np.where(d_right < d_left - _TIE_TOL, right, left)
    return AngleStream(tt, mocap.flexion[pick], mocap.saturated[pick])
