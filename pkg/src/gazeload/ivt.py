"""Velocity-threshold (I-VT) fixation detection and per-fixation features."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DataError, LengthMismatch, TooFewSamples

MERGE_MAX_ANGLE_DEG = 0.5
FIXATION_CSV_COLUMNS = (
    "start_us", "end_us", "duration_ms", "mean_pupil", "centroid_x", "centroid_y", "centroid_z",
)


class PointLabel(enum.IntEnum):
    FIXATION = 0
    SACCADE = 1
    INVALID = 2


@dataclass(frozen=True)
class IvtConfig:
    velocity_threshold_deg_s: float = 30.0
    min_fixation_ms: float = 60.0
    max_gap_ms: float = 75.0  # 0 disables merging

    def __post_init__(self):
        if not self.velocity_threshold_deg_s > 0 or not self.min_fixation_ms > 0:
            raise DataError("velocity threshold and minimum fixation duration must be positive")
        if self.max_gap_ms < 0:
            raise DataError("max_gap_ms must be >= 0")


@dataclass(frozen=True)
class FixationEvent:
    start_us: int
    end_us: int
    centroid_dir: tuple
    mean_pupil: float
    sample_range: tuple  # half-open (first, stop) sample indices

    @property
    def duration_ms(self):
        return (self.end_us - self.start_us) / 1000.0


def cyclopean_directions(session):
    """Normalised mean of both eyes; the valid eye alone if only one is; NaN if neither."""
    lv = session.left_valid[:, None]
    rv = session.right_valid[:, None]
    both = session.left_dir + session.right_dir
    d = np.where(lv & rv, both, np.where(lv, session.left_dir, np.where(rv, session.right_dir, np.nan)))
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = d / norm
    d[~np.isfinite(norm[:, 0]) | (norm[:, 0] == 0)] = np.nan
    return d


def angle_deg(a, b):
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dot))


def angular_velocity(session):
    """Sample-to-sample angular speed (deg/s) of the cyclopean gaze, length N-1.

    Steps touching a sample with no valid eye come out NaN.
    """
    if len(session) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(session)}")
    d = cyclopean_directions(session)
    dt = np.diff(session.timestamp_us) / 1e6
    return angle_deg(d[:-1], d[1:]) / dt


def classify_points(velocities, cfg=IvtConfig()):
    v = np.asarray(velocities, dtype=np.float64)
    if v.size == 0:
        return np.zeros(0, dtype=np.int8)
    lab = np.full(v.shape, PointLabel.INVALID, dtype=np.int8)
    fin = np.isfinite(v)
    lab[fin & (v < cfg.velocity_threshold_deg_s)] = PointLabel.FIXATION
    lab[fin & (v >= cfg.velocity_threshold_deg_s)] = PointLabel.SACCADE
    return np.append(lab, lab[-1])


def fixation_runs(labels):
    """(first, stop) pairs of maximal FIXATION runs."""
    fx = np.asarray(labels) == PointLabel.FIXATION
    edges = np.diff(np.concatenate([[0], fx.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


class _Candidate:
    __slots__ = ("first", "stop", "dir_sum", "pupil_sum", "pupil_n", "fallback_sum", "fallback_n")

    def __init__(self, first, stop, dirs, pupils):
        self.first, self.stop = first, stop
        seg = dirs[first:stop]
        self.dir_sum = np.nansum(seg, axis=0)
        (self.pupil_sum, self.pupil_n), (self.fallback_sum, self.fallback_n) = pupils(first, stop)

    def centroid(self):
        n = np.linalg.norm(self.dir_sum)
        return self.dir_sum / n if n > 0 else np.full(3, np.nan)

    def absorb(self, other):
        self.stop = other.stop
        self.dir_sum = self.dir_sum + other.dir_sum
        self.pupil_sum += other.pupil_sum
        self.pupil_n += other.pupil_n
        self.fallback_sum += other.fallback_sum
        self.fallback_n += other.fallback_n


def _pupil_accumulator(session, pupil):
    left, right = pupil if pupil is not None else (session.left_pupil_mm, session.right_pupil_mm)
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    lv = session.left_valid & np.isfinite(left)
    rv = session.right_valid & np.isfinite(right)
    lf, rf = np.isfinite(left), np.isfinite(right)

    def sums(first, stop):
        sl = slice(first, stop)
        valid = (float(left[sl][lv[sl]].sum() + right[sl][rv[sl]].sum()),
                 int(lv[sl].sum() + rv[sl].sum()))
        anyfin = (float(left[sl][lf[sl]].sum() + right[sl][rf[sl]].sum()),
                  int(lf[sl].sum() + rf[sl].sum()))
        return valid, anyfin

    return sums


def group_fixations(session, labels, cfg=IvtConfig(), pupil=None):
    """Turn per-sample labels into fixation events.

    Fixation runs are merged left to right while the gap to the next run is
    shorter than ``max_gap_ms`` and the centroids are within 0.5 degrees;
    merged events shorter than ``min_fixation_ms`` are dropped. ``pupil`` is
    the preprocessed ``(left, right)`` pair; raw millimetres otherwise.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != len(session):
        raise LengthMismatch(f"{labels.shape[0]} labels for {len(session)} samples")
    if pupil is not None and any(len(p) != len(session) for p in pupil):
        raise LengthMismatch("pupil channels do not match the session length")
    t = session.timestamp_us
    dirs = cyclopean_directions(session)
    pupils = _pupil_accumulator(session, pupil)

    merged = []
    for first, stop in fixation_runs(labels):
        cand = _Candidate(first, stop, dirs, pupils)
        if merged:
            prev = merged[-1]
            gap_ms = (t[first] - t[prev.stop - 1]) / 1000.0
            if gap_ms < cfg.max_gap_ms and angle_deg(prev.centroid(), cand.centroid()) < MERGE_MAX_ANGLE_DEG:
                prev.absorb(cand)
                continue
        merged.append(cand)

    events = []
    for c in merged:
        start_us, end_us = int(t[c.first]), int(t[c.stop - 1])
        if (end_us - start_us) / 1000.0 < cfg.min_fixation_ms:
            continue
        if c.pupil_n:
            mean_pupil = c.pupil_sum / c.pupil_n
        elif c.fallback_n:
            mean_pupil = c.fallback_sum / c.fallback_n
        else:
            mean_pupil = float("nan")
        events.append(FixationEvent(start_us, end_us, tuple(c.centroid().tolist()),
                                    mean_pupil, (c.first, c.stop)))
    return events


def detect_fixations(session, cfg=IvtConfig(), pupil=None):
    labels = classify_points(angular_velocity(session), cfg)
    return group_fixations(session, labels, cfg, pupil)


def fixation_features(events):
    """(k, 2) array of (duration_ms, mean_pupil) per event, order preserved."""
    if not events:
        return np.zeros((0, 2))
    return np.array([(e.duration_ms, e.mean_pupil) for e in events], dtype=np.float64)


def write_fixations_csv(events, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXATION_CSV_COLUMNS)
        for e in events:
            w.writerow([e.start_us, e.end_us, repr(e.duration_ms), repr(float(e.mean_pupil)),
                        *(repr(float(c)) for c in e.centroid_dir)])


def read_fixations_csv(path):
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            events.append(FixationEvent(
                int(row["start_us"]), int(row["end_us"]),
                (float(row["centroid_x"]), float(row["centroid_y"]), float(row["centroid_z"])),
                float(row["mean_pupil"]), (-1, -1),
            ))
    return events


class IVTFixationDetector(BaseEstimator):
    """I-VT detector with sklearn-style parameters.

    Stateless: ``fit`` only validates parameters. ``transform`` takes a list
    of sessions (and optionally their preprocessed pupil pairs) and returns a
    list of event lists.
    """

    def __init__(self, velocity_threshold_deg_s=30.0, min_fixation_ms=60.0, max_gap_ms=75.0):
        self.velocity_threshold_deg_s = velocity_threshold_deg_s
        self.min_fixation_ms = min_fixation_ms
        self.max_gap_ms = max_gap_ms

    @property
    def config(self):
        return IvtConfig(self.velocity_threshold_deg_s, self.min_fixation_ms, self.max_gap_ms)

    def fit(self, sessions=None, y=None):
        self.config_ = self.config
        return self

    def transform(self, sessions, pupils=None):
        cfg = self.config
        pupils = pupils if pupils is not None else [None] * len(sessions)
        return [detect_fixations(s, cfg, p) for s, p in zip(sessions, pupils)]

    def fit_transform(self, sessions, y=None, pupils=None):
        return self.fit(sessions).transform(sessions, pupils)
