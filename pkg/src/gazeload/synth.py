"""Synthetic gaze sessions with a controllable cognitive-load effect.

A session alternates fixations and saccades. High-load sessions get a larger
pupil and longer fixations, scaled by ``effect`` at cohort level so that
``effect=0`` produces label-independent data. Not an oculomotor model; the
point is known ground truth and tunable separability.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import GazeSession, SessionMeta
from .errors import DataError
from .ivt import FixationEvent

DRIFT_HZ = 0.2
MIN_FIXATION_MS = 80.0    # floor on drawn durations; keeps every one above 60 ms
TARGET_RANGE_DEG = 20.0   # fixation targets lie within +/- this yaw/pitch
MIN_SACCADE_DEG = 5.0
MAX_SACCADE_DEG = 15.0
JITTER_CLIP_DEG = 0.03    # per-axis offset bound; keeps steps well under 0.1 deg


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 120.0
    sampling_hz: float = 200.0
    cl_label: int = 0
    pupil_base_mm: float = 3.0
    pupil_cl_shift_mm: float = 0.5
    fixation_dur_mean_ms: float | None = None  # None: 250 low / 400 high
    saccade_dur_ms: float = 40.0
    noise_sd_mm: float = 0.05
    drift_amp_mm: float = 0.1
    fixation_dur_sigma: float = 0.3  # log-normal shape
    seed: int = 0
    participant_id: str = "P00"
    tlx_mental: int | None = None    # None: 2 low / 6 high

    def __post_init__(self):
        if self.cl_label not in (0, 1):
            raise DataError("cl_label must be 0 or 1")
        if not self.sampling_hz > 0 or not self.saccade_dur_ms > 0:
            raise DataError("sampling_hz and saccade_dur_ms must be positive")
        if self.fixation_dur_mean_ms is not None and not self.fixation_dur_mean_ms > 0:
            raise DataError("fixation_dur_mean_ms must be positive")

    @property
    def fixation_mean(self):
        if self.fixation_dur_mean_ms is not None:
            return self.fixation_dur_mean_ms
        return 400.0 if self.cl_label else 250.0


def _direction(yaw_deg, pitch_deg):
    y, p = np.radians(yaw_deg), np.radians(pitch_deg)
    return np.stack([np.cos(p) * np.sin(y), np.sin(p), np.cos(p) * np.cos(y)], axis=-1)


def _slerp(a, b, frac):
    omega = np.arccos(np.clip(a @ b, -1.0, 1.0))
    s = np.sin(omega)
    frac = np.asarray(frac)[:, None]
    return (np.sin((1 - frac) * omega) * a + np.sin(frac * omega) * b) / s


def _next_target(rng, yaw, pitch):
    while True:
        amp = rng.uniform(MIN_SACCADE_DEG, MAX_SACCADE_DEG)
        ang = rng.uniform(0, 2 * np.pi)
        ny, npch = yaw + amp * np.cos(ang), pitch + amp * np.sin(ang)
        if abs(ny) <= TARGET_RANGE_DEG and abs(npch) <= TARGET_RANGE_DEG:
            return ny, npch


def generate_session(cfg):
    """Return ``(session, ground_truth_fixations)``.

    Ground-truth events carry the raw mean pupil in millimetres.
    """
    if cfg.duration_s < 1:
        raise DataError("duration_s must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    hz = cfg.sampling_hz
    n = int(round(cfg.duration_s * hz))
    t_us = np.round(np.arange(n) * (1e6 / hz)).astype(np.int64)

    dirs = np.empty((n, 3))
    fixations = []  # (first, stop) sample ranges
    sac_n = max(1, int(round(cfg.saccade_dur_ms * hz / 1000.0)))
    min_n = int(np.ceil(MIN_FIXATION_MS * hz / 1000.0)) + 1
    mean = cfg.fixation_mean
    mu = np.log(mean) - cfg.fixation_dur_sigma ** 2 / 2
    yaw, pitch = rng.uniform(-10, 10), rng.uniform(-10, 10)
    i = 0
    while i < n:
        dur_ms = max(rng.lognormal(mu, cfg.fixation_dur_sigma), MIN_FIXATION_MS)
        fix_n = max(min_n, int(round(dur_ms * hz / 1000.0)) + 1)
        stop = min(n, i + fix_n)
        k = stop - i
        jitter = np.clip(rng.normal(0, JITTER_CLIP_DEG / 2, size=(k, 2)),
                         -JITTER_CLIP_DEG, JITTER_CLIP_DEG)
        dirs[i:stop] = _direction(yaw + jitter[:, 0], pitch + jitter[:, 1])
        if k >= min_n:
            fixations.append((i, stop))
        i = stop
        if i >= n:
            break
        ny, npch = _next_target(rng, yaw, pitch)
        a, b = _direction(yaw, pitch), _direction(ny, npch)
        s_stop = min(n, i + sac_n)
        frac = np.arange(1, s_stop - i + 1) / (sac_n + 1)
        dirs[i:s_stop] = _slerp(a, b, frac)
        i = s_stop
        yaw, pitch = ny, npch
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    level = cfg.pupil_base_mm + (cfg.pupil_cl_shift_mm if cfg.cl_label else 0.0)
    drift = cfg.drift_amp_mm * np.sin(2 * np.pi * DRIFT_HZ * t_us / 1e6)
    left = level + drift + rng.normal(0, cfg.noise_sd_mm, n) if cfg.noise_sd_mm else level + drift
    right = level + drift + rng.normal(0, cfg.noise_sd_mm, n) if cfg.noise_sd_mm else level + drift

    tlx = cfg.tlx_mental if cfg.tlx_mental is not None else (6 if cfg.cl_label else 2)
    meta = SessionMeta(cfg.participant_id, tlx, 0, hz)
    ones = np.ones(n, dtype=bool)
    session = GazeSession(meta, t_us, dirs, dirs, left, right, ones, ones)

    events = []
    for first, stop in fixations:
        c = dirs[first:stop].sum(axis=0)
        events.append(FixationEvent(
            int(t_us[first]), int(t_us[stop - 1]), tuple((c / np.linalg.norm(c)).tolist()),
            float((left[first:stop].mean() + right[first:stop].mean()) / 2), (first, stop),
        ))
    return session, events


def participant_seed(seed, k):
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1, np.uint32)[0])


def cohort_config(k, n_low, effect, seed, base=SynthConfig()):
    """Config for participant k (0-based; the first n_low are low load)."""
    label = 0 if k < n_low else 1
    pseed = participant_seed(seed, k)
    tlx_rng = np.random.default_rng([pseed, 7])
    tlx = int(tlx_rng.integers(5, 8) if label else tlx_rng.integers(1, 5))
    low_mean = 250.0
    high_mean = low_mean + effect * (400.0 - low_mean)
    return replace(
        base, cl_label=label, seed=pseed, participant_id=f"P{k + 1:02d}", tlx_mental=tlx,
        pupil_cl_shift_mm=base.pupil_cl_shift_mm * effect,
        fixation_dur_mean_ms=high_mean if label else low_mean,
    )


def generate_cohort(n_low, n_high, effect=1.0, seed=0, base=SynthConfig()):
    """List of ``(session, meta)``; participant k depends only on (seed, k, label)."""
    if n_low + n_high < 2:
        raise DataError("a cohort needs at least two participants")
    out = []
    for k in range(n_low + n_high):
        session, _ = generate_session(cohort_config(k, n_low, effect, seed, base))
        out.append((session, session.meta))
    return out
