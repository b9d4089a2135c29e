"""Pupil-channel cleaning: blink-gap filling, FFT low-pass, 0-1 scaling.

Only the pupil channels are touched; gaze directions go to fixation
detection unmodified.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import CutoffAboveNyquist, DataError, NaNInput
from .fft import bin_frequencies, dft_forward, dft_inverse

MAX_INTERP_GAP_MS = 500.0


class NormalizeScope(str, enum.Enum):
    PER_SESSION = "session"
    GLOBAL = "global"


@dataclass(frozen=True)
class PreprocessConfig:
    cutoff_hz: float = 4.0
    normalize_scope: NormalizeScope = NormalizeScope.PER_SESSION

    def __post_init__(self):
        if not self.cutoff_hz > 0:
            raise DataError(f"cutoff_hz must be positive, got {self.cutoff_hz}")
        object.__setattr__(self, "normalize_scope", NormalizeScope(self.normalize_scope))

    def check(self, sampling_hz):
        if self.cutoff_hz >= sampling_hz / 2:
            raise CutoffAboveNyquist(
                f"cutoff {self.cutoff_hz} Hz is not below Nyquist ({sampling_hz / 2} Hz)"
            )


def lowpass_denoise(signal, sampling_hz, cutoff_hz):
    """Zero every DFT bin above ``cutoff_hz`` and transform back."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise DataError("lowpass_denoise needs a 1-D signal of length >= 2")
    if cutoff_hz >= sampling_hz / 2:
        raise CutoffAboveNyquist(f"cutoff {cutoff_hz} Hz >= Nyquist {sampling_hz / 2} Hz")
    spec = dft_forward(x)
    # |f| is symmetric in k and N-k, so the mask keeps the spectrum Hermitian
    spec[bin_frequencies(x.shape[0], sampling_hz) > cutoff_hz] = 0.0
    return dft_inverse(spec).real


def _scale(x, lo, hi):
    if hi > lo:
        return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return np.where(np.isnan(x), np.nan, 0.0)


def minmax_normalize(signal):
    x = np.asarray(signal, dtype=np.float64)
    if np.isnan(x).any():
        raise NaNInput("minmax_normalize input contains NaN")
    if x.size == 0:
        return x.copy()
    return _scale(x, x.min(), x.max())


def fill_gaps(values, valid, timestamp_us, max_gap_ms=MAX_INTERP_GAP_MS):
    """Linearly interpolate short invalid stretches; leave long ones NaN.

    A gap is bridged when the time between the valid samples on either side
    is at most ``max_gap_ms``. Leading/trailing gaps within that span hold
    the nearest valid value.
    """
    x = np.asarray(values, dtype=np.float64).copy()
    ok = np.asarray(valid, dtype=bool) & np.isfinite(x)
    t = np.asarray(timestamp_us, dtype=np.int64)
    x[~ok] = np.nan
    if ok.all() or not ok.any():
        return x
    limit_us = max_gap_ms * 1000.0
    bad = ~ok
    edges = np.diff(np.concatenate([[0], bad.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)  # exclusive
    n = len(x)
    for s, e in zip(starts, ends):
        if s > 0 and e < n:
            if t[e] - t[s - 1] <= limit_us:
                x[s:e] = np.interp(t[s:e], [t[s - 1], t[e]], [x[s - 1], x[e]])
        elif s == 0 and e < n:
            if t[e] - t[0] <= limit_us:
                x[:e] = x[e]
        elif e == n and s > 0:
            if t[n - 1] - t[s - 1] <= limit_us:
                x[s:] = x[s - 1]
    return x


def finite_segments(x):
    """(start, stop) pairs of maximal runs of finite values."""
    fin = np.isfinite(x)
    edges = np.diff(np.concatenate([[0], fin.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def denoise_channel(values, valid, timestamp_us, sampling_hz, cutoff_hz):
    x = fill_gaps(values, valid, timestamp_us)
    out = np.full_like(x, np.nan)
    for s, e in finite_segments(x):
        seg = x[s:e]
        # a flat segment is its own low-pass; filtering it would only add round-off ripple
        flat = np.all(seg == seg[0])
        out[s:e] = seg if e - s < 2 or flat else lowpass_denoise(seg, sampling_hz, cutoff_hz)
    return out


def _finite_range(x):
    fin = x[np.isfinite(x)]
    if fin.size == 0:
        return np.nan, np.nan
    return float(fin.min()), float(fin.max())


def denoise_session(session, cfg):
    cfg.check(session.meta.sampling_hz)
    hz = session.meta.sampling_hz
    left = denoise_channel(session.left_pupil_mm, session.left_valid, session.timestamp_us,
                           hz, cfg.cutoff_hz)
    right = denoise_channel(session.right_pupil_mm, session.right_valid, session.timestamp_us,
                            hz, cfg.cutoff_hz)
    return left, right


def preprocess_pupil(session, cfg=PreprocessConfig(), ranges=None):
    """Denoise then normalise both pupil channels of one trimmed session.

    ``ranges`` is ``((left_lo, left_hi), (right_lo, right_hi))`` in mm and is
    required for global scope; per-session scope uses the session's own range.
    """
    left, right = denoise_session(session, cfg)
    if cfg.normalize_scope is NormalizeScope.GLOBAL:
        if ranges is None:
            raise DataError("global normalisation needs reference ranges; fit a PupilPreprocessor")
    else:
        ranges = (_finite_range(left), _finite_range(right))
    return _scale(left, *ranges[0]), _scale(right, *ranges[1])


class PupilPreprocessor(TransformerMixin, BaseEstimator):
    """Estimator wrapper over :func:`preprocess_pupil` for lists of sessions.

    With ``normalize_scope="global"``, :meth:`fit` pools the denoised range of
    every session per eye; ``transform`` then maps each session into it.
    ``transform`` returns a list of ``(left, right)`` array pairs.
    """

    def __init__(self, cutoff_hz=4.0, normalize_scope="session"):
        self.cutoff_hz = cutoff_hz
        self.normalize_scope = normalize_scope

    def _config(self):
        return PreprocessConfig(self.cutoff_hz, NormalizeScope(self.normalize_scope))

    def fit(self, sessions, y=None):
        cfg = self._config()
        lo = np.array([np.inf, np.inf])
        hi = -lo
        for s in sessions:
            for eye, ch in enumerate(denoise_session(s, cfg)):
                a, b = _finite_range(ch)
                if np.isfinite(a):
                    lo[eye] = min(lo[eye], a)
                    hi[eye] = max(hi[eye], b)
        self.ranges_ = tuple((float(a), float(b)) if np.isfinite(a) else (np.nan, np.nan)
                             for a, b in zip(lo, hi))
        return self

    def transform(self, sessions):
        cfg = self._config()
        ranges = None
        if cfg.normalize_scope is NormalizeScope.GLOBAL:
            check_is_fitted(self, "ranges_")
            ranges = self.ranges_
        return [preprocess_pupil(s, cfg, ranges) for s in sessions]
