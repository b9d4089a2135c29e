"""End-to-end chain: sessions -> windows -> both classifiers -> reports."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import trim_pre_task
from .dataset import (SplitMode, WindowConfig, WindowedDataset, binarize_tlx,
                      make_windows, sample_aligned_channels, split, window_count)
from .errors import DataError, SessionTooShort
from .evaluation import evaluate
from .forest import grid_search
from .ivt import IvtConfig, detect_fixations
from .mlp import MlpConfig, train
from .preprocess import NormalizeScope, PupilPreprocessor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    window: WindowConfig = WindowConfig()
    cutoff_hz: float = 4.0
    normalize_scope: NormalizeScope = NormalizeScope.GLOBAL
    ivt: IvtConfig = IvtConfig()
    split: SplitMode = SplitMode.WINDOW_RANDOM
    test_fraction: float = 0.2
    mlp: MlpConfig = MlpConfig()
    grid: dict | None = None
    folds: int = 3
    seed: int = 0


@dataclass
class PipelineResult:
    dataset: WindowedDataset
    train: WindowedDataset
    test: WindowedDataset
    mlp: object
    forest: object
    reports: list
    grid_rows: list
    timings: dict = field(default_factory=dict)


def build_dataset(sessions, window=WindowConfig(), cutoff_hz=4.0,
                  normalize_scope=NormalizeScope.GLOBAL, ivt=IvtConfig()):
    """Windowed dataset plus the fitted scales ``{"pupil_ranges", "max_duration_ms"}``.

    Sessions are trimmed to the task first; sessions too short for a single
    window are skipped with a warning. Global scope pools both the pupil
    range and the duration divisor over all sessions; per-session scope lets
    each session's own range and longest fixation set its scale, which makes
    those values a per-person fingerprint the classifiers can latch onto.
    """
    trimmed = [trim_pre_task(s) for s in sessions]
    keep = [s for s in trimmed if window_count(len(s), window.window_len, window.stride)]
    for s in trimmed:
        if s not in keep:
            log.warning("skipping %s: %d samples < window_len %d",
                        s.meta.participant_id, len(s), window.window_len)
    if not keep:
        raise SessionTooShort("no session is long enough for one window")
    pre = PupilPreprocessor(cutoff_hz, NormalizeScope(normalize_scope).value).fit(keep)
    events = [detect_fixations(s, ivt, pupil) for s, pupil in zip(keep, pre.transform(keep))]
    scale = None
    if NormalizeScope(normalize_scope) is NormalizeScope.GLOBAL:
        scale = max((e.duration_ms for ev in events for e in ev), default=0.0)
    parts = []
    for s, ev in zip(keep, events):
        channels = sample_aligned_channels(len(s), ev, scale)
        parts.append(make_windows(channels, binarize_tlx(s.meta.tlx_mental),
                                  s.meta.participant_id, window))
    scales = {"pupil_ranges": getattr(pre, "ranges_", None), "max_duration_ms": scale}
    return WindowedDataset.concat(parts), scales


def model_meta(cfg, scales, sampling_hz):
    """What a trained model needs to be served on its own."""
    return {"pipeline": {
        "window_len": cfg.window.window_len, "stride": cfg.window.stride,
        "input_mode": int(cfg.window.input_mode), "sampling_hz": float(sampling_hz),
        "cutoff_hz": cfg.cutoff_hz,
        "normalize_scope": NormalizeScope(cfg.normalize_scope).value,
        "ivt": {"velocity_threshold_deg_s": cfg.ivt.velocity_threshold_deg_s,
                "min_fixation_ms": cfg.ivt.min_fixation_ms, "max_gap_ms": cfg.ivt.max_gap_ms},
        "pupil_ranges": [list(r) for r in scales["pupil_ranges"]]
        if scales.get("pupil_ranges") is not None else None,
        "max_duration_ms": scales.get("max_duration_ms"),
    }}


def fit_and_evaluate(dataset, cfg, meta=None):
    """Split, train the MLP and the grid-searched forest, score both on the test side."""
    timings = {}
    train_ds, test_ds = split(dataset, cfg.split, cfg.test_fraction, cfg.seed)
    if len(np.unique(train_ds.labels)) < 2:
        raise DataError("training split contains a single class")

    t0 = time.perf_counter()
    mlp = train(train_ds.inputs, train_ds.labels, cfg.mlp)
    timings["mlp_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    forest, rows = grid_search(train_ds.inputs, train_ds.labels, cfg.grid, cfg.folds, cfg.seed)
    timings["forest_s"] = time.perf_counter() - t0
    if meta:
        mlp.meta.update(meta)
        forest.meta.update(meta)

    reports = [evaluate(mlp, test_ds, model_tag="MLP"), evaluate(forest, test_ds, model_tag="RF")]
    return PipelineResult(dataset, train_ds, test_ds, mlp, forest, reports, rows, timings)


def run_pipeline(sessions, cfg=PipelineConfig()):
    t0 = time.perf_counter()
    dataset, scales = build_dataset(sessions, cfg.window, cfg.cutoff_hz, cfg.normalize_scope,
                                    cfg.ivt)
    t_data = time.perf_counter() - t0
    meta = model_meta(cfg, scales, sessions[0].meta.sampling_hz)
    result = fit_and_evaluate(dataset, cfg, meta)
    result.timings["dataset_s"] = t_data
    return result

