"""Online cognitive-load inference over a stream of gaze samples.

Differences from the batch pipeline, by necessity:

* pupil smoothing is a causal one-pole low-pass (the FFT filter needs the
  future);
* pupil scaling uses a running min/max (seeded from the training range
  stored in the model, and never narrower than ``floor_range_mm``);
* fixation duration is scaled by the longest fixation seen so far (never
  less than the training-time divisor when the model carries one);
* a fixation's features reach the window only once the fixation has ended.

Predictions are emitted once the ring buffer holds ``window_len`` samples and
then every ``stride`` samples, i.e. exactly where batch windowing puts its
window ends.
"""
from __future__ import annotations

import asyncio
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import InputMode, summarize_windows
from .errors import BadModelFile, DataError, OutOfOrderSample
from .forest import GLRF_MAGIC, ForestModel, load_forest
from .ivt import MERGE_MAX_ANGLE_DEG, IvtConfig, angle_deg
from .mlp import GLMN_MAGIC, MlpModel, forward, load_model

log = logging.getLogger(__name__)

INBOUND_FIELDS = ("t", "lx", "ly", "lz", "rx", "ry", "rz", "lp", "rp", "lv", "rv")


@dataclass(frozen=True)
class StreamConfig:
    window_len: int = 2000
    stride: int = 500
    input_mode: InputMode = InputMode.FLATTEN
    sampling_hz: float = 200.0
    cutoff_hz: float = 4.0
    ivt: IvtConfig = IvtConfig()
    pupil_ranges: tuple | None = None  # ((lo, hi) left, (lo, hi) right) in mm
    max_duration_ms: float | None = None  # training-time duration divisor
    floor_range_mm: float = 0.5
    threshold: float = 0.5

    @property
    def alpha(self):
        # one-pole low-pass with -3 dB point at cutoff_hz
        return 1.0 - math.exp(-2.0 * math.pi * self.cutoff_hz / self.sampling_hz)

    @classmethod
    def from_meta(cls, meta, **overrides):
        """Build from the ``pipeline`` block a trained model carries."""
        p = dict(meta.get("pipeline", {}))
        kw = {}
        for key in ("window_len", "stride", "sampling_hz", "cutoff_hz", "floor_range_mm"):
            if key in p:
                kw[key] = p[key]
        if "input_mode" in p:
            kw["input_mode"] = InputMode(p["input_mode"])
        if "ivt" in p:
            kw["ivt"] = IvtConfig(**p["ivt"])
        if p.get("max_duration_ms"):
            kw["max_duration_ms"] = float(p["max_duration_ms"])
        if p.get("pupil_ranges"):
            kw["pupil_ranges"] = tuple(tuple(r) for r in p["pupil_ranges"])
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class Prediction:
    p_high: float
    label: int
    window_end_us: int
    latency_us: int

    def record(self):
        return {"t_end": self.window_end_us, "p_high": self.p_high, "label": self.label,
                "latency_us": self.latency_us}


@dataclass
class _Run:
    first: int
    start_us: int
    end_us: int
    dir_sum: np.ndarray
    pupil_sum: np.ndarray = field(default_factory=lambda: np.zeros(2))
    pupil_n: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def add(self, t_us, direction, pupils, valid):
        self.end_us = t_us
        if np.all(np.isfinite(direction)):
            self.dir_sum = self.dir_sum + direction
        for e in (0, 1):
            if valid[e] and np.isfinite(pupils[e]):
                self.pupil_sum[e] += pupils[e]
                self.pupil_n[e] += 1

    def absorb(self, other):
        self.end_us = other.end_us
        self.dir_sum = self.dir_sum + other.dir_sum
        self.pupil_sum = self.pupil_sum + other.pupil_sum
        self.pupil_n = self.pupil_n + other.pupil_n

    def centroid(self):
        n = np.linalg.norm(self.dir_sum)
        return self.dir_sum / n if n > 0 else np.full(3, np.nan)

    def mean_pupils(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            m = self.pupil_sum / self.pupil_n
        if np.isnan(m[0]):
            m[0] = m[1]
        if np.isnan(m[1]):
            m[1] = m[0]
        return m


class StreamState:
    """Per-connection state; size is O(window_len) regardless of stream length."""

    def __init__(self, cfg):
        self.cfg = cfg
        w = cfg.window_len
        self.count = 0
        self.last_t = None
        self.prev = None  # (t_us, direction, smoothed pupils, valid) of the newest sample
        self.prev_prev = None
        self.smooth = np.full(2, np.nan)
        if cfg.pupil_ranges is not None:
            self.lo = np.array([r[0] for r in cfg.pupil_ranges], dtype=float)
            self.hi = np.array([r[1] for r in cfg.pupil_ranges], dtype=float)
        else:
            self.lo = np.full(2, np.inf)
            self.hi = np.full(2, -np.inf)
        # ring buffer, slot = sample index % window_len
        self.buf_dur = np.zeros(w)
        self.buf_pupil = np.full((w, 2), np.nan)
        self.carry_dur = 0.0
        self.carry_pupil = np.full(2, np.nan)
        self.max_dur = cfg.max_duration_ms or 0.0
        self.open_run = None
        self.pending = None

    # -- pupil ---------------------------------------------------------------
    def _smooth(self, pupils, valid):
        a = self.cfg.alpha
        for e in (0, 1):
            if valid[e] and np.isfinite(pupils[e]):
                self.smooth[e] = pupils[e] if np.isnan(self.smooth[e]) \
                    else self.smooth[e] + a * (pupils[e] - self.smooth[e])
                self.lo[e] = min(self.lo[e], self.smooth[e])
                self.hi[e] = max(self.hi[e], self.smooth[e])
        return self.smooth.copy()

    # -- fixations -----------------------------------------------------------
    def _finalize(self, run):
        dur = (run.end_us - run.start_us) / 1000.0
        if dur < self.cfg.ivt.min_fixation_ms:
            return
        self.max_dur = max(self.max_dur, dur)
        self.carry_dur = dur
        self.carry_pupil = run.mean_pupils()
        # carry-forward: every buffered sample from the fixation start onward
        first = max(run.first, self.count - self.cfg.window_len)
        for j in range(first, self.count):
            s = j % self.cfg.window_len
            self.buf_dur[s] = dur
            self.buf_pupil[s] = self.carry_pupil

    def _close_run(self):
        cand, self.open_run = self.open_run, None
        p = self.pending
        if p is not None:
            gap_ms = (cand.start_us - p.end_us) / 1000.0
            if gap_ms < self.cfg.ivt.max_gap_ms and \
                    angle_deg(p.centroid(), cand.centroid()) < MERGE_MAX_ANGLE_DEG:
                p.absorb(cand)
                return
            self._finalize(p)
        self.pending = cand

    def _label_previous(self, velocity):
        """Apply the label of the sample before the newest one."""
        j = self.count - 2
        t_us, direction, pupils, valid = self.prev_prev
        thr = self.cfg.ivt.velocity_threshold_deg_s
        if np.isfinite(velocity) and velocity < thr:
            if self.open_run is None:
                self.open_run = _Run(j, t_us, t_us, np.zeros(3))
            self.open_run.add(t_us, direction, pupils, valid)
        elif self.open_run is not None:
            self._close_run()
        # no later run can merge with the pending one once the gap is too long
        if self.pending is not None and self.open_run is None and \
                (self.last_t - self.pending.end_us) / 1000.0 >= self.cfg.ivt.max_gap_ms:
            self._finalize(self.pending)
            self.pending = None

    # -- window --------------------------------------------------------------
    def window_inputs(self):
        w = self.cfg.window_len
        order = (np.arange(self.count - w, self.count)) % w
        dur = self.buf_dur[order]
        ch1 = np.minimum(dur / self.max_dur, 1.0) if self.max_dur > 0 else np.zeros(w)
        rng = np.maximum(self.hi - self.lo, self.cfg.floor_range_mm)
        pup = np.clip((self.buf_pupil[order] - self.lo) / rng, 0.0, 1.0)
        ok = np.isfinite(pup)
        n_ok = ok.sum(axis=1)
        # samples before the first fixation carry 0, as in batch windowing
        ch2 = np.where(n_ok > 0, np.where(ok, pup, 0.0).sum(axis=1) / np.maximum(n_ok, 1), 0.0)
        if self.cfg.input_mode is InputMode.FLATTEN:
            return np.concatenate([ch1, ch2])
        return summarize_windows(ch1[None, :], ch2[None, :])[0]


def _cyclopean(ld, rd, lv, rv):
    if lv and rv:
        d = ld + rd
    elif lv:
        d = ld
    elif rv:
        d = rd
    else:
        return np.full(3, np.nan)
    n = np.linalg.norm(d)
    return d / n if n > 0 else np.full(3, np.nan)


def predict_window(model, x, threshold=0.5):
    if isinstance(model, MlpModel):
        p = forward(model, x)
        return p, int(p >= threshold)
    if isinstance(model, ForestModel):
        votes = int(model.votes(x[None, :])[0])
        return votes / len(model.trees), int(2 * votes > len(model.trees))
    raise DataError(f"unsupported model type {type(model).__name__}")


def push_sample(state, sample, model):
    """Feed one GazeSample; returns a Prediction when a window completes, else None.

    Raises OutOfOrderSample (leaving the state untouched) when the timestamp
    does not increase.
    """
    t0 = time.perf_counter_ns()
    t_us = int(sample.timestamp_us)
    if state.last_t is not None and t_us <= state.last_t:
        raise OutOfOrderSample(f"timestamp {t_us} after {state.last_t}")
    ld = np.asarray(sample.left_dir, dtype=float)
    rd = np.asarray(sample.right_dir, dtype=float)
    valid = (bool(sample.left_valid), bool(sample.right_valid))
    direction = _cyclopean(ld, rd, *valid)
    pupils = state._smooth((float(sample.left_pupil_mm), float(sample.right_pupil_mm)), valid)

    state.prev_prev = state.prev
    state.prev = (t_us, direction, pupils, valid)
    slot = state.count % state.cfg.window_len
    state.count += 1
    state.buf_dur[slot] = state.carry_dur
    state.buf_pupil[slot] = state.carry_pupil
    if state.prev_prev is not None:
        dt = (t_us - state.last_t) / 1e6
        velocity = float(angle_deg(state.prev_prev[1], direction)) / dt
        state.last_t = t_us
        state._label_previous(velocity)
    else:
        state.last_t = t_us

    w, s = state.cfg.window_len, state.cfg.stride
    if state.count < w or (state.count - w) % s:
        return None
    p, label = predict_window(model, state.window_inputs(), state.cfg.threshold)
    return Prediction(float(p), label, t_us, (time.perf_counter_ns() - t0) // 1000)


class StreamSession:
    """Convenience wrapper binding a model to one stream's state."""

    def __init__(self, model, cfg=None):
        self.model = model
        self.cfg = cfg or StreamConfig.from_meta(model.meta)
        self.state = StreamState(self.cfg)

    def push(self, sample):
        return push_sample(self.state, sample, self.model)


# -- wire format ---------------------------------------------------------------

def parse_record(line):
    """One inbound JSON line -> GazeSample."""
    from .core import GazeSample

    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON: {exc.msg}") from None
    if not isinstance(rec, dict):
        raise DataError("record must be a JSON object")
    missing = [k for k in INBOUND_FIELDS if k not in rec]
    if missing:
        raise DataError(f"missing fields {missing}")
    try:
        return GazeSample(
            int(rec["t"]),
            (float(rec["lx"]), float(rec["ly"]), float(rec["lz"])),
            (float(rec["rx"]), float(rec["ry"]), float(rec["rz"])),
            float(rec["lp"]) if rec["lp"] is not None else math.nan,
            float(rec["rp"]) if rec["rp"] is not None else math.nan,
            bool(int(rec["lv"])), bool(int(rec["rv"])),
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad field value: {exc}") from None


def sample_record(sample):
    return {"t": sample.timestamp_us,
            "lx": sample.left_dir[0], "ly": sample.left_dir[1], "lz": sample.left_dir[2],
            "rx": sample.right_dir[0], "ry": sample.right_dir[1], "rz": sample.right_dir[2],
            "lp": None if math.isnan(sample.left_pupil_mm) else sample.left_pupil_mm,
            "rp": None if math.isnan(sample.right_pupil_mm) else sample.right_pupil_mm,
            "lv": int(sample.left_valid), "rv": int(sample.right_valid)}


def handle_line(session, line, lineno):
    """Process one inbound line; returns the outbound record or None."""
    line = line.strip()
    if not line:
        return None
    try:
        pred = session.push(parse_record(line))
    except DataError as exc:
        return {"error": str(exc), "line": lineno}
    return pred.record() if pred else None


def load_any_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == GLMN_MAGIC:
        return load_model(path)
    if magic == GLRF_MAGIC:
        return load_forest(path)
    raise BadModelFile(f"{path}: unknown model file (magic {magic!r})")


async def _handle_connection(reader, writer, model, cfg):
    session = StreamSession(model, cfg)
    lineno = 0
    try:
        while True:
            raw = await reader.readline()
            if not raw:
                break
            lineno += 1
            out = handle_line(session, raw.decode("utf-8", errors="replace"), lineno)
            if out is not None:
                writer.write((json.dumps(out) + "\n").encode("utf-8"))
                await writer.drain()
    except (ConnectionResetError, BrokenPipeError):
        log.info("client went away after %d lines", lineno)
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionResetError, BrokenPipeError):
            pass


def parse_address(address):
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


async def start_server(address, model, cfg=None):
    """Listen on ``host:port``; each connection gets its own StreamState."""
    cfg = cfg or StreamConfig.from_meta(model.meta)
    host, port = parse_address(address)
    return await asyncio.start_server(
        lambda r, w: _handle_connection(r, w, model, cfg), host, port)


def serve(address, model_path, cfg=None):
    """Blocking TCP service. Model errors surface before the socket opens."""
    model = load_any_model(model_path)

    async def main():
        server = await start_server(address, model, cfg)
        log.info("serving on %s", ", ".join(str(s.getsockname()) for s in server.sockets))
        async with server:
            await server.serve_forever()

    asyncio.run(main())


def serve_pipe(model, cfg=None, infile=None, outfile=None):
    """Standard input/output variant of the service (one stream)."""
    infile = infile or sys.stdin
    outfile = outfile or sys.stdout
    session = StreamSession(model, cfg)
    for lineno, line in enumerate(infile, 1):
        out = handle_line(session, line, lineno)
        if out is not None:
            outfile.write(json.dumps(out) + "\n")
            outfile.flush()
