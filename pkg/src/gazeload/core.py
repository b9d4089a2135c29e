"""Gaze session types, CSV/manifest ingestion and pre-task trimming.

Sessions are stored column-wise (one numpy array per field) because every
downstream stage is vectorised; :class:`GazeSample` is the row view.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BadManifest, DataError, EmptyAfterTrim, MissingColumn, NonMonotonicTimestamp

CSV_COLUMNS = (
    "timestamp_us",
    "left_dir_x", "left_dir_y", "left_dir_z",
    "right_dir_x", "right_dir_y", "right_dir_z",
    "left_pupil_mm", "right_pupil_mm",
    "left_valid", "right_valid",
)
MANIFEST_KEYS = ("participant_id", "tlx_mental", "tutorial_start_us", "sampling_hz")
UNIT_TOL = 1e-6


class MalformedRow(DataError):
    def __init__(self, row, column, value):
        self.row = row
        super().__init__(f"row {row}: cannot parse {column}={value!r}")


@dataclass(frozen=True)
class GazeSample:
    timestamp_us: int
    left_dir: tuple
    right_dir: tuple
    left_pupil_mm: float
    right_pupil_mm: float
    left_valid: bool
    right_valid: bool


@dataclass(frozen=True)
class SessionMeta:
    participant_id: str
    tlx_mental: int
    tutorial_start_us: int = 0
    sampling_hz: float = 200.0

    def __post_init__(self):
        if not 1 <= int(self.tlx_mental) <= 7:
            raise BadManifest(f"tlx_mental must be in [1, 7], got {self.tlx_mental}")
        if not self.sampling_hz > 0:
            raise BadManifest(f"sampling_hz must be positive, got {self.sampling_hz}")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GazeSession:
    """A recording: metadata plus column arrays of equal length N.

    ``left_dir``/``right_dir`` are (N, 3); everything else is (N,).
    """

    meta: SessionMeta
    timestamp_us: np.ndarray
    left_dir: np.ndarray
    right_dir: np.ndarray
    left_pupil_mm: np.ndarray
    right_pupil_mm: np.ndarray
    left_valid: np.ndarray
    right_valid: np.ndarray
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        cols = {
            "timestamp_us": np.int64, "left_dir": np.float64, "right_dir": np.float64,
            "left_pupil_mm": np.float64, "right_pupil_mm": np.float64,
            "left_valid": bool, "right_valid": bool,
        }
        for name, dtype in cols.items():
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        n = len(self.timestamp_us)
        for name in cols:
            arr = getattr(self, name)
            want = (n, 3) if name.endswith("_dir") else (n,)
            if arr.shape != want:
                raise DataError(f"{name} has shape {arr.shape}, expected {want}")
        if not self._checked:
            _validate(self)

    def __len__(self):
        return len(self.timestamp_us)

    def __getitem__(self, i):
        return GazeSample(
            int(self.timestamp_us[i]),
            tuple(self.left_dir[i]), tuple(self.right_dir[i]),
            float(self.left_pupil_mm[i]), float(self.right_pupil_mm[i]),
            bool(self.left_valid[i]), bool(self.right_valid[i]),
        )

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_samples(cls, meta, samples):
        samples = list(samples)
        return cls(
            meta,
            [s.timestamp_us for s in samples],
            np.reshape([s.left_dir for s in samples], (-1, 3)),
            np.reshape([s.right_dir for s in samples], (-1, 3)),
            [s.left_pupil_mm for s in samples],
            [s.right_pupil_mm for s in samples],
            [s.left_valid for s in samples],
            [s.right_valid for s in samples],
        )

    def take(self, index, meta=None):
        """Row subset (slice or index array) with optional replacement meta."""
        return GazeSession(
            meta or self.meta,
            self.timestamp_us[index], self.left_dir[index], self.right_dir[index],
            self.left_pupil_mm[index], self.right_pupil_mm[index],
            self.left_valid[index], self.right_valid[index],
            _checked=True,
        )


def _validate(s):
    t = s.timestamp_us
    if len(t) > 1:
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            k = int(bad[0]) + 1
            raise NonMonotonicTimestamp(k + 1, int(t[k - 1]), int(t[k]))
    for side in ("left", "right"):
        valid = getattr(s, f"{side}_valid")
        d = getattr(s, f"{side}_dir")[valid]
        norms = np.linalg.norm(d, axis=1)
        off = np.flatnonzero(~(np.abs(norms - 1.0) <= UNIT_TOL))
        if off.size:
            row = int(np.flatnonzero(valid)[off[0]]) + 1
            raise DataError(f"row {row}: {side} direction is not a unit vector")
        p = getattr(s, f"{side}_pupil_mm")[valid]
        if not np.all(np.isfinite(p)):
            row = int(np.flatnonzero(valid)[np.flatnonzero(~np.isfinite(p))[0]]) + 1
            raise DataError(f"row {row}: {side} pupil is not finite but flagged valid")


# -- manifest ---------------------------------------------------------------

def read_manifest(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise BadManifest(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split(sep, 1))
        values[key] = value
    missing = [k for k in ("participant_id", "tlx_mental") if k not in values]
    if missing:
        raise BadManifest(f"{path}: missing keys {missing}")
    try:
        return SessionMeta(
            participant_id=values["participant_id"],
            tlx_mental=int(values["tlx_mental"]),
            tutorial_start_us=int(values.get("tutorial_start_us", 0)),
            sampling_hz=float(values.get("sampling_hz", 200.0)),
        )
    except ValueError as exc:
        if isinstance(exc, BadManifest):
            raise
        raise BadManifest(f"{path}: {exc}") from exc


def write_manifest(meta, path):
    lines = [
        f"participant_id={meta.participant_id}",
        f"tlx_mental={meta.tlx_mental}",
        f"tutorial_start_us={meta.tutorial_start_us}",
        f"sampling_hz={meta.sampling_hz!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- CSV --------------------------------------------------------------------

def _parse(row, rowno, header_index, name, conv):
    raw = row[header_index[name]]
    try:
        return conv(raw)
    except ValueError:
        raise MalformedRow(rowno, name, raw) from None


def _flag(raw):
    if raw.strip() not in ("0", "1"):
        raise ValueError(raw)
    return raw.strip() == "1"


def read_gaze_csv(csv_path, meta):
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{csv_path}: empty file, no header") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{csv_path}: missing columns {missing}")
        idx = {c: header.index(c) for c in CSV_COLUMNS}

        cols = {c: [] for c in CSV_COLUMNS}
        prev = None
        for rowno, row in enumerate(reader, 1):
            if not row:
                continue
            if len(row) < len(header):
                raise MalformedRow(rowno, CSV_COLUMNS[-1], "")
            t = _parse(row, rowno, idx, "timestamp_us", int)
            if prev is not None and t <= prev:
                raise NonMonotonicTimestamp(rowno, prev, t)
            prev = t
            cols["timestamp_us"].append(t)
            for c in CSV_COLUMNS[1:9]:
                cols[c].append(_parse(row, rowno, idx, c, float))
            for c in CSV_COLUMNS[9:]:
                cols[c].append(_parse(row, rowno, idx, c, _flag))

    def dirs(side):
        return np.column_stack([cols[f"{side}_dir_{a}"] for a in "xyz"]) if cols["timestamp_us"] \
            else np.zeros((0, 3))

    return GazeSession(
        meta, cols["timestamp_us"], dirs("left"), dirs("right"),
        cols["left_pupil_mm"], cols["right_pupil_mm"],
        cols["left_valid"], cols["right_valid"],
    )


def load_session(csv_path, manifest_path):
    return read_gaze_csv(csv_path, read_manifest(manifest_path))


def write_session_csv(session, path):
    # repr() gives the shortest round-tripping float text, so load/write/load is bit-exact
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(session)):
            w.writerow([
                int(session.timestamp_us[i]),
                *(repr(float(v)) for v in session.left_dir[i]),
                *(repr(float(v)) for v in session.right_dir[i]),
                repr(float(session.left_pupil_mm[i])),
                repr(float(session.right_pupil_mm[i])),
                int(session.left_valid[i]), int(session.right_valid[i]),
            ])


def save_session(session, csv_path, manifest_path):
    write_session_csv(session, csv_path)
    write_manifest(session.meta, manifest_path)


# -- operations -------------------------------------------------------------

def trim_pre_task(session):
    """Drop samples recorded before the tutorial marker and re-base time to 0.

    The sample stamped exactly at the marker is kept. The returned session's
    marker is reset to 0, so trimming is idempotent.
    """
    keep = np.flatnonzero(session.timestamp_us >= session.meta.tutorial_start_us)
    if keep.size == 0:
        raise EmptyAfterTrim(
            f"{session.meta.participant_id}: no samples at or after "
            f"tutorial_start_us={session.meta.tutorial_start_us}"
        )
    out = session.take(slice(int(keep[0]), None), meta=replace(session.meta, tutorial_start_us=0))
    t = out.timestamp_us - out.timestamp_us[0]
    object.__setattr__(out, "timestamp_us", _frozen(t, np.int64))
    return out


def validity_mask(session):
    return np.logical_and(session.left_valid, session.right_valid)
