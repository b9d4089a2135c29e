"""Sliding-window instances built from fixation features, plus train/test splits.

Windows overlap heavily at the default stride, so a window-level random
split lets neighbouring (near-duplicate) windows of one participant land on
both sides. Use ``SplitMode.SUBJECT_WISE`` when generalisation to unseen
people is the question.
"""
from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.model_selection import train_test_split

from .errors import BadModelFile, DataError, DegenerateSplit, OutOfRange, SessionTooShort

GLDS_MAGIC = b"GLDS"
GLDS_VERSION = 1
_HEADER = struct.Struct("<4sIQQB")


class InputMode(enum.IntEnum):
    FLATTEN = 0
    SUMMARY = 1


class SplitMode(str, enum.Enum):
    WINDOW_RANDOM = "window"
    SUBJECT_WISE = "subject"


@dataclass(frozen=True)
class WindowConfig:
    window_len: int = 2000
    stride: int = 500
    input_mode: InputMode = InputMode.FLATTEN

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise DataError("window_len and stride must be positive")
        if self.stride > self.window_len:
            raise DataError(f"stride {self.stride} exceeds window_len {self.window_len}")
        object.__setattr__(self, "input_mode", InputMode(self.input_mode))

    def input_width(self):
        return 2 * self.window_len if self.input_mode is InputMode.FLATTEN else 8


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    inputs: np.ndarray   # (rows, width) float64
    labels: np.ndarray   # (rows,) int64 in {0, 1}
    groups: np.ndarray   # (rows,) participant ids (str)
    input_mode: InputMode = InputMode.FLATTEN

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=np.int64)
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        if x.ndim != 2:
            x = x.reshape(len(y), -1) if len(y) else x.reshape(0, 0)
        g = np.asarray(self.groups, dtype=str)
        if not (x.shape[0] == y.shape[0] == g.shape[0]):
            raise DataError("inputs, labels and groups must have equal row counts")
        if not np.all(np.isfinite(x)):
            raise DataError("dataset inputs must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "input_mode", InputMode(self.input_mode))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.inputs.shape[1]

    def subset(self, index):
        return WindowedDataset(self.inputs[index], self.labels[index], self.groups[index],
                               self.input_mode)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            raise DataError("nothing to concatenate")
        modes = {p.input_mode for p in parts}
        if len(modes) != 1:
            raise DataError("cannot mix input modes")
        return cls(np.vstack([p.inputs for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.groups for p in parts]),
                   modes.pop())


def binarize_tlx(score):
    """NASA-TLX mental demand 1-4 -> 0 (low), 5-7 -> 1 (high)."""
    if int(score) != score or not 1 <= score <= 7:
        raise OutOfRange(f"TLX mental demand must be an integer in [1, 7], got {score}")
    return 0 if score <= 4 else 1


def sample_aligned_channels(n_samples, events, duration_scale_ms=None):
    """Spread per-fixation features onto the sample grid.

    Channel 1 is fixation duration divided by ``duration_scale_ms`` (default:
    the session's longest fixation) and clipped to [0, 1]; channel 2 is the
    fixation's mean pupil. Samples between fixations carry the previous
    fixation's values; samples before the first one are 0. ``n_samples`` may
    also be a session.
    """
    n = n_samples if isinstance(n_samples, (int, np.integer)) else len(n_samples)
    dur = np.zeros(n)
    pup = np.zeros(n)
    if not events:
        return dur, pup
    longest = max(e.duration_ms for e in events) if duration_scale_ms is None \
        else float(duration_scale_ms)
    for k, e in enumerate(events):
        first = e.sample_range[0]
        stop = events[k + 1].sample_range[0] if k + 1 < len(events) else n
        d = min(e.duration_ms / longest, 1.0) if longest > 0 else 0.0
        p = e.mean_pupil if np.isfinite(e.mean_pupil) else 0.0
        dur[first:stop] = d
        pup[first:stop] = p
    return dur, pup


def window_count(n, window_len, stride):
    return 0 if n < window_len else (n - window_len) // stride + 1


def window_rows(channels, cfg):
    """Window matrix for the two channels (no labels)."""
    ch1, ch2 = (np.asarray(c, dtype=np.float64) for c in channels)
    if ch1.shape != ch2.shape:
        raise DataError("channels must have equal length")
    n = ch1.shape[0]
    if n < cfg.window_len:
        raise SessionTooShort(f"{n} samples is shorter than window_len={cfg.window_len}")
    w1 = sliding_window_view(ch1, cfg.window_len)[::cfg.stride]
    w2 = sliding_window_view(ch2, cfg.window_len)[::cfg.stride]
    if cfg.input_mode is InputMode.FLATTEN:
        return np.hstack([w1, w2])
    return summarize_windows(w1, w2)


def summarize_windows(w1, w2):
    cols = []
    for w in (w1, w2):
        cols += [w.mean(axis=1), w.std(axis=1), w.min(axis=1), w.max(axis=1)]
    return np.column_stack(cols)


def make_windows(channels, label, group, cfg=WindowConfig()):
    rows = window_rows(channels, cfg)
    k = rows.shape[0]
    return WindowedDataset(rows, np.full(k, label), np.full(k, group, dtype=object), cfg.input_mode)


def split(dataset, mode=SplitMode.WINDOW_RANDOM, test_fraction=0.2, seed=0):
    """Deterministic train/test split; both sides keep the original row order."""
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    mode = SplitMode(mode)
    n = len(dataset)
    if mode is SplitMode.WINDOW_RANDOM:
        try:
            tr, te = train_test_split(np.arange(n), test_size=test_fraction,
                                      random_state=seed, stratify=dataset.labels)
        except ValueError as exc:
            raise DegenerateSplit(str(exc)) from exc
        return dataset.subset(np.sort(tr)), dataset.subset(np.sort(te))

    rng = np.random.default_rng(seed)
    test_groups = set()
    for cls in (0, 1):
        members = sorted(set(dataset.groups[dataset.labels == cls]))
        if len(members) < 2:
            raise DegenerateSplit(
                f"subject-wise split needs >= 2 participants of class {cls}, have {len(members)}"
            )
        members = [members[i] for i in rng.permutation(len(members))]
        sizes = {g: int(np.sum(dataset.groups == g)) for g in members}
        target = test_fraction * sum(sizes.values())
        taken = 0
        for g in members[:-1]:  # at least one participant of each class stays in training
            if taken >= target:
                break
            test_groups.add(g)
            taken += sizes[g]
    is_test = np.isin(dataset.groups, sorted(test_groups))
    train, test = dataset.subset(~is_test), dataset.subset(is_test)
    for name, side in (("train", train), ("test", test)):
        if len(np.unique(side.labels)) < 2:
            raise DegenerateSplit(f"{name} side of the subject-wise split has a single class")
    return train, test


# -- files ------------------------------------------------------------------

def save_dataset(ds, path):
    """Write the GLDS container.

    Layout (little-endian): ``b"GLDS"``, u32 version, u64 rows, u64 width,
    u8 input mode; rows*width f64 inputs (row-major); rows u8 labels;
    u32 name count then (u32 byte length, UTF-8 bytes) per group name;
    rows u32 indices into that name table.
    """
    names, index = np.unique(ds.groups, return_inverse=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GLDS_MAGIC, GLDS_VERSION, len(ds), ds.width, int(ds.input_mode)))
        fh.write(ds.inputs.astype("<f8").tobytes())
        fh.write(ds.labels.astype("u1").tobytes())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = str(name).encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
        fh.write(index.astype("<u4").tobytes())


def load_dataset(path):
    buf = memoryview(open(path, "rb").read())
    if len(buf) < _HEADER.size:
        raise BadModelFile(f"{path}: truncated header")
    magic, version, rows, width, mode = _HEADER.unpack_from(buf, 0)
    if magic != GLDS_MAGIC or version != GLDS_VERSION:
        raise BadModelFile(f"{path}: not a GLDS v{GLDS_VERSION} file")
    try:
        off = _HEADER.size
        inputs = np.frombuffer(buf, "<f8", rows * width, off).reshape(rows, width)
        off += 8 * rows * width
        labels = np.frombuffer(buf, "u1", rows, off)
        off += rows
        (n_names,) = struct.unpack_from("<I", buf, off)
        off += 4
        names = []
        for _ in range(n_names):
            (ln,) = struct.unpack_from("<I", buf, off)
            names.append(bytes(buf[off + 4:off + 4 + ln]).decode("utf-8"))
            off += 4 + ln
        index = np.frombuffer(buf, "<u4", rows, off)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise BadModelFile(f"{path}: corrupt GLDS file ({exc})") from exc
    if rows and int(index.max()) >= len(names):
        raise BadModelFile(f"{path}: group index outside the name table")
    groups = np.array(names, dtype=str)[index] if rows else np.zeros(0, dtype=str)
    return WindowedDataset(inputs.copy(), labels.astype(np.int64), groups, InputMode(mode))


def export_dataset_csv(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "label", *(f"x{i}" for i in range(ds.width))])
        for g, y, row in zip(ds.groups, ds.labels, ds.inputs):
            w.writerow([g, int(y), *(repr(float(v)) for v in row)])
