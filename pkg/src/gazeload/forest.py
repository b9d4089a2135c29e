"""Gini decision trees, random forests and exhaustive grid search with
stratified k-fold cross-validation.

The heavy lifting is in :mod:`gazeload._tree`; this module owns the
configuration, seeding, persistence and sklearn-style estimators.
"""
from __future__ import annotations

import csv
import enum
import itertools
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _tree
from .errors import BadModelFile, DataError, EmptySet, FoldTooSmall, SingleClassData

log = logging.getLogger(__name__)

GLRF_MAGIC = b"GLRF"
GLRF_VERSION = 1
GRID_FIELDS = ("n_trees", "max_depth", "min_samples_split", "min_samples_leaf",
               "max_features", "bootstrap")


class MaxFeatures(str, enum.Enum):
    SQRT = "sqrt"
    LOG2 = "log2"
    ALL = "all"

    def count(self, n_features):
        if self is MaxFeatures.SQRT:
            return max(1, int(math.sqrt(n_features)))
        if self is MaxFeatures.LOG2:
            return max(1, int(math.log2(n_features))) if n_features > 1 else 1
        return n_features


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None  # None: grow until pure or too small
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: MaxFeatures = MaxFeatures.SQRT
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "max_features", MaxFeatures(self.max_features))
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise DataError("max_depth must be >= 0 or None")
        if self.min_samples_split < 2 or self.min_samples_leaf < 1:
            raise DataError("min_samples_split must be >= 2 and min_samples_leaf >= 1")

    def as_dict(self):
        d = asdict(self)
        d["max_features"] = self.max_features.value
        return d


# The full 486-cell grid is kept for long runs; the default trades grid
# breadth for runtime on 4000-wide flattened windows while still tuning all
# six parameters.
FULL_GRID = {
    "n_trees": [100, 200, 400],
    "max_depth": [None, 10, 20],
    "min_samples_split": [2, 5, 10],
    "min_samples_leaf": [1, 2, 4],
    "max_features": ["sqrt", "log2", "all"],
    "bootstrap": [True, False],
}
DEFAULT_GRID = {
    "n_trees": [50, 100],
    "max_depth": [None, 10],
    "min_samples_split": [2, 5],
    "min_samples_leaf": [1, 2],
    "max_features": ["sqrt", "log2"],
    "bootstrap": [True, False],
}


def gini(labels):
    """1 - p0^2 - p1^2 of a binary label multiset."""
    y = np.asarray(labels).ravel()
    if y.size == 0:
        raise EmptySet("gini of an empty set")
    p1 = np.count_nonzero(y) / y.size
    return 1.0 - (1.0 - p1) ** 2 - p1 ** 2


@dataclass
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray   # P(class 1) at each node

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    def predict_proba(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _tree.tree_leaf_values(X, self.feature, self.threshold, self.left,
                                      self.right, self.value)

    def predict(self, X):
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def depth(self):
        best = 0
        stack = [(0, 0)]
        while stack:
            k, dep = stack.pop()
            best = max(best, dep)
            if self.feature[k] != _tree.LEAF:
                stack += [(self.left[k], dep + 1), (self.right[k], dep + 1)]
        return best


def _depth_arg(max_depth):
    return -1 if max_depth is None else int(max_depth)


def presort(X):
    """Feature-major copy of X and its per-feature argsorts, shared by every tree on X."""
    XT = np.ascontiguousarray(X.T)
    order = np.argsort(XT, axis=1, kind="stable").astype(np.int32)
    return XT, order, np.take_along_axis(XT, order, axis=1)


def _prepare(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be (n, d) with n labels")
    if X.shape[0] == 0:
        raise EmptySet("cannot fit on zero rows")
    return X, y


def _grow(X, y, weights, presorted, cfg, seeds):
    n = X.shape[0]
    t = weights.shape[0]
    cap = 2 * n + 1
    feature = np.empty((t, cap), dtype=np.int64)
    threshold = np.zeros((t, cap))
    left = np.empty((t, cap), dtype=np.int64)
    right = np.empty((t, cap), dtype=np.int64)
    value = np.empty((t, cap))
    counts = np.empty(t, dtype=np.int64)
    XT, order, sorted_vals = presorted
    _tree.build_forest(XT, sorted_vals, y, weights, order, _depth_arg(cfg.max_depth),
                       float(cfg.min_samples_split), float(cfg.min_samples_leaf),
                       cfg.max_features.count(X.shape[1]), seeds,
                       feature, threshold, left, right, value, counts)
    return [DecisionTree(feature[k, :c].copy(), threshold[k, :c].copy(), left[k, :c].copy(),
                         right[k, :c].copy(), value[k, :c].copy())
            for k, c in enumerate(counts)]


def fit_tree(rows, labels, cfg=ForestConfig(), rng=None, presorted=None):
    """Grow one tree on all rows (no bootstrap). ``rng`` seeds feature sampling."""
    X, y = _prepare(rows, labels)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    seeds = np.array([rng.integers(0, 2 ** 63, dtype=np.int64)], dtype=np.uint64)
    presorted = presort(X) if presorted is None else presorted
    return _grow(X, y, np.ones((1, X.shape[0]), dtype=np.int64), presorted, cfg, seeds)[0]


def tree_streams(seed, n_trees, n_rows, bootstrap):
    """Per-tree row weights and feature-sampling seeds.

    Tree t draws from ``default_rng([seed, t])`` only, so results do not
    depend on how trees are scheduled.
    """
    weights = np.ones((n_trees, n_rows), dtype=np.int64)
    seeds = np.empty(n_trees, dtype=np.uint64)
    for t in range(n_trees):
        rng = np.random.default_rng([int(seed), t])
        if bootstrap:
            weights[t] = np.bincount(rng.integers(0, n_rows, n_rows), minlength=n_rows)
        seeds[t] = rng.integers(0, 2 ** 63, dtype=np.int64)
    return weights, seeds


@dataclass
class ForestModel:
    trees: list
    config: ForestConfig
    cv_scores: list = field(default_factory=list)   # rows from grid_search
    n_features: int = 0
    meta: dict = field(default_factory=dict)

    def _stacked(self):
        cached = getattr(self, "_stack_cache", None)
        if cached is None:
            cap = max(t.n_nodes for t in self.trees)
            arrs = []
            for name, fill in (("feature", _tree.LEAF), ("threshold", 0.0), ("left", _tree.LEAF),
                               ("right", _tree.LEAF), ("value", 0.0)):
                dtype = getattr(self.trees[0], name).dtype
                a = np.full((len(self.trees), cap), fill, dtype=dtype)
                for k, t in enumerate(self.trees):
                    a[k, :t.n_nodes] = getattr(t, name)
                arrs.append(a)
            cached = tuple(arrs)
            self._stack_cache = cached
        return cached

    def votes(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features")
        return _tree.forest_votes(X, *self._stacked())

    def predict_proba(self, X):
        """Fraction of trees voting high."""
        return self.votes(X) / len(self.trees)

    def predict(self, X):
        # strict majority; an even split goes to class 0
        return (2 * self.votes(X) > len(self.trees)).astype(np.int64)


def fit_forest(X, y, cfg=ForestConfig(), presorted=None):
    X, y = _prepare(X, y)
    if len(np.unique(y)) < 2:
        raise SingleClassData("forest training data contains a single class")
    weights, seeds = tree_streams(cfg.seed, cfg.n_trees, X.shape[0], cfg.bootstrap)
    presorted = presort(X) if presorted is None else presorted
    return ForestModel(_grow(X, y, weights, presorted, cfg, seeds), cfg, n_features=X.shape[1])


def expand_grid(grid):
    """Configs in deterministic enumeration order (last field varies fastest)."""
    unknown = set(grid) - set(GRID_FIELDS)
    if unknown:
        raise DataError(f"unknown grid fields {sorted(unknown)}")
    lists = [list(grid.get(f, [getattr(ForestConfig(), f)])) for f in GRID_FIELDS]
    if any(len(v) == 0 for v in lists):
        raise DataError("every grid field needs at least one value")
    for combo in itertools.product(*lists):
        yield dict(zip(GRID_FIELDS, combo))


def grid_search(X, y, grid=None, folds=3, seed=0):
    """Score every grid cell by mean stratified k-fold accuracy.

    Returns ``(best ForestModel refit on all rows, score rows)``. Ties go to
    the earliest cell in enumeration order. Fold fits of cell g use seed
    ``[seed, g]``; the final refit uses ``seed``.
    """
    X, y = _prepare(X, y)
    grid = DEFAULT_GRID if grid is None else grid
    if folds < 2:
        raise DataError("folds must be >= 2")
    counts = np.bincount(y, minlength=2)
    if counts.min() < folds:
        raise FoldTooSmall(f"class counts {counts.tolist()} cannot fill {folds} stratified folds")
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    fold_data = []
    for tr, va in splitter.split(X, y):
        if len(np.unique(y[tr])) < 2 or len(np.unique(y[va])) < 2:
            raise FoldTooSmall("a cross-validation fold lacks a class")
        Xtr = np.ascontiguousarray(X[tr])
        fold_data.append((Xtr, y[tr], presort(Xtr), np.ascontiguousarray(X[va]), y[va]))

    rows = []
    best_idx, best_mean = -1, -np.inf
    for g, params in enumerate(expand_grid(grid)):
        scores = []
        for f, (Xtr, ytr, presorted, Xva, yva) in enumerate(fold_data):
            cfg = ForestConfig(**params, seed=_cell_seed(seed, g, f))
            model = fit_forest(Xtr, ytr, cfg, presorted=presorted)
            scores.append(float(np.mean(model.predict(Xva) == yva)))
        mean = float(np.mean(scores))
        rows.append({**ForestConfig(**params).as_dict(), "fold_scores": scores, "mean": mean})
        log.debug("grid cell %d %s -> %.4f", g, params, mean)
        if mean > best_mean:
            best_idx, best_mean = g, mean
    best_params = {k: rows[best_idx][k] for k in GRID_FIELDS}
    best = fit_forest(X, y, ForestConfig(**best_params, seed=seed))
    best.cv_scores = rows
    return best, rows


def _cell_seed(seed, cell, fold):
    return int(np.random.SeedSequence([int(seed), cell, fold]).generate_state(1, np.uint32)[0])


def write_scores_csv(rows, path):
    k = max((len(r["fold_scores"]) for r in rows), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*GRID_FIELDS, *(f"fold_{i + 1}" for i in range(k)), "mean"])
        for r in rows:
            depth = "none" if r["max_depth"] is None else r["max_depth"]
            w.writerow([r["n_trees"], depth, r["min_samples_split"], r["min_samples_leaf"],
                        r["max_features"], str(bool(r["bootstrap"])).lower(),
                        *(repr(s) for s in r["fold_scores"]), repr(r["mean"])])


# -- persistence ------------------------------------------------------------

def save_forest(model, path):
    """Write the GLRF container.

    Layout (little-endian): ``b"GLRF"``, u32 version, u32 feature count,
    u32 tree count; per tree u32 node count then node arrays: i32 feature
    (-1 for leaves), f64 threshold, i32 left, i32 right, f64 P(class 0),
    f64 P(class 1); finally u32 byte length + UTF-8 JSON holding the
    winning config, the CV score table and free-form metadata.
    """
    with open(path, "wb") as fh:
        fh.write(GLRF_MAGIC + struct.pack("<III", GLRF_VERSION, model.n_features, len(model.trees)))
        for t in model.trees:
            fh.write(struct.pack("<I", t.n_nodes))
            fh.write(t.feature.astype("<i4").tobytes())
            fh.write(t.threshold.astype("<f8").tobytes())
            fh.write(t.left.astype("<i4").tobytes())
            fh.write(t.right.astype("<i4").tobytes())
            fh.write((1.0 - t.value).astype("<f8").tobytes())
            fh.write(t.value.astype("<f8").tobytes())
        blob = json.dumps({"config": model.config.as_dict(), "cv_scores": model.cv_scores,
                           "meta": model.meta}, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)) + blob)


def load_forest(path):
    buf = open(path, "rb").read()
    if buf[:4] != GLRF_MAGIC:
        raise BadModelFile(f"{path}: not a GLRF model file")
    try:
        version, n_features, n_trees = struct.unpack_from("<III", buf, 4)
        if version != GLRF_VERSION:
            raise BadModelFile(f"{path}: unsupported GLRF version {version}")
        off = 16
        trees = []
        for _ in range(n_trees):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            parts = []
            for dtype, size in (("<i4", 4), ("<f8", 8), ("<i4", 4), ("<i4", 4), ("<f8", 8), ("<f8", 8)):
                parts.append(np.frombuffer(buf, dtype, n, off))
                off += size * n
            feat, thr, lft, rgt, _, p1 = parts
            trees.append(DecisionTree(feat.astype(np.int64), thr.astype(np.float64),
                                      lft.astype(np.int64), rgt.astype(np.int64),
                                      p1.astype(np.float64)))
        (ln,) = struct.unpack_from("<I", buf, off)
        blob = json.loads(buf[off + 4:off + 4 + ln].decode("utf-8"))
    except (struct.error, ValueError, KeyError) as exc:
        raise BadModelFile(f"{path}: corrupt GLRF file ({exc})") from exc
    for t in trees:
        internal = t.feature != _tree.LEAF
        if np.any(t.left[internal] >= t.n_nodes) or np.any(t.right[internal] >= t.n_nodes):
            raise BadModelFile(f"{path}: dangling child index")
    return ForestModel(trees, ForestConfig(**blob["config"]), blob["cv_scores"], n_features,
                       blob.get("meta", {}))


# -- estimators -------------------------------------------------------------

class GiniForestClassifier(ClassifierMixin, BaseEstimator):
    """Random forest over Gini trees with majority-vote prediction."""

    def __init__(self, n_trees=100, max_depth=None, min_samples_split=2, min_samples_leaf=1,
                 max_features="sqrt", bootstrap=True, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise SingleClassData(f"need exactly two classes, got {len(self.classes_)}")
        cfg = ForestConfig(**self.get_params())
        self.model_ = fit_forest(X, (y == self.classes_[1]).astype(np.int64), cfg)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model, classes=(0, 1)):
        est = cls(**{k: v for k, v in model.config.as_dict().items()})
        est.model_ = model
        est.classes_ = np.asarray(classes)
        est.n_features_in_ = model.n_features
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = self.model_.predict_proba(check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.model_.predict(check_array(X, dtype=np.float64))]


class ForestGridSearch(BaseEstimator):
    """Exhaustive grid search over :class:`GiniForestClassifier` parameters."""

    def __init__(self, param_grid=None, folds=3, seed=0):
        self.param_grid = param_grid
        self.folds = folds
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise SingleClassData(f"need exactly two classes, got {len(self.classes_)}")
        model, rows = grid_search(X, (y == self.classes_[1]).astype(np.int64),
                                  self.param_grid, self.folds, self.seed)
        self.cv_results_ = rows
        self.best_params_ = {k: model.config.as_dict()[k] for k in GRID_FIELDS}
        self.best_score_ = max(r["mean"] for r in rows)
        self.best_estimator_ = GiniForestClassifier.from_model(model, self.classes_)
        return self

    def predict(self, X):
        check_is_fitted(self, "best_estimator_")
        return self.best_estimator_.predict(X)

    def predict_proba(self, X):
        check_is_fitted(self, "best_estimator_")
        return self.best_estimator_.predict_proba(X)


def load_grid(path):
    """Grid file: JSON object mapping field name to a list of values (null = unbounded depth)."""
    with open(path, encoding="utf-8") as fh:
        grid = json.load(fh)
    if not isinstance(grid, dict):
        raise DataError(f"{path}: grid must be a JSON object")
    list(expand_grid(grid))
    return grid
