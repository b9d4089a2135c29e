import json

import numpy as np
import pytest

from gazeload import _tree
from gazeload.errors import BadModelFile, EmptySet, FoldTooSmall, SingleClassData
from gazeload.forest import (DEFAULT_GRID, FULL_GRID, ForestConfig, ForestGridSearch,
                             GiniForestClassifier, expand_grid, fit_forest, fit_tree, gini,
                             grid_search, load_forest, load_grid, save_forest, write_scores_csv)

from oracles import exhaustive_root_split

ALL = ForestConfig(max_features="all", bootstrap=False)


def test_gini_examples():
    assert gini([0, 0, 1, 1]) == 0.5
    assert gini([1, 1, 1]) == 0
    assert gini([0, 0, 0, 1]) == pytest.approx(0.375)
    with pytest.raises(EmptySet):
        gini([])


def test_pure_input_is_single_leaf():
    t = fit_tree(np.random.default_rng(0).random((6, 2)), [1] * 6, ALL)
    assert t.n_nodes == 1 and t.feature[0] == _tree.LEAF and t.value[0] == 1.0


def test_one_d_threshold_split():
    x = np.linspace(-1, 1, 20)[:, None]
    y = (x[:, 0] >= 0).astype(int)
    t = fit_tree(x, y, ALL)
    assert t.depth() == 1
    assert np.array_equal(t.predict(x), y)
    assert -0.06 < t.threshold[0] < 0.06


def test_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(2024)
    checked = 0
    for trial in range(3000):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 4))
        X = rng.integers(0, 4, size=(n, d)).astype(float)
        if trial % 3 == 0:
            X += rng.normal(size=X.shape)
        y = rng.integers(0, 2, size=n)
        leaf = int(rng.integers(1, 3))
        cfg = ForestConfig(max_features="all", bootstrap=False, min_samples_leaf=leaf)
        t = fit_tree(X, y, cfg)
        ref = exhaustive_root_split(X, y, leaf)
        if ref is None:
            assert t.feature[0] == _tree.LEAF
        else:
            checked += 1
            assert (t.feature[0], t.threshold[0]) == (ref[0], float(ref[1])), (X, y, leaf)
    assert checked > 1000


def test_single_tree_equals_unbootstrapped_forest():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 5))
    y = (X[:, 0] + 0.5 * X[:, 3] > 0).astype(int)
    cfg = ForestConfig(n_trees=1, bootstrap=False, max_features="all", seed=1)
    f = fit_forest(X, y, cfg)
    t = fit_tree(X, y, cfg)
    Xq = rng.normal(size=(40, 5))
    assert np.array_equal(f.predict(Xq), t.predict(Xq))


def _xor(n=80, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    return X, ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)


def test_forest_determinism_and_separable_fit():
    X, y = _xor(seed=1)
    cfg = ForestConfig(n_trees=15, seed=4)
    a, b = fit_forest(X, y, cfg), fit_forest(X, y, cfg)
    for ta, tb in zip(a.trees, b.trees):
        assert ta.feature.tobytes() == tb.feature.tobytes()
        assert ta.threshold.tobytes() == tb.threshold.tobytes()
    full = fit_forest(X, y, ForestConfig(n_trees=15, bootstrap=False, seed=4))
    single = fit_tree(X, y, ForestConfig(bootstrap=False, seed=4))
    assert np.mean(full.predict(X) == y) == 1.0
    assert np.mean(full.predict(X) == y) >= np.mean(single.predict(X) == y)
    with pytest.raises(SingleClassData):
        fit_forest(X, np.zeros(len(y), int))


def test_tie_vote_goes_low():
    X, y = _xor(seed=2)
    f = fit_forest(X, y, ForestConfig(n_trees=2, seed=0))
    votes = f.votes(X)
    assert np.array_equal(f.predict(X), (votes == 2).astype(int))


def _walk_constraints(tree, X, w, cfg):
    rows = {0: np.repeat(np.arange(len(X)), w)}
    stack = [(0, 0)]
    while stack:
        k, depth = stack.pop()
        idx = rows[k]
        assert 0.0 <= tree.value[k] <= 1.0
        if tree.feature[k] == _tree.LEAF:
            assert len(idx) >= cfg.min_samples_leaf
            continue
        assert cfg.max_depth is None or depth < cfg.max_depth
        assert len(idx) >= cfg.min_samples_split
        go_left = X[idx, tree.feature[k]] <= tree.threshold[k]
        rows[tree.left[k]], rows[tree.right[k]] = idx[go_left], idx[~go_left]
        stack += [(tree.left[k], depth + 1), (tree.right[k], depth + 1)]


@pytest.mark.parametrize("depth,split,leaf", [(None, 2, 1), (3, 5, 2), (6, 10, 4), (1, 2, 1)])
def test_trees_respect_constraints(depth, split, leaf):
    from gazeload.forest import tree_streams
    rng = np.random.default_rng(7)
    X = rng.normal(size=(120, 6))
    y = (rng.random(120) < 0.5).astype(int)
    cfg = ForestConfig(n_trees=8, max_depth=depth, min_samples_split=split,
                       min_samples_leaf=leaf, seed=11)
    f = fit_forest(X, y, cfg)
    weights, _ = tree_streams(cfg.seed, cfg.n_trees, len(X), cfg.bootstrap)
    for t, w in zip(f.trees, weights):
        _walk_constraints(t, X, w, cfg)


def test_grid_single_cell_wins():
    X, y = _xor(60, 3)
    best, rows = grid_search(X, y, {"n_trees": [5], "max_depth": [2]}, folds=3, seed=0)
    assert len(rows) == 1 and best.config.n_trees == 5 and best.config.max_depth == 2


def test_grid_prefers_depth_on_xor():
    X, y = _xor(150, 4)
    grid = {"n_trees": [10], "max_depth": [1, None], "max_features": ["all"]}
    best, rows = grid_search(X, y, grid, folds=3, seed=1)
    assert best.config.max_depth is None
    assert abs(rows[0]["mean"] - 0.5) < 0.15 and rows[1]["mean"] > 0.9


def test_grid_counts_and_reproducible(tmp_path):
    X, y = _xor(60, 5)
    grid = {"n_trees": [3, 5], "max_depth": [None, 2, 4], "bootstrap": [True, False]}
    _, rows = grid_search(X, y, grid, seed=2)
    _, again = grid_search(X, y, grid, seed=2)
    assert len(rows) == 12 and rows == again
    assert all(len(r["fold_scores"]) == 3 for r in rows)
    for g in (FULL_GRID, DEFAULT_GRID):
        assert len(list(expand_grid(g))) == int(np.prod([len(v) for v in g.values()]))
    write_scores_csv(rows, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0].startswith("n_trees,max_depth") and len(lines) == 13


def test_fold_too_small():
    X = np.random.default_rng(0).random((10, 2))
    y = np.array([0] * 8 + [1] * 2)
    with pytest.raises(FoldTooSmall):
        grid_search(X, y, {"n_trees": [2]}, folds=3)


def test_glrf_roundtrip(tmp_path):
    X, y = _xor(50, 6)
    m, _ = grid_search(X, y, {"n_trees": [4], "max_depth": [None, 3]}, seed=0)
    m.meta = {"note": "x"}
    save_forest(m, tmp_path / "f.glrf")
    back = load_forest(tmp_path / "f.glrf")
    assert back.config == m.config and back.cv_scores == m.cv_scores and back.meta == m.meta
    assert np.array_equal(back.votes(X), m.votes(X))
    save_forest(back, tmp_path / "g.glrf")
    assert (tmp_path / "f.glrf").read_bytes() == (tmp_path / "g.glrf").read_bytes()
    raw = (tmp_path / "f.glrf").read_bytes()
    (tmp_path / "cut.glrf").write_bytes(raw[:50])
    with pytest.raises(BadModelFile):
        load_forest(tmp_path / "cut.glrf")


def test_estimators():
    X, y = _xor(120, 8)
    labels = np.where(y == 1, "hi", "lo")
    clf = GiniForestClassifier(n_trees=20, seed=3).fit(X, labels)
    assert clf.score(X, labels) > 0.95
    assert clf.predict_proba(X).shape == (120, 2)
    gs = ForestGridSearch({"n_trees": [5], "max_depth": [1, None]}, seed=0).fit(X, labels)
    assert gs.best_params_["max_depth"] is None and len(gs.cv_results_) == 2


def test_load_grid(tmp_path):
    p = tmp_path / "grid.json"
    p.write_text(json.dumps({"n_trees": [10], "max_depth": [None, 5]}))
    assert load_grid(p)["max_depth"] == [None, 5]
    p.write_text(json.dumps({"trees": [1]}))
    with pytest.raises(Exception):
        load_grid(p)
