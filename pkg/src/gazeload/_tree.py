"""Compiled kernels for Gini decision trees.

Trees are flat node arrays. ``feature[k] == -1`` marks a leaf; internal
nodes send a row left when ``x[feature] <= threshold``. ``value[k]`` is the
weighted class-1 fraction of the training rows that reached node k.
"""
import numpy as np
from numba import njit

LEAF = -1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _splitmix(state):
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _draw_features(perm, mtry, state, out):
    """Partial Fisher-Yates: mtry distinct features into out, ascending."""
    d = perm.shape[0]
    for i in range(mtry):
        j = i + np.int64(_splitmix(state) % np.uint64(d - i))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        out[i] = perm[i]
    out[:mtry].sort()


@njit(cache=True, nogil=True)
def _children_impurity(lw, l1, rw, r1):
    """n_left * gini_left + n_right * gini_right, from weighted class counts."""
    l0 = lw - l1
    r0 = rw - r1
    return (lw - (l0 * l0 + l1 * l1) / lw) + (rw - (r0 * r0 + r1 * r1) / rw)


@njit(cache=True, nogil=True)
def _scan_sorted(vals, ws, ys, m, wn, w1, min_leaf, best_imp, tol):
    """Best threshold over one feature's node values (already sorted).

    Returns (impurity, threshold); impurity is +inf when no admissible cut
    improves on ``best_imp - tol``.
    """
    best = np.inf
    thr = 0.0
    lw = 0.0
    l1 = 0.0
    for k in range(m - 1):
        lw += ws[k]
        l1 += ws[k] * ys[k]
        if vals[k + 1] <= vals[k]:
            continue
        rw = wn - lw
        if lw < min_leaf or rw < min_leaf:
            continue
        imp = _children_impurity(lw, l1, rw, w1 - l1)
        if imp < best_imp - tol and imp < best - tol:
            best = imp
            t = 0.5 * (vals[k] + vals[k + 1])
            if t >= vals[k + 1]:
                t = vals[k]
            thr = t
    return best, thr


@njit(cache=True, nogil=True)
def build_tree(XT, sorted_vals, y, w, order, max_depth, min_split, min_leaf, mtry, seed,
               feature, threshold, left, right, value):
    """Grow one tree into the preallocated node arrays; returns the node count.

    ``XT`` is the feature-major (n_features, n_rows) data matrix, ``order``
    the matching per-feature argsorts and ``sorted_vals`` the values in that
    order.
    ``w`` holds integer row weights (bootstrap counts); rows with w == 0 are
    out of the sample. Ties in impurity go to the lowest feature index, then
    the lowest threshold.
    """
    d, n = XT.shape
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    perm = np.arange(d)
    cand = np.empty(d, dtype=np.int64)

    samples = np.empty(n, dtype=np.int64)
    node_of = np.full(n, -1, dtype=np.int64)
    m_total = 0
    for i in range(n):
        if w[i] > 0:
            samples[m_total] = i
            node_of[i] = 0
            m_total += 1

    vals = np.empty(n)
    ws = np.empty(n)
    ys = np.empty(n)
    tmpv = np.empty(n)
    tmpi = np.empty(n, dtype=np.int64)

    # stack entries: node id, start, end, depth
    stack = np.empty((2 * n + 2, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m_total
    stack[0, 3] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]

        wn = 0.0
        w1 = 0.0
        for k in range(start, end):
            i = samples[k]
            wn += w[i]
            w1 += w[i] * y[i]
        value[node] = w1 / wn if wn > 0 else 0.0
        feature[node] = LEAF
        left[node] = LEAF
        right[node] = LEAF
        if (max_depth >= 0 and depth >= max_depth) or wn < min_split \
                or wn < 2 * min_leaf or w1 == 0.0 or w1 == wn:
            continue

        m = end - start
        use_presort = m * np.log2(m + 1.0) * 2.0 > n
        _draw_features(perm, mtry, state, cand)
        tol = 1e-12 * max(1.0, wn)
        best_imp = np.inf
        best_f = -1
        best_t = 0.0
        for c in range(mtry):
            f = cand[c]
            if use_presort:
                j = 0
                for q in range(n):
                    i = order[f, q]
                    if node_of[i] == node:
                        vals[j] = sorted_vals[f, q]
                        ws[j] = w[i]
                        ys[j] = y[i]
                        j += 1
            else:
                for k in range(m):
                    tmpv[k] = XT[f, samples[start + k]]
                idx = np.argsort(tmpv[:m], kind="mergesort")
                for k in range(m):
                    i = samples[start + idx[k]]
                    vals[k] = XT[f, i]
                    ws[k] = w[i]
                    ys[k] = y[i]
            imp, t = _scan_sorted(vals, ws, ys, m, wn, w1, min_leaf, best_imp, tol)
            if imp < best_imp - tol:
                best_imp = imp
                best_f = f
                best_t = t
        if best_f < 0:
            continue

        # stable partition of samples[start:end] by the chosen split
        lo = start
        nr = 0
        for k in range(start, end):
            i = samples[k]
            if XT[best_f, i] <= best_t:
                samples[lo] = i
                lo += 1
            else:
                tmpi[nr] = i
                nr += 1
        for k in range(nr):
            samples[lo + k] = tmpi[k]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = lid
        right[node] = rid
        for k in range(start, lo):
            node_of[samples[k]] = lid
        for k in range(lo, end):
            node_of[samples[k]] = rid
        # right pushed first so the left subtree is grown first
        stack[top, 0] = rid
        stack[top, 1] = lo
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lid
        stack[top, 1] = start
        stack[top, 2] = lo
        stack[top, 3] = depth + 1
        top += 1
    return n_nodes


@njit(cache=True, nogil=True)
def build_forest(XT, sorted_vals, y, weights, order, max_depth, min_split, min_leaf, mtry, seeds,
                 feature, threshold, left, right, value, counts):
    for t in range(weights.shape[0]):
        counts[t] = build_tree(XT, sorted_vals, y, weights[t], order, max_depth, min_split, min_leaf,
                               mtry, seeds[t], feature[t], threshold[t], left[t], right[t],
                               value[t])


@njit(cache=True, nogil=True)
def tree_leaf_values(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        k = 0
        while feature[k] != LEAF:
            if X[r, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[r] = value[k]
    return out


@njit(cache=True, nogil=True)
def forest_votes(X, feature, threshold, left, right, value):
    """Number of trees voting class 1 (leaf fraction > 0.5) for each row."""
    n = X.shape[0]
    votes = np.zeros(n, dtype=np.int64)
    for t in range(feature.shape[0]):
        for r in range(n):
            k = 0
            while feature[t, k] != LEAF:
                if X[r, feature[t, k]] <= threshold[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            if value[t, k] > 0.5:
                votes[r] += 1
    return votes
