"""Bootstrap-aggregated regression trees (numba kernels).

Trees grow with variance-reduction splits until the minimum leaf size caps
growth; there is no depth cap. All randomness (bootstrap draws and candidate
features per split) comes from one SplitMix64 stream per tree, so a forest is
reproducible from its per-tree seed vector alone, independent of platform,
thread count, and row order of unrelated computations.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _next_u64(state):
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _rand_below(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@njit(cache=True)
def _build_tree(X, y, min_leaf, mtry, seed, feature, thresh, left, right, value):
    """Grow one tree on a bootstrap sample; returns the number of nodes used."""
    n, v = X.shape
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed

    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        idx[i] = _rand_below(state, n)

    # explicit DFS stack of (node id, start, end) over idx
    cap = 2 * n + 1
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    feat_perm = np.empty(v, dtype=np.int64)
    xs = np.empty(n, dtype=np.float64)
    ys = np.empty(n, dtype=np.float64)
    buf = np.empty(n, dtype=np.int64)

    n_nodes = 1
    sp = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        m = hi - lo

        total = 0.0
        for i in range(lo, hi):
            total += y[idx[i]]
        mean = total / m
        value[node] = mean
        feature[node] = -1
        left[node] = -1
        right[node] = -1

        if m < 2 * min_leaf:
            continue

        parent_score = total * total / m
        best_score = parent_score + 1e-12 * (1.0 + abs(parent_score))
        best_feat = -1
        best_thresh = 0.0

        for j in range(v):
            feat_perm[j] = j
        n_try = mtry if mtry < v else v
        for t in range(n_try):
            r = t + _rand_below(state, v - t)
            f = feat_perm[r]
            feat_perm[r] = feat_perm[t]
            feat_perm[t] = f

            for i in range(m):
                xs[i] = X[idx[lo + i], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[idx[lo + order[i]]]

            s_left = 0.0
            for i in range(1, m):
                s_left += ys[i - 1]
                if xs[order[i]] <= xs[order[i - 1]]:
                    continue
                n_l = i
                n_r = m - i
                if n_l < min_leaf or n_r < min_leaf:
                    continue
                s_right = total - s_left
                score = s_left * s_left / n_l + s_right * s_right / n_r
                if score > best_score:
                    best_score = score
                    best_feat = f
                    best_thresh = 0.5 * (xs[order[i - 1]] + xs[order[i]])

        if best_feat < 0:
            continue

        # stable partition of idx[lo:hi] around the chosen threshold
        n_l = 0
        for i in range(lo, hi):
            if X[idx[i], best_feat] <= best_thresh:
                buf[n_l] = idx[i]
                n_l += 1
        n_r = n_l
        for i in range(lo, hi):
            if X[idx[i], best_feat] > best_thresh:
                buf[n_r] = idx[i]
                n_r += 1
        for i in range(m):
            idx[lo + i] = buf[i]

        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        thresh[node] = best_thresh
        left[node] = lchild
        right[node] = rchild

        stack_node[sp] = lchild
        stack_lo[sp] = lo
        stack_hi[sp] = lo + n_l
        sp += 1
        stack_node[sp] = rchild
        stack_lo[sp] = lo + n_l
        stack_hi[sp] = hi
        sp += 1

    return n_nodes


@njit(cache=True)
def build_forest(X, y, n_trees, min_leaf, mtry, seeds):
    """Fit ``n_trees`` trees; returns flat node arrays plus per-tree offsets."""
    n = X.shape[0]
    cap = 2 * n + 1
    feature = np.empty(n_trees * cap, dtype=np.int64)
    thresh = np.zeros(n_trees * cap, dtype=np.float64)
    left = np.empty(n_trees * cap, dtype=np.int64)
    right = np.empty(n_trees * cap, dtype=np.int64)
    value = np.empty(n_trees * cap, dtype=np.float64)
    offsets = np.zeros(n_trees + 1, dtype=np.int64)

    pos = 0
    for t in range(n_trees):
        used = _build_tree(
            X,
            y,
            min_leaf,
            mtry,
            seeds[t],
            feature[pos : pos + cap],
            thresh[pos : pos + cap],
            left[pos : pos + cap],
            right[pos : pos + cap],
            value[pos : pos + cap],
        )
        pos += used
        offsets[t + 1] = pos
    # nodes for tree t live at [offsets[t], offsets[t+1])
    return (
        feature[:pos].copy(),
        thresh[:pos].copy(),
        left[:pos].copy(),
        right[:pos].copy(),
        value[:pos].copy(),
        offsets,
    )


@njit(cache=True)
def predict_forest(Xq, feature, thresh, left, right, value, offsets):
    n_q = Xq.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n_q, dtype=np.float64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n_q):
            node = 0
            while feature[base + node] >= 0:
                if Xq[i, feature[base + node]] <= thresh[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += value[base + node]
    return out / n_trees
