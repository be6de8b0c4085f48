"""Random-forest regression ("ForestLite") with numba-compiled tree loops.

Trees are grown depth-first on bootstrap resamples. At every node a random
subset of ``max_features`` input coordinates is searched exhaustively for
the threshold that maximises the reduction in summed squared error over all
output columns. Leaves store the mean target of their rows.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _seed_numba(seed):
    np.random.seed(seed)


@njit(cache=True)
def _choose_features(d, k):
    perm = np.arange(d)
    for i in range(k):
        j = i + np.random.randint(d - i)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm[:k]


@njit(cache=True)
def _best_split(X, Y, idx, features, min_leaf):
    m = idx.shape[0]
    q = Y.shape[1]
    total = np.zeros(q)
    for a in range(m):
        for o in range(q):
            total[o] += Y[idx[a], o]
    base = 0.0
    for o in range(q):
        base += total[o] * total[o] / m
    best_gain = 1e-12
    best_feat = -1
    best_thr = 0.0
    left = np.zeros(q)
    for f in features:
        vals = np.empty(m)
        for a in range(m):
            vals[a] = X[idx[a], f]
        order = np.argsort(vals, kind="mergesort")
        left[:] = 0.0
        for a in range(m - 1):
            r = idx[order[a]]
            for o in range(q):
                left[o] += Y[r, o]
            nl = a + 1
            nr = m - nl
            if nl < min_leaf:
                continue
            if nr < min_leaf:
                break
            v0 = vals[order[a]]
            v1 = vals[order[a + 1]]
            if v1 <= v0:
                continue
            score = 0.0
            for o in range(q):
                rs = total[o] - left[o]
                score += left[o] * left[o] / nl + rs * rs / nr
            gain = score - base
            if gain > best_gain:
                best_gain = gain
                best_feat = f
                best_thr = 0.5 * (v0 + v1)
    return best_feat, best_thr


@njit(cache=True)
def _grow_tree(X, Y, rows, max_depth, min_leaf, max_features, cap):
    d = X.shape[1]
    q = Y.shape[1]
    feat = np.full(cap, LEAF, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros((cap, q))

    # explicit stack of (node id, depth, start, stop) over a row buffer
    buf = rows.copy()
    stack = np.zeros((cap, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = 0
    stack[0, 3] = buf.shape[0]
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        depth = stack[top, 1]
        start = stack[top, 2]
        stop = stack[top, 3]
        idx = buf[start:stop]
        m = stop - start
        for a in range(m):
            for o in range(q):
                value[node, o] += Y[idx[a], o]
        for o in range(q):
            value[node, o] /= m
        if depth >= max_depth or m < 2 * min_leaf:
            continue
        features = _choose_features(d, max_features)
        f, t = _best_split(X, Y, idx, features, min_leaf)
        if f < 0:
            continue
        # partition rows in place
        lo = start
        hi = stop - 1
        while lo <= hi:
            if X[buf[lo], f] <= t:
                lo += 1
            else:
                tmp = buf[lo]
                buf[lo] = buf[hi]
                buf[hi] = tmp
                hi -= 1
        feat[node] = f
        thr[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes
        stack[top, 1] = depth + 1
        stack[top, 2] = start
        stack[top, 3] = lo
        stack[top + 1, 0] = n_nodes + 1
        stack[top + 1, 1] = depth + 1
        stack[top + 1, 2] = lo
        stack[top + 1, 3] = stop
        top += 2
        n_nodes += 2
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _grow_forest(X, Y, n_trees, max_depth, min_leaf, max_features, bootstrap, seed, cap):
    np.random.seed(seed)
    n = X.shape[0]
    q = Y.shape[1]
    feat = np.full((n_trees, cap), LEAF, dtype=np.int64)
    thr = np.zeros((n_trees, cap))
    left = np.full((n_trees, cap), LEAF, dtype=np.int64)
    right = np.full((n_trees, cap), LEAF, dtype=np.int64)
    value = np.zeros((n_trees, cap, q))
    for t in range(n_trees):
        if bootstrap:
            rows = np.empty(n, dtype=np.int64)
            for a in range(n):
                rows[a] = np.random.randint(n)
        else:
            rows = np.arange(n)
        f, th, l, r, v = _grow_tree(X, Y, rows, max_depth, min_leaf, max_features, cap)
        k = f.shape[0]
        feat[t, :k] = f
        thr[t, :k] = th
        left[t, :k] = l
        right[t, :k] = r
        value[t, :k] = v
    return feat, thr, left, right, value


@njit(cache=True)
def _tree_depths(feat, left):
    n_trees, cap = feat.shape
    depths = np.zeros(n_trees, dtype=np.int64)
    level = np.zeros(cap, dtype=np.int64)
    for t in range(n_trees):
        level[:] = 0
        deepest = 0
        for node in range(cap):
            if feat[t, node] != LEAF:
                c = left[t, node]
                level[c] = level[node] + 1
                level[c + 1] = level[node] + 1
                if level[c] > deepest:
                    deepest = level[c]
        depths[t] = deepest
    return depths


@njit(cache=True)
def _predict_forest(X, feat, thr, child, depths, value):
    # Leaves point to themselves with an infinite threshold, so every
    # sample can take exactly depths[t] steps without branching; samples are
    # independent, which lets the CPU overlap their load chains.
    n = X.shape[0]
    n_trees = feat.shape[0]
    q = value.shape[2]
    out = np.zeros((n, q))
    node = np.zeros(n, dtype=np.int32)
    for t in range(n_trees):
        ft = feat[t]
        th = thr[t]
        ch = child[t]
        node[:] = 0
        for _ in range(depths[t]):
            for i in range(n):
                k = node[i]
                node[i] = ch[k] + (X[i, ft[k]] > th[k])
        for i in range(n):
            for o in range(q):
                out[i, o] += value[t, node[i], o]
    for i in range(n):
        for o in range(q):
            out[i, o] /= n_trees
    return out


class ForestRegressor:
    """Bagged regression trees.

    Parameters
    ----------
    n_trees : int, default=50
    max_depth : int, default=8
    min_leaf : int, default=5
        Minimum number of rows in each child of a split.
    max_features : int, "sqrt" or "all", default="sqrt"
        Number of coordinates searched per node.
    bootstrap : bool, default=True
    seed : int
    """

    def __init__(self, n_trees=50, max_depth=8, min_leaf=5, max_features="sqrt",
                 bootstrap=True, seed=0):
        if n_trees < 1 or max_depth < 0 or min_leaf < 1:
            raise ValueError("n_trees, min_leaf must be positive and max_depth nonnegative")
        self.n_trees = int(n_trees)
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)
        self.max_features = max_features
        self.bootstrap = bool(bootstrap)
        self.seed = int(seed)

    def fit(self, X, Y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        self.vector_output_ = Y.ndim == 2
        Y = np.ascontiguousarray(Y.reshape(Y.shape[0], -1))
        d = X.shape[1]
        if self.max_features == "sqrt":
            k = max(1, int(math.floor(math.sqrt(d))))
        elif self.max_features == "all":
            k = d
        else:
            k = int(self.max_features)
        k = min(max(k, 1), d)
        # a binary tree over n rows has at most 2n - 1 nodes
        cap = min(2 ** (min(self.max_depth, 40) + 1), 2 * X.shape[0] + 1)
        feat, thr, left, right, value = _grow_forest(
            X, Y, self.n_trees, self.max_depth, self.min_leaf, k, self.bootstrap,
            self.seed % (2 ** 32), cap)
        depths = _tree_depths(feat, left)
        leaf = feat == LEAF
        self_index = np.broadcast_to(np.arange(feat.shape[1]), feat.shape)
        self.trees_ = (np.where(leaf, 0, feat).astype(np.int32), np.where(leaf, np.inf, thr),
                       np.where(leaf, self_index, left).astype(np.int32), depths,
                       np.ascontiguousarray(value))
        return self

    def predict(self, X):
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = _predict_forest(X, *self.trees_)
        return out if self.vector_output_ else out[:, 0]
