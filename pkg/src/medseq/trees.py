"""Depth-limited regression trees with exact variance-reduction splits.

Trees are grown level by level on presorted feature orders, so a boosting
run sorts the design matrix once.  The inner loops are compiled with numba.
Among equal gains the first feature, then the lowest cut position, wins,
which keeps fits reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict_tree(
            np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
            self.left, self.right, self.value,
        )


@numba.njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@numba.njit(cache=True)
def _best_split(X, order, node_of, node, resid, w, min_leaf):
    """Best ``(gain, feature, threshold)`` for the rows currently in ``node``."""
    n, p = X.shape
    W = 0.0
    R = 0.0
    N = 0
    sst = 0.0
    for i in range(n):
        if node_of[i] == node:
            W += w[i]
            R += w[i] * resid[i]
            N += 1
            sst += w[i] * resid[i] * resid[i]
    best_gain = -1.0
    best_j = -1
    best_thr = 0.0
    if N < 2 * min_leaf or W <= 0.0:
        return best_gain, best_j, best_thr
    base = R * R / W
    for j in range(p):
        cw = 0.0
        cr = 0.0
        cn = 0
        prev = -1
        for k in range(n):
            i = order[k, j]
            if node_of[i] != node:
                continue
            if prev >= 0 and X[i, j] > X[prev, j] and cn >= min_leaf and N - cn >= min_leaf:
                wr = W - cw
                if cw > 0.0 and wr > 0.0:
                    gain = cr * cr / cw + (R - cr) * (R - cr) / wr - base
                    if gain > best_gain:
                        best_gain = gain
                        best_j = j
                        best_thr = 0.5 * (X[prev, j] + X[i, j])
            cw += w[i]
            cr += w[i] * resid[i]
            cn += 1
            prev = i
    if best_j < 0 or best_gain <= 1e-12 * sst or best_gain <= 1e-300:
        return -1.0, -1, 0.0
    return best_gain, best_j, best_thr


@numba.njit(cache=True)
def _grow(X, order, resid, w, max_depth, min_leaf, feature, threshold, left, right, value):
    """Fill the node arrays in place; returns the node count."""
    n = X.shape[0]
    node_of = np.zeros(n, dtype=np.int64)
    feature[0] = -1
    count = 1
    start = 0
    stop = 1
    for _ in range(max_depth):
        grown = False
        for node in range(start, stop):
            gain, j, thr = _best_split(X, order, node_of, node, resid, w, min_leaf)
            if j < 0:
                continue
            lid = count
            rid = count + 1
            count += 2
            feature[node] = j
            threshold[node] = thr
            left[node] = lid
            right[node] = rid
            feature[lid] = -1
            feature[rid] = -1
            for i in range(n):
                if node_of[i] == node:
                    node_of[i] = lid if X[i, j] <= thr else rid
            grown = True
        if not grown:
            break
        start = stop
        stop = count
    sw = np.zeros(count)
    sr = np.zeros(count)
    for i in range(n):
        sw[node_of[i]] += w[i]
        sr[node_of[i]] += w[i] * resid[i]
    for k in range(count):
        value[k] = sr[k] / sw[k] if feature[k] < 0 and sw[k] > 0 else 0.0
    return count


def grow_tree(X: np.ndarray, order: np.ndarray, resid: np.ndarray, w: np.ndarray,
              max_depth: int, min_leaf: int) -> Tree:
    size = 2 ** (max_depth + 1) - 1
    feature = np.full(size, -1, dtype=np.int64)
    threshold = np.zeros(size)
    left = np.full(size, -1, dtype=np.int64)
    right = np.full(size, -1, dtype=np.int64)
    value = np.zeros(size)
    count = _grow(X, order, resid, w, max_depth, min_leaf, feature, threshold, left, right, value)
    return Tree(feature[:count], threshold[:count], left[:count], right[:count], value[:count],
                max_depth)


@dataclass(frozen=True)
class BoostedEnsemble:
    init: float
    shrinkage: float
    trees: tuple[Tree, ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.full(len(X), self.init)
        for tree in self.trees:
            out += self.shrinkage * tree.predict(X)
        return out


def boost(X: np.ndarray, y: np.ndarray, w: np.ndarray, rounds: int, max_depth: int,
          shrinkage: float, min_leaf: int) -> BoostedEnsemble:
    """Least-squares gradient boosting."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    init = float(np.sum(w * y) / np.sum(w))
    pred = np.full(len(y), init)
    trees = []
    for _ in range(rounds):
        tree = grow_tree(X, order, y - pred, w, max_depth, min_leaf)
        if tree.feature[0] < 0:
            break  # no admissible split: later rounds would repeat this stump
        trees.append(tree)
        pred += shrinkage * tree.predict(X)
    return BoostedEnsemble(init=init, shrinkage=shrinkage, trees=tuple(trees))
