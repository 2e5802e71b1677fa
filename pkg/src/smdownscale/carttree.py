"""Least-squares regression trees (CART) with an absolute-improvement stop rule.

A node is split on the feature/threshold pair that maximises the drop in
the within-node sum of squared errors

    E(node) = n * Var(node) = sum_i (y_i - mean(y))^2

and growth stops when the best available drop is below
``min_error_decrease`` (0.01 by default, in target units squared), when a
child would hold fewer than ``min_leaf_count`` rows, or at ``max_depth``.

Candidate thresholds are midpoints between consecutive distinct values of
a feature.  Ties between candidates go to the lower feature index, then
the lower threshold.  Each feature is presorted once per tree by
(feature value, target) and the orderings are partitioned stably as the
tree grows, so the fitted tree does not depend on the order of the
training rows.

Fitting and batch prediction run in numba kernels compiled with
``nogil=True`` so that an ensemble can grow trees on several threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

import numba
import numpy as np

from .errors import DataError, SchemaError

#: relative slack under which two split gains count as tied
TIE_EPS = 1e-12


@dataclass(frozen=True)
class FitParams:
    min_error_decrease: float = 0.01
    min_leaf_count: int = 5
    max_depth: Optional[int] = None

    def __post_init__(self):
        if not self.min_error_decrease >= 0:
            raise ValueError("min_error_decrease must be >= 0")
        if self.min_leaf_count < 1:
            raise ValueError("min_leaf_count must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")

    def to_dict(self) -> dict:
        return {
            "min_error_decrease": self.min_error_decrease,
            "min_leaf_count": self.min_leaf_count,
            "max_depth": self.max_depth,
        }


@dataclass(frozen=True)
class Leaf:
    prediction: float
    count: int
    variance: float


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Split, Leaf]


# -- kernels -----------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _scan(f, xs, cs, total, base, min_leaf, best_f, best_t, best_d):
    """Fold feature ``f`` (values ``xs`` ascending, centred targets ``cs``) into the incumbent."""
    m = xs.shape[0]
    left = 0.0
    for i in range(m - 1):
        left += cs[i]
        n_left = i + 1
        n_right = m - n_left
        if n_right < min_leaf:
            break
        if n_left < min_leaf:
            continue
        lo = xs[i]
        hi = xs[i + 1]
        if not lo < hi:
            continue
        right = total - left
        dec = left * left / n_left + right * right / n_right - base
        if best_f < 0 or dec > best_d + TIE_EPS * max(1.0, abs(best_d)):
            thr = 0.5 * (lo + hi)
            if thr >= hi:
                thr = lo
            best_f = f
            best_t = thr
            best_d = dec
    return best_f, best_t, best_d


@numba.njit(cache=True, nogil=True)
def _search(X, y, rows, min_leaf, min_dec):
    """Best (feature, threshold, decrease) over ``rows``; feature -1 if none."""
    m = rows.shape[0]
    if m < 2 * min_leaf:
        return -1, 0.0, 0.0
    yr = y[rows]
    oy = np.argsort(yr, kind="mergesort")
    srows = rows[oy]
    ys = yr[oy]
    mean = ys.sum() / m
    c = ys - mean
    total = c.sum()
    base = total * total / m
    best_f = -1
    best_t = 0.0
    best_d = -np.inf
    xv = np.empty(m)
    for f in range(X.shape[1]):
        for i in range(m):
            xv[i] = X[srows[i], f]
        o = np.argsort(xv, kind="mergesort")
        best_f, best_t, best_d = _scan(f, xv[o], c[o], total, base, min_leaf, best_f, best_t, best_d)
    if best_f < 0 or best_d < min_dec:
        return -1, 0.0, 0.0
    return best_f, best_t, best_d


@numba.njit(cache=True, nogil=True)
def _grow(X, y, rows0, min_leaf, min_dec, max_depth):
    n = rows0.shape[0]
    F = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    variance = np.zeros(cap)

    # order[F] holds sample positions sorted by target; order[f] by
    # (X[:, f], target).  Samples tied on both carry equal targets, so
    # every sum below is independent of the input row order.
    yv = y[rows0]
    order = np.empty((F + 1, n), dtype=np.int64)
    oy = np.argsort(yv, kind="mergesort")
    order[F] = oy
    xv = np.empty(n)
    for f in range(F):
        for i in range(n):
            xv[i] = X[rows0[oy[i]], f]
        o = np.argsort(xv, kind="mergesort")
        for i in range(n):
            order[f, i] = oy[o[i]]

    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(n, dtype=np.int64)
    xs = np.empty(n)
    cs = np.empty(n)
    # stack of (node id, start, stop, depth)
    stack = np.empty((cap, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        start = stack[sp, 1]
        stop = stack[sp, 2]
        depth = stack[sp, 3]
        m = stop - start
        ys = yv[order[F, start:stop]]
        mean = ys.sum() / m
        c = ys - mean
        value[node] = mean
        variance[node] = (c * c).sum() / m
        count[node] = m
        if max_depth >= 0 and depth >= max_depth:
            continue
        if m < 2 * min_leaf:
            continue
        total = c.sum()
        base = total * total / m
        best_f = -1
        best_t = 0.0
        best_d = -np.inf
        for f in range(F):
            for i in range(m):
                p = order[f, start + i]
                xs[i] = X[rows0[p], f]
                cs[i] = yv[p] - mean
            best_f, best_t, best_d = _scan(f, xs[:m], cs[:m], total, base, min_leaf, best_f, best_t, best_d)
        if best_f < 0 or best_d < min_dec:
            continue
        nl = 0
        for i in range(start, stop):
            p = order[F, i]
            goes_left[p] = X[rows0[p], best_f] <= best_t
            if goes_left[p]:
                nl += 1
        # stable partition of every ordering
        for f in range(F + 1):
            a = 0
            b = nl
            for i in range(start, stop):
                p = order[f, i]
                if goes_left[p]:
                    buf[a] = p
                    a += 1
                else:
                    buf[b] = p
                    b += 1
            for i in range(m):
                order[f, start + i] = buf[i]
        feature[node] = best_f
        threshold[node] = best_t
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is grown first
        stack[sp, 0] = ri
        stack[sp, 1] = start + nl
        stack[sp, 2] = stop
        stack[sp, 3] = depth + 1
        sp += 1
        stack[sp, 0] = li
        stack[sp, 1] = start
        stack[sp, 2] = start + nl
        stack[sp, 3] = depth + 1
        sp += 1
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
        variance[:n_nodes].copy(),
    )


@numba.njit(cache=True, nogil=True)
def _predict(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


# -- public API ----------------------------------------------------------------


def node_error(targets) -> float:
    """Sum of squared deviations from the mean, i.e. ``n * Var`` (population)."""
    y = np.asarray(targets, dtype=np.float64)
    if y.size == 0:
        raise ValueError("node_error of an empty target set")
    if np.all(y == y[0]):
        return 0.0  # y.mean() can be off by an ulp
    d = y - y.mean()
    return float(d @ d)


def _as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SchemaError(f"feature matrix must be 2-D, got shape {X.shape}")
    return X


def _check_finite(X: np.ndarray, y: np.ndarray) -> None:
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"non-finite feature value at row {r}, column {c}")
    bad_y = ~np.isfinite(y)
    if bad_y.any():
        raise DataError(f"non-finite target at row {int(np.flatnonzero(bad_y)[0])}")


def best_split(X, y, node_rows, params: FitParams = FitParams()) -> Optional[tuple[int, float, float]]:
    """Best ``(feature, threshold, error_decrease)`` for the rows of one node.

    Returns ``None`` when the node is too small to give two children of
    ``min_leaf_count`` rows or no split reaches ``min_error_decrease``.
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    rows = np.ascontiguousarray(node_rows, dtype=np.int64)
    f, t, d = _search(X, y, rows, params.min_leaf_count, float(params.min_error_decrease))
    if f < 0:
        return None
    return int(f), float(t), float(d)


class RegressionTree:
    """A fitted tree in flat array form (pre-order node numbering, root = 0)."""

    def __init__(self, feature, threshold, left, right, value, count, variance, n_features: int):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.count = np.asarray(count, dtype=np.int64)
        self.variance = np.asarray(variance, dtype=np.float64)
        self.n_features = int(n_features)
        for a in (self.feature, self.threshold, self.left, self.right, self.value, self.count, self.variance):
            a.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        def _d(k):
            if self.feature[k] < 0:
                return 0
            return 1 + max(_d(self.left[k]), _d(self.right[k]))

        return _d(0)

    def training_error(self) -> float:
        """E summed over leaves, ``sum(n_l * Var(l))``."""
        lv = self.leaves
        return float((self.count[lv] * self.variance[lv]).sum())

    @property
    def root(self) -> TreeNode:
        def build(k: int) -> TreeNode:
            if self.feature[k] < 0:
                return Leaf(float(self.value[k]), int(self.count[k]), float(self.variance[k]))
            return Split(int(self.feature[k]), float(self.threshold[k]), build(self.left[k]), build(self.right[k]))

        return build(0)

    @classmethod
    def from_node(cls, root: TreeNode, n_features: int) -> "RegressionTree":
        cols = {k: [] for k in ("feature", "threshold", "left", "right", "value", "count", "variance")}

        def add(node: TreeNode) -> int:
            k = len(cols["feature"])
            for v in cols.values():
                v.append(0)
            if isinstance(node, Leaf):
                cols["feature"][k] = -1
                cols["left"][k] = cols["right"][k] = -1
                cols["value"][k] = node.prediction
                cols["count"][k] = node.count
                cols["variance"][k] = node.variance
                return k
            cols["feature"][k] = node.feature_index
            cols["threshold"][k] = node.threshold
            cols["left"][k] = add(node.left)
            cols["right"][k] = add(node.right)
            return k

        add(root)
        return cls(n_features=n_features, **cols)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} columns, got {X.shape[1]}")
        return _predict(self.feature, self.threshold, self.left, self.right, self.value, X)

    def apply(self, X) -> np.ndarray:
        """Leaf node id reached by each row."""
        X = _as_matrix(X)
        out = np.empty(X.shape[0], dtype=np.int64)
        for i, row in enumerate(X):
            k = 0
            while self.feature[k] >= 0:
                k = self.left[k] if row[self.feature[k]] <= self.threshold[k] else self.right[k]
            out[i] = k
        return out

    # -- serialisation

    def to_json_obj(self) -> dict:
        def enc(node: TreeNode) -> dict:
            if isinstance(node, Leaf):
                return {"leaf": {"p": node.prediction, "n": node.count, "var": node.variance}}
            return {"split": {"f": node.feature_index, "t": node.threshold}, "left": enc(node.left), "right": enc(node.right)}

        return {"n_features": self.n_features, "root": enc(self.root)}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "RegressionTree":
        def dec(d: dict) -> TreeNode:
            if "leaf" in d:
                lf = d["leaf"]
                return Leaf(float(lf["p"]), int(lf["n"]), float(lf["var"]))
            sp = d["split"]
            return Split(int(sp["f"]), float(sp["t"]), dec(d["left"]), dec(d["right"]))

        return cls.from_node(dec(obj["root"]), obj["n_features"])

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json(cls, text: str) -> "RegressionTree":
        return cls.from_json_obj(json.loads(text))


def fit_tree(X, y, params: FitParams = FitParams(), rows=None) -> RegressionTree:
    """Grow a tree on ``X``, ``y``.

    ``rows`` optionally lists the training rows (with repeats), which lets
    a bootstrap replicate be fitted without copying ``X``.
    """
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise SchemaError(f"{X.shape[0]} feature rows but {y.shape} targets")
    if y.shape[0] == 0:
        raise ValueError("cannot fit a tree on zero rows")
    _check_finite(X, y)
    if rows is None:
        rows = np.arange(X.shape[0], dtype=np.int64)
    else:
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        if rows.size == 0:
            raise ValueError("cannot fit a tree on zero rows")
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    arrays = _grow(X, y, rows, params.min_leaf_count, float(params.min_error_decrease), max_depth)
    return RegressionTree(*arrays, n_features=X.shape[1])


def predict(tree: RegressionTree, x) -> float:
    """Prediction for a single feature row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != tree.n_features:
        raise SchemaError(f"expected a row of {tree.n_features} values, got shape {x.shape}")
    return float(tree.predict(x[None, :])[0])
