"""Bagged regression trees with L1 ensemble pruning.

Each of the ``K`` trees is grown on a bootstrap replicate drawn with the
child seed ``derive_seed(master_seed, "tree", k)``, so tree ``k`` is the
same whatever ``K`` is and whichever thread grows it.

Pruning fits non-negative learner coefficients on validation data,

    minimise (1/N) * ||y - P @ alpha||^2 + beta * sum(alpha),  alpha >= 0,

where column ``k`` of ``P`` holds tree ``k``'s predictions.  The solver is
cyclic coordinate descent on the Gram matrix with a non-negative
soft-threshold update.  The budget form ``sum(alpha) <= 1 / lam`` is
reached by bisection on ``beta``.  Trees with ``alpha_k > 1e-10`` stay
active and, by default, the ensemble predicts the plain mean of its
active trees.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numba
import numpy as np

from .carttree import FitParams, RegressionTree, _as_matrix, _check_finite, fit_tree
from .errors import DataError, StateError
from .seeding import derive_seed, rng_for, rng_from_seed

log = logging.getLogger(__name__)

ACTIVE_EPS = 1e-10
CD_TOL = 1e-8
CD_MAX_SWEEPS = 10_000
DEFAULT_K = 50
DEFAULT_LAMBDA = 2e-2


def bootstrap_indices(n: int, seed: int) -> np.ndarray:
    """``n`` uniform draws from ``range(n)`` with replacement."""
    if n < 1:
        raise ValueError("bootstrap of an empty sample")
    return rng_from_seed(seed).integers(0, n, size=n, dtype=np.int64)


def tree_seeds(master_seed: int, K: int) -> list[int]:
    return [derive_seed(master_seed, "tree", k) for k in range(K)]


@dataclass
class Ensemble:
    trees: list[RegressionTree]
    tree_seeds: list[int]
    alpha: np.ndarray
    active: tuple[int, ...]
    lam: Optional[float] = None
    beta: Optional[float] = None
    params: FitParams = field(default_factory=FitParams)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.active = tuple(sorted(int(k) for k in self.active))
        K = len(self.trees)
        if not (len(self.tree_seeds) == K == self.alpha.shape[0]):
            raise ValueError("trees, tree_seeds and alpha must have equal length")
        if any(k < 0 or k >= K for k in self.active):
            raise ValueError("active index out of range")

    @property
    def K(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def tree_predictions(self, X, which: Optional[Sequence[int]] = None) -> np.ndarray:
        """``(n_rows, len(which))`` matrix of per-tree predictions."""
        X = _as_matrix(X)
        idx = range(self.K) if which is None else which
        if len(idx) == 0:
            return np.empty((X.shape[0], 0))
        return np.column_stack([self.trees[k].predict(X) for k in idx])

    # -- serialisation

    def to_json_obj(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "lambda": self.lam,
            "beta": self.beta,
            "tree_seeds": list(self.tree_seeds),
            "alpha": self.alpha.tolist(),
            "active": list(self.active),
            "trees": [t.to_json_obj() for t in self.trees],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Ensemble":
        return cls(
            trees=[RegressionTree.from_json_obj(t) for t in obj["trees"]],
            tree_seeds=[int(s) for s in obj["tree_seeds"]],
            alpha=np.asarray(obj["alpha"], dtype=np.float64),
            active=tuple(obj["active"]),
            lam=obj.get("lambda"),
            beta=obj.get("beta"),
            params=FitParams(**obj["params"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        return cls.from_json_obj(json.loads(text))


def _fit_pool(X, y, params, seeds, threads):
    n = X.shape[0]

    def one(seed):
        return fit_tree(X, y, params, rows=bootstrap_indices(n, seed))

    if threads is None or threads == 1 or len(seeds) == 1:
        return [one(s) for s in seeds]
    # map() yields in submission order, so the ensemble does not depend on scheduling
    with ThreadPoolExecutor(max_workers=threads or None) as pool:
        return list(pool.map(one, seeds))


def fit_bagged(X, y, K: int = DEFAULT_K, params: FitParams = FitParams(), master_seed: int = 0, threads: int = 1) -> Ensemble:
    """Grow ``K`` trees on bootstrap replicates of ``(X, y)``.

    ``threads`` = 0 uses one worker per CPU.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _check_finite(X, y)
    seeds = tree_seeds(master_seed, K)
    trees = _fit_pool(X, y, params, seeds, threads)
    return Ensemble(trees, seeds, np.full(K, 1.0 / K), tuple(range(K)), params=params)


def predict_bagged(e: Ensemble, x, weighted: bool = False):
    """Mean of the active trees' predictions (``alpha``-weighted sum if ``weighted``).

    Accepts one feature row (returns a float) or a matrix (returns an array).
    """
    if not e.active:
        raise StateError("ensemble has no active trees")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    P = e.tree_predictions(X, e.active)
    if weighted:
        out = P @ e.alpha[list(e.active)]
    else:
        # sorting each row first makes the sum independent of tree order
        out = np.sort(P, axis=1).sum(axis=1) / len(e.active)
    return float(out[0]) if single else out


# -- L1 pruning ----------------------------------------------------------------


@dataclass
class PruneResult:
    alpha: np.ndarray
    active: tuple[int, ...]
    objective_value: float
    n_active: int
    resubstitution_error: float
    beta: float
    sweeps: int
    converged: bool
    final_delta: float
    objective_history: np.ndarray = field(repr=False)


@numba.njit(cache=True, nogil=True)
def _objective(G, b, beta, a):
    return a @ (G @ a) - 2.0 * (b @ a) + beta * a.sum()


@numba.njit(cache=True, nogil=True)
def _solve_on(G, c, on):
    idx = np.flatnonzero(on)
    m = idx.shape[0]
    Gs = np.empty((m, m))
    for p in range(m):
        for q in range(m):
            Gs[p, q] = G[idx[p], idx[q]]
    z = np.zeros(c.shape[0])
    sol = np.linalg.lstsq(Gs, c[idx])[0]
    for p in range(m):
        z[idx[p]] = sol[p]
    return z


@numba.njit(cache=True, nogil=True)
def _active_set(G, b, beta):
    """Lawson-Hanson active-set solve of the Gram-form problem.

    Coordinates enter only while their gradient is strictly descending, so
    exactly collinear tree columns never join the support together.
    """
    K = b.shape[0]
    c = b - 0.5 * beta
    tol = 1e-13 * max(1.0, np.abs(c).max())
    a = np.zeros(K)
    on = np.zeros(K, dtype=np.bool_)
    for _ in range(3 * K + 10):
        w = c - G @ a
        kbest = -1
        wbest = tol
        for k in range(K):
            if not on[k] and w[k] > wbest:
                wbest = w[k]
                kbest = k
        if kbest < 0:
            break
        on[kbest] = True
        for _inner in range(K + 1):
            z = _solve_on(G, c, on)
            bad = False
            for k in range(K):
                if on[k] and z[k] <= 0.0:
                    bad = True
            if not bad:
                a = z
                break
            theta = 1.0
            for k in range(K):
                if on[k] and z[k] <= 0.0:
                    step = a[k] / (a[k] - z[k])
                    if step < theta:
                        theta = step
            a = a + theta * (z - a)
            for k in range(K):
                if on[k] and a[k] <= 1e-15:
                    on[k] = False
                    a[k] = 0.0
    return a


@numba.njit(cache=True, nogil=True)
def _cd(G, b, beta, alpha0, tol, max_sweeps):
    K = b.shape[0]
    a = alpha0.copy()
    g = G @ a
    hist = np.empty(max_sweeps + 1)
    hist[0] = _objective(G, b, beta, a)
    delta = 0.0
    sweeps = 0
    for s in range(max_sweeps):
        delta = 0.0
        for k in range(K):
            gkk = G[k, k]
            if gkk <= 0.0:
                new = 0.0
            else:
                # partial residual correlation excluding coordinate k
                rho = b[k] - (g[k] - gkk * a[k])
                new = (rho - 0.5 * beta) / gkk
                if new < 0.0:
                    new = 0.0
            d = new - a[k]
            if d != 0.0:
                for j in range(K):
                    g[j] += G[j, k] * d
                a[k] = new
                if abs(d) > delta:
                    delta = abs(d)
        sweeps = s + 1
        hist[sweeps] = _objective(G, b, beta, a)
        if delta < tol:
            break
    return a, sweeps, delta, hist[: sweeps + 1].copy()


def nn_lasso(
    P, y, beta: float, alpha0=None, tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS, active_set_start: bool = True
) -> PruneResult:
    """Solve the non-negative L1 problem on a prediction matrix ``P`` (N x K).

    Bagged trees are often nearly collinear, which makes plain coordinate
    descent crawl along flat directions.  With ``active_set_start`` the
    descent starts from an active-set solution (ignoring ``alpha0``) and
    normally certifies it within a sweep or two.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    N, K = P.shape
    if N == 0:
        raise ValueError("empty validation set")
    if not beta >= 0:
        raise ValueError("beta must be >= 0")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(y))):
        raise DataError("non-finite tree predictions or validation targets")
    G = P.T @ P / N
    b = P.T @ y / N
    if active_set_start:
        a0 = _active_set(G, b, float(beta))
    elif alpha0 is None:
        a0 = np.zeros(K)
    else:
        a0 = np.maximum(np.asarray(alpha0, dtype=np.float64), 0.0)
    alpha, sweeps, delta, hist = _cd(G, b, float(beta), a0, tol, max_sweeps)
    converged = delta < tol
    if not converged:
        log.warning("coordinate descent stopped after %d sweeps, last max change %.3g", sweeps, delta)
    active = tuple(int(k) for k in np.flatnonzero(alpha > ACTIVE_EPS))
    alpha = np.where(alpha > ACTIVE_EPS, alpha, 0.0)
    r = y - P @ alpha
    mse = float(r @ r) / N
    return PruneResult(
        alpha=alpha,
        active=active,
        objective_value=mse + beta * float(alpha.sum()),
        n_active=len(active),
        resubstitution_error=mse,
        beta=float(beta),
        sweeps=int(sweeps),
        converged=bool(converged),
        final_delta=float(delta),
        objective_history=hist,
    )


def kkt_residual(P, y, res: PruneResult) -> float:
    """Largest violation of the optimality conditions at ``res.alpha``."""
    P = np.asarray(P, dtype=np.float64)
    N = P.shape[0]
    grad = -2.0 / N * (P.T @ (y - P @ res.alpha)) + res.beta
    on = res.alpha > 0
    viol_on = np.abs(grad[on]).max(initial=0.0)
    viol_off = np.maximum(-grad[~on], 0.0).max(initial=0.0)
    return float(max(viol_on, viol_off))


def beta_max(P, y) -> float:
    """Smallest penalty at which every coefficient is zero."""
    P = np.asarray(P, dtype=np.float64)
    return float(max(0.0, (2.0 / P.shape[0] * (P.T @ y)).max()))


def lasso_prune(e: Ensemble, X_val, y_val, beta: float) -> PruneResult:
    P = e.tree_predictions(X_val)
    return nn_lasso(P, y_val, beta)


def _beta_for_budget(P, y, budget: float, max_iter: int = 200) -> tuple[float, PruneResult]:
    res0 = nn_lasso(P, y, 0.0)
    if res0.alpha.sum() <= budget:
        return 0.0, res0
    lo, hi = 0.0, beta_max(P, y)
    best = nn_lasso(P, y, hi)
    for _ in range(max_iter):
        if hi - lo <= 1e-12 * hi:
            break
        mid = 0.5 * (lo + hi)
        res = nn_lasso(P, y, mid, alpha0=best.alpha)
        if res.alpha.sum() <= budget:
            hi, best = mid, res
        else:
            lo = mid
    return hi, best


def select_trees(e: Ensemble, X_val, y_val, lam: float = DEFAULT_LAMBDA) -> Ensemble:
    """Prune ``e`` so that ``sum(alpha) <= 1 / lam`` with the smallest such penalty."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    P = e.tree_predictions(X_val)
    y_val = np.asarray(y_val, dtype=np.float64)
    beta, res = _beta_for_budget(P, y_val, 1.0 / lam)
    return replace(e, alpha=res.alpha, active=res.active, lam=float(lam), beta=float(beta))


def lasso_path(e: Ensemble, X_val, y_val, betas: Sequence[float]) -> list[PruneResult]:
    """Prune at each penalty in ``betas`` (solved in ascending order, warm-started)."""
    P = e.tree_predictions(X_val)
    y_val = np.asarray(y_val, dtype=np.float64)
    order = np.argsort(betas, kind="stable")
    out: list[Optional[PruneResult]] = [None] * len(betas)
    warm = None
    for i in order:
        res = nn_lasso(P, y_val, float(betas[i]), alpha0=warm)
        warm = res.alpha
        out[i] = res
    return out  # type: ignore[return-value]


def lambda_sweep(e: Ensemble, X_val, y_val, lambdas: Sequence[float]) -> list[tuple[float, float, int, float]]:
    """Rows of ``(lambda, beta, n_active, resub_error)``."""
    P = e.tree_predictions(X_val)
    y_val = np.asarray(y_val, dtype=np.float64)
    rows = []
    for lam in lambdas:
        beta, res = _beta_for_budget(P, y_val, 1.0 / lam)
        rows.append((float(lam), float(beta), res.n_active, res.resubstitution_error))
    return rows


# -- tree-count cross-validation -------------------------------------------------


def cross_validate_treecount(
    X,
    y,
    K_grid: Sequence[int],
    folds: int = 10,
    seed: int = 0,
    params: FitParams = FitParams(),
    repeats: int = 1,
    threads: int = 1,
) -> list[tuple[int, float]]:
    """Mean held-out RMSE of a ``K``-tree bag for each ``K`` in ``K_grid``.

    The largest bag is grown once per fold; smaller bags are its leading
    trees, which is exactly what :func:`fit_bagged` would give for them.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError(f"{folds} folds for {n} rows")
    grid = sorted(set(int(k) for k in K_grid))
    if not grid or grid[0] < 1:
        raise ValueError("K_grid must hold positive tree counts")
    kmax = grid[-1]
    errs = np.zeros((repeats * folds, len(grid)))
    row = 0
    for rep in range(repeats):
        perm = rng_for(seed, "cv-folds", rep).permutation(n)
        for f, test in enumerate(np.array_split(perm, folds)):
            train = np.setdiff1d(perm, test, assume_unique=True)
            train.sort()
            test = np.sort(test)
            e = fit_bagged(X[train], y[train], kmax, params, derive_seed(seed, "cv-trees", rep, f), threads)
            P = e.tree_predictions(X[test])
            cum = np.cumsum(P, axis=1)
            for j, K in enumerate(grid):
                pred = cum[:, K - 1] / K
                errs[row, j] = np.sqrt(np.mean((pred - y[test]) ** 2))
            row += 1
    return [(K, float(errs[:, j].mean())) for j, K in enumerate(grid)]
