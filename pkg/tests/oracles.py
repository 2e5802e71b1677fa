"""Independent reference implementations used as test oracles.

Nothing here imports the package: each oracle is a slow, direct
transcription of the defining formula.
"""

from __future__ import annotations

import itertools

import numpy as np


def sse(v) -> float:
    """Sum of squared deviations by direct summation."""
    v = [float(a) for a in v]
    m = sum(v) / len(v)
    return sum((a - m) ** 2 for a in v)


def brute_force_split(X, y, min_leaf, min_dec, tie_rel=1e-12):
    """Exhaustive double loop over features x midpoints.

    Returns ``(feature, threshold, decrease)`` or ``None``.  Among
    candidates whose decrease is within ``tie_rel`` of the best, the
    lowest feature and then the lowest threshold wins.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    parent = sse(y)
    cands = []
    for f in range(d):
        vals = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(vals, vals[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, f] <= thr
            nl = int(left.sum())
            if nl < min_leaf or n - nl < min_leaf:
                continue
            dec = parent - sse(y[left]) - sse(y[~left])
            cands.append((f, thr, dec))
    if not cands:
        return None
    best = max(c[2] for c in cands)
    if best < min_dec:
        return None
    tied = [c for c in cands if c[2] >= best - tie_rel * max(1.0, abs(best))]
    return min(tied, key=lambda c: (c[0], c[1]))


def lasso_objective(P, y, beta, alpha) -> float:
    r = y - P @ alpha
    return float(r @ r) / len(y) + beta * float(np.sum(alpha))


def grid_lasso(P, y, beta, points=11, levels=60, shrink=0.5):
    """Minimise the non-negative L1 objective by multi-level grid refinement.

    Level 0 is a uniform grid over the box ``[0, B]^K``, where ``B`` bounds
    every minimiser: the optimum cannot be worse than ``alpha = 0``, so
    ``||P alpha|| <= 2 ||y||`` and ``||alpha|| <= 2 ||y|| / sigma_min(P)``.
    Each later level re-grids a box ``shrink`` times smaller centred on the
    incumbent (clipped at zero).  The objective is convex, so the
    incumbent can only improve.
    """
    P = np.asarray(P, dtype=float)
    y = np.asarray(y, dtype=float)
    N, K = P.shape
    smin = np.linalg.svd(P, compute_uv=False).min()
    B = 2.0 * np.linalg.norm(y) / smin if smin > 0 else 10.0
    G = P.T @ P / N
    b = P.T @ y / N
    c = float(y @ y) / N

    def obj(A):  # rows of A are candidate alphas
        return np.einsum("ij,jk,ik->i", A, G, A) - 2.0 * A @ b + beta * A.sum(axis=1) + c

    lo = np.zeros(K)
    hi = np.full(K, B)
    best_a = np.zeros(K)
    best = float(obj(best_a[None])[0])
    for _ in range(levels):
        axes = [np.linspace(lo[k], hi[k], points) for k in range(K)]
        A = np.array(list(itertools.product(*axes)))
        v = obj(A)
        i = int(np.argmin(v))
        if v[i] <= best:
            best, best_a = float(v[i]), A[i]
        half = shrink * (hi - lo) / 2.0
        lo = np.maximum(best_a - half, 0.0)
        hi = best_a + half
    return best_a, best


def naive_block_mean(a, f):
    h, w = a.shape
    out = np.empty((h // f, w // f))
    for i in range(h // f):
        for j in range(w // f):
            s = 0.0
            for di in range(f):
                for dj in range(f):
                    s += a[i * f + di, j * f + dj]
            out[i, j] = s / (f * f)
    return out
