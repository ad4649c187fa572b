"""Least squares with columns constrained to the probability simplex.

Two independent solvers: projected gradient descent, and an exact
active-set enumeration over supports usable for small ``m`` and batched over
many design matrices at once.
"""

from __future__ import annotations

import itertools

import numpy as np


def project_simplex(V, axis=0):
    """Euclidean projection of each column (``axis=0``) onto the simplex."""
    V = np.asarray(V, dtype=np.float64)
    X = np.moveaxis(V, axis, -1)
    U = np.sort(X, axis=-1)[..., ::-1]
    css = np.cumsum(U, axis=-1) - 1.0
    ind = np.arange(1, X.shape[-1] + 1)
    cond = U - css / ind > 0
    rho = np.count_nonzero(cond, axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.moveaxis(np.maximum(X - theta, 0.0), -1, axis)


def _objective(G, B, V, yty):
    """``||Y - A V||^2`` from ``G = A'A``, ``B = A'Y``, ``yty = ||Y||^2``."""
    return yty - 2.0 * np.sum(B * V, axis=(-2, -1)) + np.sum(V * (G @ V), axis=(-2, -1))


def _kkt_solve(G, B, support):
    """Equality-constrained LS restricted to `support`, batched.

    Minimizes ``0.5 v'Gv - b'v`` subject to ``sum(v) = 1`` and ``v`` zero off
    the support, for every column of ``B``.
    """
    s = len(support)
    idx = np.asarray(support)
    batch = G.shape[:-2]
    K = np.zeros(batch + (s + 1, s + 1))
    K[..., :s, :s] = G[..., idx[:, None], idx[None, :]]
    K[..., :s, s] = 1.0
    K[..., s, :s] = 1.0
    M = B.shape[-1]
    rhs = np.empty(batch + (s + 1, M))
    rhs[..., :s, :] = B[..., idx, :]
    rhs[..., s, :] = 1.0
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.pinv(K) @ rhs
    m = G.shape[-1]
    V = np.zeros(batch + (m, M))
    V[..., idx, :] = sol[..., :s, :]
    return V


def simplex_lstsq_exact(G, B, tol=1e-13):
    """Exact minimizer of ``0.5 v'Gv - b'v`` over the simplex, per column.

    Enumerates all ``2**m - 1`` supports; the best nonnegative
    equality-constrained solution is the global optimum because the true
    optimum is the equality-constrained optimum on its own support.

    Parameters
    ----------
    G : ndarray of shape (..., m, m)
    B : ndarray of shape (..., m, M)

    Returns
    -------
    V : ndarray of shape (..., m, M)
    """
    G = np.asarray(G, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    m = G.shape[-1]
    best_val = np.full(B.shape[:-2] + (B.shape[-1],), np.inf)
    best = np.zeros(B.shape)
    for size in range(1, m + 1):
        for support in itertools.combinations(range(m), size):
            V = _kkt_solve(G, B, support)
            ok = np.all(V >= -tol, axis=-2) & np.all(np.isfinite(V), axis=-2)
            V = np.maximum(V, 0.0)
            V = V / V.sum(axis=-2, keepdims=True)
            val = 0.5 * np.sum(V * (G @ V), axis=-2) - np.sum(B * V, axis=-2)
            with np.errstate(invalid="ignore"):
                slack = np.where(np.isfinite(best_val),
                                 1e-15 * np.maximum(1.0, np.abs(best_val)), 0.0)
                better = ok & np.isfinite(val) & (val < best_val - slack)
            best_val = np.where(better, val, best_val)
            best = np.where(better[..., None, :], V, best)
    return best


def simplex_lstsq_pgd(A, Y, V0=None, tol=1e-12, max_iter=10_000, polish=True):
    """Projected gradient descent for ``min ||Y - A V||^2`` over simplex columns.

    Step size is ``1 / L`` with ``L`` the largest eigenvalue of ``A'A``;
    iteration stops once the objective changes by less than `tol` between
    steps. With ``polish=True`` the support found by the iterations is
    re-solved exactly and kept if it is feasible and no worse.

    Returns
    -------
    V : ndarray of shape (m, M)
    n_iter : int
    """
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    m = A.shape[1]
    G = A.T @ A
    B = A.T @ Y
    yty = float(np.sum(Y * Y))
    L = float(np.linalg.eigvalsh(G)[-1])
    if V0 is None:
        V0 = np.linalg.lstsq(A, Y, rcond=None)[0]
    V = project_simplex(V0, axis=0)
    if L <= 0:
        return V, 0
    obj = _objective(G, B, V, yty)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        V = project_simplex(V - (G @ V - B) / L, axis=0)
        new = _objective(G, B, V, yty)
        done = abs(obj - new) < tol
        obj = new
        if done:
            break
    if polish:
        V = _polish(G, B, V, yty, obj)
    return V, n_iter


def _polish(G, B, V, yty, obj):
    m, M = V.shape
    out = V.copy()
    for j in range(M):
        support = tuple(np.flatnonzero(V[:, j] > 1e-12))
        if not support:
            continue
        cand = _kkt_solve(G, B[:, j : j + 1], support)[:, 0]
        if cand.min() < -1e-13:
            continue
        cand = np.maximum(cand, 0.0)
        cand /= cand.sum()
        trial = out.copy()
        trial[:, j] = cand
        if _objective(G, B, trial, yty) <= _objective(G, B, out, yty) + 1e-15:
            out = trial
    return out
