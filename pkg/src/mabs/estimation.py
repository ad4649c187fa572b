"""Least squares estimation over the regularized parameter space.

The estimator minimizes ``||Y - F omega||**2`` jointly over finite-alphabet
sources ``F`` (an assignment of design rows) and mixing weights ``omega``
in the separable weight domain. Three routes are provided:

* :func:`exact_lse_enumerate` enumerates all admissible assignments and
  solves the weight problem for each; exact at desk scale.
* :func:`exact_lse_grid` brute-forces the weights on a grid (two sources,
  at most two mixtures) and optimizes the assignment for each grid point.
* :func:`lloyd_lse` alternates nearest-center decoding and a simplex
  constrained weight fit from several starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._planar import FEAS_RTOL, nearest_feasible
from ._simplex import simplex_lstsq_exact, simplex_lstsq_pgd
from ._validation import check_labels, check_matrix
from .core import (
    as_alphabet,
    asb_batch,
    build_design_matrix,
    difference_vectors,
    estimation_metric,
    is_delta_separable,
    labels_from_rows,
    mixture,
    required_unit_count,
    unit_labels,
    wsb_batch,
)
from .exceptions import (
    CapacityError,
    DegenerateFitError,
    DimensionError,
    MabsError,
    PreconditionError,
    ValidationError,
)
from .recovery import constrained_decode, recover

ENUM_BUDGET = 2 * 10**5
RAW_ENUM_BUDGET = 5 * 10**6
TIE_TOL = 1e-10

__all__ = [
    "EstimationResult",
    "SimplexFit",
    "fit_weights_simplex",
    "feasible_intervals",
    "exact_lse_enumerate",
    "exact_lse_grid",
    "lloyd_lse",
    "objective",
    "prediction_error",
    "classification_flag",
    "estimation_error",
    "estimate",
    "METHODS",
]


@dataclass
class EstimationResult:
    """Fitted assignment and weights with diagnostics.

    Attributes
    ----------
    labels, weights : ndarray
        The estimate ``(z_hat, omega_hat)``.
    objective : float
        ``||Y - mixture(labels, weights)||**2``.
    feasible : bool
        Whether the estimate lies in the regularized parameter space.
    ties : list of (labels, weights)
        Other minimizers within ``1e-10`` of the objective (exact methods).
    history : list of float
        Objective after each iteration of the winning restart (Lloyd).
    """

    labels: np.ndarray
    weights: np.ndarray
    objective: float
    feasible: bool
    method: str
    iterations: int = 0
    restarts_used: int = 0
    ties: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def minimizers(self):
        return [(self.labels, self.weights)] + list(self.ties)

    def to_dict(self):
        return {
            "method": self.method,
            "labels": self.labels.tolist(),
            "weights": self.weights.tolist(),
            "objective": self.objective,
            "feasible": self.feasible,
            "iterations": self.iterations,
            "restarts_used": self.restarts_used,
            "minimizers": [
                {"labels": z.tolist(), "weights": w.tolist()} for z, w in self.minimizers
            ],
        }


def _passes(weights, labels, params, alphabet):
    """Membership in the regularized space, separation checked to a relative 1e-12."""
    rep = is_delta_separable(weights, labels, params, alphabet)
    level = min(rep.asb, rep.wsb)
    return bool(rep.in_domain and rep.pass_ic2 and level >= params.delta * (1 - FEAS_RTOL))


def objective(Y, labels, weights, design):
    R = np.asarray(Y, dtype=np.float64) - mixture(labels, weights, design)
    return float(np.sum(R * R))


@dataclass
class SimplexFit:
    weights: np.ndarray
    labels: np.ndarray
    permutation: np.ndarray
    objective: float
    n_iter: int


def _design_alphabet(design):
    return np.unique(design)


def fit_weights_simplex(Y, labels, design, init=None, sort=True):
    """Least squares weights for a fixed assignment, columns on the simplex.

    Solves ``min ||Y - design[labels] @ V||**2`` over matrices whose columns
    lie on the probability simplex by projected gradient descent, then
    orders the rows of ``V`` by increasing norm and relabels the assignment
    with the matching permutation of design columns. Ordering and separation
    constraints are not enforced.

    Parameters
    ----------
    init : ndarray of shape (m, M), optional
        Warm start; by default the projected unconstrained solution.

    Raises
    ------
    DegenerateFitError
        If ``design[labels]`` has rank below ``m``.
    """
    Y = check_matrix(Y)
    design = np.asarray(design, dtype=np.float64)
    labels = check_labels(labels, n_design=len(design), n_samples=Y.shape[0])
    F = design[labels]
    m = design.shape[1]
    if np.linalg.matrix_rank(F) < m:
        raise DegenerateFitError(
            f"assignment selects a rank {np.linalg.matrix_rank(F)} source matrix; "
            f"need rank {m} (is every unit vector present?)"
        )
    V, n_iter = simplex_lstsq_pgd(F, Y, V0=init)
    perm = np.arange(m)
    if sort:
        perm = np.argsort(np.linalg.norm(V, axis=1), kind="stable")
        V = V[perm]
        if not np.array_equal(perm, np.arange(m)):
            labels = labels_from_rows(F[:, perm], _design_alphabet(design))
    R = Y - design[labels] @ V
    return SimplexFit(V, labels, perm, float(np.sum(R * R)), n_iter)


def feasible_intervals(alphabet, delta):
    """Admissible first-row weights for two sources and one mixture.

    With ``omega = (t, 1 - t)`` every separation constraint
    ``|d @ omega| >= delta`` removes an open interval of ``t``; the
    weights-boundary constraint caps ``t`` below ``1/2``.

    Returns
    -------
    list of (lo, hi)
        Disjoint closed intervals in increasing order.
    """
    alphabet = as_alphabet(alphabet)
    a_k = alphabet.a_max
    hi_cap = 0.5 * (1.0 - 2.0 * delta / (1.0 + 2.0 * a_k))
    intervals = [(0.0, hi_cap)] if hi_cap >= 0 else []
    for d1, d2 in difference_vectors(alphabet, 2):
        slope = d1 - d2
        if slope == 0:
            if abs(d2) < delta:
                return []
            continue
        lo, hi = sorted(((-d2 - delta) / slope, (-d2 + delta) / slope))
        nxt = []
        for a, b in intervals:
            # remove the open interval (lo, hi)
            if hi <= a or lo >= b:
                nxt.append((a, b))
                continue
            if a <= lo:
                nxt.append((a, lo))
            if hi <= b:
                nxt.append((hi, b))
        intervals = nxt
    return [(float(a), float(b)) for a, b in intervals if a <= b]


def _weights_m2(t):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t, 1.0 - t], axis=-2)


def _grid_points(M, lo, hi, step):
    axis = np.arange(lo, hi + step / 2, step)
    axis = axis[(axis >= -1e-15) & (axis <= 1.0 + 1e-15)].clip(0.0, 1.0)
    if M == 1:
        return axis[:, None]
    a, b = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=-1)


def _feasible_mask(W, alphabet, delta):
    norms = np.linalg.norm(W, axis=-1)
    ok = (norms[:, 0] > 0) & (norms[:, 1] > norms[:, 0])
    ok &= np.minimum(asb_batch(W, alphabet), wsb_batch(W, alphabet)) >= delta * (1 - FEAS_RTOL)
    return ok


def _grid_scan_fixed(Y, F, pts, alphabet, delta, chunk=200_000):
    """Objective for a fixed source matrix over grid points; returns (best, t)."""
    G = F.T @ F
    B = F.T @ Y
    yty = float(np.sum(Y * Y))
    best_val, best_t = np.inf, None
    for s in range(0, len(pts), chunk):
        t = pts[s : s + chunk]
        W = _weights_m2(t)
        ok = _feasible_mask(W, alphabet, delta)
        if not ok.any():
            continue
        W, t = W[ok], t[ok]
        val = yty - 2 * np.einsum("mj,pmj->p", B, W) + np.einsum(
            "pmj,mk,pkj->p", W, G, W
        )
        i = int(np.argmin(val))
        if val[i] < best_val:
            best_val, best_t = float(val[i]), t[i]
    return best_val, best_t


def _grid_scan_free(Y, design, units, need, pts, alphabet, delta, chunk=50_000):
    """Objective minimized over count-constrained labelings at each grid point."""
    n = Y.shape[0]
    yy = np.sum(Y * Y, axis=1)
    upper, upper_t = np.inf, None
    pending = []
    for s in range(0, len(pts), chunk):
        t = pts[s : s + chunk]
        W = _weights_m2(t)
        ok = _feasible_mask(W, alphabet, delta)
        if not ok.any():
            continue
        W, t = W[ok], t[ok]
        C = np.einsum("km,pmj->pkj", design, W)
        cost = (
            yy[None, :, None]
            - 2 * np.einsum("nj,pkj->pnk", Y, C)
            + np.sum(C * C, axis=-1)[:, None, :]
        ).clip(min=0.0)
        lab = np.argmin(cost, axis=-1)
        lb = np.take_along_axis(cost, lab[..., None], axis=-1)[..., 0].sum(axis=1)
        valid = np.ones(len(t), dtype=bool)
        for u in units:
            valid &= (lab == u).sum(axis=1) >= need
        if valid.any():
            i = int(np.argmin(np.where(valid, lb, np.inf)))
            if lb[i] < upper:
                upper, upper_t = float(lb[i]), t[i]
        inv = np.flatnonzero(~valid)
        pending.extend(zip(lb[inv].tolist(), [tuple(x) for x in t[inv]]))
    # invalid points only matter if their unconstrained bound beats the incumbent
    pending.sort()
    for lb, t in pending:
        if lb >= upper:
            break
        _, val = constrained_decode(Y, _weights_m2(np.array(t)), design, units, need)
        if val < upper:
            upper, upper_t = val, np.array(t)
    return upper, upper_t


def _check_grid_shape(m, M):
    if m != 2 or M > 2:
        raise CapacityError(f"grid oracle supports m=2 and M<=2, got m={m}, M={M}")


def exact_lse_grid(Y, alphabet, m, params, resolution=1e-3, labels=None, tol=1e-9):
    """Brute-force least squares over a weight grid (two sources, M <= 2).

    Each column's first-row weight ranges over ``[0, 0.5]`` for ``M = 1`` and
    over ``[0, 1]`` for ``M = 2`` (where one column alone does not fix the
    row order). Infeasible grid points are discarded; each remaining point is
    scored by its best count-constrained labeling (or by the fixed `labels`
    when given). The best point is then refined on local grids of step
    ``resolution / 100``, ``resolution / 100**2``, ... down to `tol`.
    """
    alphabet = as_alphabet(alphabet)
    Y = check_matrix(Y)
    n, M = Y.shape
    _check_grid_shape(m, M)
    design = build_design_matrix(alphabet, m)
    units = unit_labels(alphabet, m)
    need = required_unit_count(M, params.lam)
    hi = 0.5 if M == 1 else 1.0
    h = float(resolution)

    if labels is not None:
        labels = check_labels(labels, n_design=len(design), n_samples=n)
        F = design[labels]

        def scan(pts):
            return _grid_scan_fixed(Y, F, pts, alphabet, params.delta)
    else:
        if m * need > n:
            raise PreconditionError(f"n={n} too small for {m}x{need} unit rows")

        def scan(pts):
            return _grid_scan_free(Y, design, units, need, pts, alphabet, params.delta)

    val, t = scan(_grid_points(M, 0.0, hi, h))
    if t is None:
        raise PreconditionError(f"no feasible grid point at delta={params.delta}")
    passes = 0
    while h > tol:
        fine = h / 100.0
        local = _grid_points(M, 0.0, 2 * h, fine) - h
        pts = t[None, :] + local
        pts = pts[np.all((pts >= 0) & (pts <= hi), axis=1)]
        val2, t2 = scan(pts)
        if t2 is not None and val2 <= val:
            val, t = val2, t2
        h = fine
        passes += 1
    W = _weights_m2(t)
    if labels is None:
        labels, val = constrained_decode(Y, W, design, units, need)
    return EstimationResult(
        labels=labels,
        weights=W,
        objective=objective(Y, labels, W, design),
        feasible=_passes(W, labels, params, alphabet),
        method="exact-grid",
        iterations=passes,
    )


def _exact_m2_m1(Y, F, alphabet, delta):
    """All minimizers for two sources, one mixture, fixed source matrix."""
    y = Y[:, 0]
    u = F[:, 0] - F[:, 1]
    r = y - F[:, 1]
    a, b = float(u @ u), float(u @ r)
    out = []
    for lo, hi in feasible_intervals(alphabet, delta):
        ts = [min(max(b / a, lo), hi)] if a > 0 else [lo]
        for t in ts:
            res = r - u * t
            out.append((float(res @ res), t))
    return out


def _constrained_minimizers(Y, labels, alphabet, params, design):
    """Minimizers of the weight problem for one assignment under all constraints.

    Exact for two sources: interval arithmetic for one mixture, a planar
    nearest-point problem for two.
    """
    n, M = Y.shape
    m = design.shape[1]
    _check_grid_shape(m, M)
    F = design[labels]
    if M == 1:
        cands = _exact_m2_m1(Y, F, alphabet, params.delta)
        if not cands:
            return []
        best = min(c[0] for c in cands)
        seen, out = set(), []
        for val, t in sorted(cands):
            if val <= best + TIE_TOL and round(t, 14) not in seen:
                seen.add(round(t, 14))
                out.append((val, _weights_m2(np.array([t]))))
        return out
    u = F[:, 0] - F[:, 1]
    alpha = float(u @ u)
    t_star = (u @ (Y - F[:, [1]])) / alpha if alpha > 0 else np.zeros(M)
    out = []
    for t in nearest_feasible(t_star, alphabet, params.delta):
        W = _weights_m2(t)
        out.append((objective(Y, labels, W, design), W))
    if not out:
        return []
    best = min(v for v, _ in out)
    return [(v, W) for v, W in out if v <= best + TIE_TOL]


def _enumerate_assignments(K, n, units, need):
    if K**n > RAW_ENUM_BUDGET:
        raise CapacityError(f"{K}^{n} raw assignments exceed {RAW_ENUM_BUDGET}")
    Z = np.indices((K,) * n, dtype=np.int64).reshape(n, -1).T
    keep = np.ones(len(Z), dtype=bool)
    for u in units:
        keep &= (Z == u).sum(axis=1) >= need
    Z = Z[keep]
    if len(Z) > ENUM_BUDGET:
        raise CapacityError(f"{len(Z)} admissible assignments exceed {ENUM_BUDGET}")
    return Z


def exact_lse_enumerate(Y, alphabet, m, params, chunk=20_000):
    """Global least squares by enumerating every admissible assignment.

    For each assignment the simplex-constrained weight fit is solved exactly.
    Fits that already satisfy ordering and separation are optimal for their
    assignment. Assignments whose unconstrained fit beats the incumbent but
    is infeasible are re-solved exactly under the full constraints; this is
    only available for two sources and at most two mixtures.

    Minimizers within ``1e-10`` of the optimum are reported in ``ties``.
    """
    alphabet = as_alphabet(alphabet)
    Y = check_matrix(Y)
    n, M = Y.shape
    design = build_design_matrix(alphabet, m)
    units = unit_labels(alphabet, m)
    need = required_unit_count(M, params.lam)
    Z = _enumerate_assignments(len(design), n, units, need)
    if len(Z) == 0:
        raise PreconditionError(f"no assignment of {n} rows has {need} of each unit row")
    yty = float(np.sum(Y * Y))

    vals, feas, Ws = [], [], []
    for s in range(0, len(Z), chunk):
        F = design[Z[s : s + chunk]]
        G = np.einsum("bnm,bnk->bmk", F, F)
        B = np.einsum("bnm,nj->bmj", F, Y)
        V = simplex_lstsq_exact(G, B)
        val = yty - 2 * np.sum(B * V, axis=(1, 2)) + np.sum(V * (G @ V), axis=(1, 2))
        norms = np.linalg.norm(V, axis=-1)
        ok = (norms[:, 0] > 0) & np.all(np.diff(norms, axis=-1) > 0, axis=-1)
        sep = np.minimum(asb_batch(V, alphabet), wsb_batch(V, alphabet))
        ok &= sep >= params.delta * (1 - FEAS_RTOL)
        vals.append(np.maximum(val, 0.0))
        feas.append(ok)
        Ws.append(V)
    vals, feas, Ws = np.concatenate(vals), np.concatenate(feas), np.concatenate(Ws)

    best = float(vals[feas].min()) if feas.any() else np.inf
    found = [(float(vals[i]), i, Ws[i]) for i in np.flatnonzero(feas & (vals <= best + TIE_TOL))]
    for i in np.flatnonzero(~feas)[np.argsort(vals[~feas], kind="stable")]:
        if vals[i] >= best:
            break
        if m != 2 or M > 2:
            raise CapacityError(
                "an infeasible simplex fit undercuts the best feasible one; the "
                f"constrained weight fit is only available for m=2, M<=2 (got m={m}, M={M})"
            )
        for val, W in _constrained_minimizers(Y, Z[i], alphabet, params, design):
            if val < best:
                best = val
            found.append((val, i, W))
    found = [f for f in found if f[0] <= best + TIE_TOL]
    if not found:
        raise PreconditionError("no feasible weights for any admissible assignment")
    found.sort(key=lambda f: (f[0], f[1]))
    (val, i, W), rest = found[0], found[1:]
    labels = Z[i].copy()
    return EstimationResult(
        labels=labels,
        weights=W,
        objective=objective(Y, labels, W, design),
        feasible=_passes(W, labels, params, alphabet),
        method="exact-enum",
        iterations=int(len(Z)),
        ties=[(Z[j].copy(), w) for _, j, w in rest],
    )


def _random_assignment(rng, n, m, M, lam, alphabet):
    from .simulation import sample_assignment

    return sample_assignment(n, m, M, lam, alphabet, rng)


def _feasible_weights(W, alphabet, delta):
    norms = np.linalg.norm(W, axis=1)
    if W.min() < 0 or norms[0] <= 0 or np.any(np.diff(norms) <= 0):
        return False
    sep = min(asb_batch(W, alphabet), wsb_batch(W, alphabet))
    return bool(sep >= delta * (1 - FEAS_RTOL))


def _feasible_step(W, V, alphabet, delta, halvings=30):
    """Longest step from feasible `W` towards `V` that stays feasible."""
    t = 1.0
    for _ in range(halvings):
        cand = W + t * (V - W)
        if _feasible_weights(cand, alphabet, delta):
            return cand
        t *= 0.5
    return W


def _lloyd_run(Y, W, design, units, need, alphabet, delta, tol, max_iter):
    """One Lloyd descent from `W`.

    While the iterate is infeasible the weight step is the plain simplex fit
    (rows sorted by norm). Once feasible, the step moves towards the fit only
    as far as feasibility allows; for fixed labels the objective is convex,
    so this never increases it.
    """
    labels, prev = constrained_decode(Y, W, design, units, need)
    feasible = _feasible_weights(W, alphabet, delta)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        labels, _ = constrained_decode(Y, W, design, units, need)
        try:
            fit = fit_weights_simplex(Y, labels, design, init=W, sort=not feasible)
        except DegenerateFitError:
            break
        if feasible:
            W = _feasible_step(W, fit.weights, alphabet, delta)
        else:
            W, labels = fit.weights, fit.labels
            feasible = _feasible_weights(W, alphabet, delta)
        obj = objective(Y, labels, W, design)
        history.append(obj)
        if prev - obj < tol:
            break
        prev = obj
    return labels, W, history, it


def lloyd_lse(Y, alphabet, m, params, restarts=10, seed=None, max_iter=500, tol=1e-10):
    """Approximate least squares by alternating decoding and weight fitting.

    Each restart alternates (i) the cheapest labeling given the current
    weights subject to the unit-row counts, (ii) the simplex-constrained
    weight fit given the labeling, with rows reordered by norm. Once an
    iterate is feasible, step (ii) only moves as far towards the fit as the
    separation constraints allow. Iteration stops when the objective
    decreases by less than `tol`.

    Restart 0 starts from :func:`recover` when it certifies. Other restarts
    alternate between uniformly drawn weights (redrawn up to 1000 times
    until separable at ``params.delta``) and a fit on a random admissible
    labeling. Restart ``r`` draws from the stream seeded by ``(seed, r)``.
    The winner is chosen by feasibility, then objective, then restart index.
    """
    from .simulation import sample_weights_separable

    alphabet = as_alphabet(alphabet)
    Y = check_matrix(Y)
    n, M = Y.shape
    design = build_design_matrix(alphabet, m)
    units = unit_labels(alphabet, m)
    need = required_unit_count(M, params.lam)
    if m * need > n:
        raise PreconditionError(f"n={n} too small for {m}x{need} unit rows")
    restarts = max(1, int(restarts))
    base = 0 if seed is None else int(seed)

    runs = []
    for r in range(restarts):
        rng = np.random.default_rng([base, r])
        W0 = None
        if r == 0:
            try:
                rec = recover(Y, alphabet, m, params)
                if rec.certified:
                    W0 = rec.weights
            except MabsError:
                W0 = None
        if W0 is None:
            if r % 2 == 0:
                W0, _ = sample_weights_separable(m, M, params.delta, alphabet, rng,
                                                 max_draws=1000, strict=False)
            else:
                z0 = _random_assignment(rng, n, m, M, params.lam, alphabet)
                W0 = fit_weights_simplex(Y, z0, design).weights
        labels, W, history, it = _lloyd_run(Y, W0, design, units, need, alphabet,
                                            params.delta, tol, max_iter)
        obj = objective(Y, labels, W, design)
        feasible = _passes(W, labels, params, alphabet)
        runs.append((not feasible, obj, r, labels, W, history, it))
    runs.sort(key=lambda t: t[:3])
    infeasible, obj, _, labels, W, history, it = runs[0]
    return EstimationResult(
        labels=labels,
        weights=W,
        objective=obj,
        feasible=not infeasible,
        method="lloyd",
        iterations=it,
        restarts_used=restarts,
        history=history,
    )


def _truth(instance):
    return instance.labels, instance.weights


def prediction_error(result, instance):
    """``||mixture(z_hat, omega_hat) - G||**2 / (n M)``."""
    G = instance.G
    fitted = mixture(result.labels, result.weights, instance.design)
    if fitted.shape != G.shape:
        raise DimensionError(f"shape mismatch {fitted.shape} vs {G.shape}")
    return float(np.sum((fitted - G) ** 2) / G.size)


def classification_flag(result, instance):
    """1 if the estimated assignment differs from the truth, else 0."""
    return int(not np.array_equal(np.asarray(result.labels), instance.labels))


def estimation_error(result, instance):
    """Squared estimation metric divided by ``M``."""
    d = estimation_metric((result.labels, result.weights), _truth(instance))
    return d * d / instance.M


METHODS = ("lloyd", "exact-enum", "exact-grid", "recover")


def estimate(Y, alphabet, m, params, method="lloyd", restarts=10, seed=None,
             resolution=1e-3):
    """Dispatch to one of :data:`METHODS` and return an :class:`EstimationResult`."""
    if method == "lloyd":
        return lloyd_lse(Y, alphabet, m, params, restarts=restarts, seed=seed)
    if method == "exact-enum":
        return exact_lse_enumerate(Y, alphabet, m, params)
    if method == "exact-grid":
        return exact_lse_grid(Y, alphabet, m, params, resolution=resolution)
    if method == "recover":
        alphabet = as_alphabet(alphabet)
        Y = check_matrix(Y)
        rec = recover(Y, alphabet, m, params)
        design = build_design_matrix(alphabet, m)
        return EstimationResult(
            labels=rec.labels,
            weights=rec.weights,
            objective=objective(Y, rec.labels, rec.weights, design),
            feasible=_passes(rec.weights, rec.labels, params, alphabet),
            method="recover",
        )
    raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")
