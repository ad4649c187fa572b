"""Recovery of sources and weights from noiseless or slightly perturbed mixtures.

Separability puts a (perturbed) copy of every weight row among the rows of
the mixture. :func:`recover` clusters the observed rows, searches the
``m``-subsets of cluster representatives for a candidate weight matrix that
passes the separation checks, and certifies a candidate only if it explains
every observed row. Within the admissible perturbation radius at most one
candidate can pass.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import check_matrix
from .core import (
    as_alphabet,
    asb_batch,
    build_design_matrix,
    lambda_separation,
    required_unit_count,
    unit_labels,
    wsb_batch,
)
from .exceptions import CapacityError, InternalConsistencyError, RecoveryError

MAX_REPRESENTATIVES = 64
MAX_SUBSETS = 10**6

__all__ = ["RecoveryResult", "decode_rows", "constrained_decode", "recover"]


def _center_costs(Y, weights, design):
    centers = design @ np.asarray(weights, dtype=np.float64)
    # squared distances, (n, K)
    return (
        np.sum(Y * Y, axis=1)[:, None]
        - 2.0 * Y @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    ).clip(min=0.0), centers


def decode_rows(Y, weights, alphabet):
    """Assign each row of `Y` to its nearest center ``e @ weights``.

    Ties go to the smallest design-row index.

    Returns
    -------
    labels : ndarray of shape (n,)
    residuals : ndarray of shape (n,)
        Euclidean distance from each row to its assigned center.
    """
    alphabet = as_alphabet(alphabet)
    Y = check_matrix(Y)
    W = check_matrix(weights, name="weights")
    design = build_design_matrix(alphabet, W.shape[0])
    centers = design @ W
    # exact distances (not the expanded quadratic) so ties and zeros are exact
    diff = Y[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    labels = np.argmin(dist, axis=1)
    return labels.astype(np.int64), dist[np.arange(len(Y)), labels]


def constrained_decode(Y, weights, design, units, need):
    """Cheapest labeling in which every unit row is used at least `need` times.

    The nearest-center labeling is returned when it already satisfies the
    count constraint. Otherwise the problem is solved exactly as an
    assignment problem: ``need`` reserved slots per unit vector plus free
    slots priced at each row's best center.

    Returns
    -------
    labels : ndarray of shape (n,)
    cost : float
        ``||Y - mixture(labels, weights)||**2``.
    """
    costs, _ = _center_costs(Y, weights, design)
    n = costs.shape[0]
    labels = np.argmin(costs, axis=1)
    best = costs[np.arange(n), labels]
    counts = np.array([(labels == u).sum() for u in units])
    if np.all(counts >= need):
        return labels.astype(np.int64), float(best.sum())
    m = len(units)
    if m * need > n:
        raise CapacityError(f"cannot place {m}x{need} unit rows in {n} observations")
    slots = np.empty((n, n))
    for i, u in enumerate(units):
        slots[:, i * need : (i + 1) * need] = costs[:, [u]]
    slots[:, m * need :] = best[:, None]
    rows, cols = linear_sum_assignment(slots)
    out = labels.copy()
    for r, c in zip(rows, cols):
        if c < m * need:
            out[r] = units[c // need]
    return out.astype(np.int64), float(costs[np.arange(n), out].sum())


@dataclass
class RecoveryResult:
    labels: np.ndarray
    weights: np.ndarray
    residual: float
    certified: bool
    epsilon: float
    representatives: int = 0
    candidates_checked: int = 0

    def to_dict(self):
        return {
            "labels": self.labels.tolist(),
            "weights": self.weights.tolist(),
            "residual": self.residual,
            "certified": self.certified,
            "epsilon": self.epsilon,
            "representatives": self.representatives,
            "candidates_checked": self.candidates_checked,
        }


def _cluster_rows(Y, radius):
    """Leader clustering: each row joins the first representative within `radius`."""
    reps = []
    members = np.empty(len(Y), dtype=np.int64)
    for j, y in enumerate(Y):
        for r, idx in enumerate(reps):
            if np.linalg.norm(y - Y[idx]) <= radius:
                members[j] = r
                break
        else:
            if len(reps) >= MAX_REPRESENTATIVES:
                raise CapacityError(
                    f"more than {MAX_REPRESENTATIVES} distinct row clusters "
                    f"at radius {radius:g}"
                )
            members[j] = len(reps)
            reps.append(j)
    return np.array(reps, dtype=np.int64), members


def recover(Y, alphabet, m, params):
    """Recover ``(labels, weights)`` from a mixture within ``params.epsilon`` of the truth.

    Parameters
    ----------
    Y : array-like of shape (n, M)
    alphabet : Alphabet or sequence
        Normalized alphabet.
    m : int
        Number of sources.
    params : SeparationParams
        ``delta`` and ``lam`` of the truth and the perturbation radius
        ``epsilon`` (0 for noiseless data).

    Returns
    -------
    RecoveryResult
        ``weights`` are the means of the rows decoded as unit vectors; for
        perturbed input their columns sum to one only up to ``m * epsilon``.

    Raises
    ------
    RecoveryError
        If no candidate passes.
    InternalConsistencyError
        If several candidates pass although ``epsilon`` is admissible.
    """
    alphabet = as_alphabet(alphabet)
    Y = check_matrix(Y)
    n, M = Y.shape
    eps = float(params.epsilon)
    a_k = alphabet.a_max
    design = build_design_matrix(alphabet, m)
    units = unit_labels(alphabet, m)
    bound = params.epsilon_bound(alphabet, m, M)
    admissible = eps < bound
    tol = 1e-9 * max(1.0, float(np.max(np.abs(Y))))

    reps, _ = _cluster_rows(Y, 2.0 * eps + tol)
    R = Y[reps]
    n_subsets = math.comb(len(reps), m)
    if n_subsets > MAX_SUBSETS:
        raise CapacityError(f"{n_subsets} candidate subsets exceed {MAX_SUBSETS}")
    if n_subsets == 0:
        raise RecoveryError(f"only {len(reps)} distinct rows for m={m} sources")
    combos = np.array(list(itertools.combinations(range(len(reps)), m)), dtype=np.int64)
    cand = R[combos]  # (C, m, M)

    # column sums of the true weights are one; each row moved by < eps
    keep = np.linalg.norm(cand.sum(axis=1) - 1.0, axis=-1) <= m * eps + tol
    combos, cand = combos[keep], cand[keep]
    order = np.argsort(np.linalg.norm(cand, axis=-1), axis=-1, kind="stable")
    cand = np.take_along_axis(cand, order[..., None], axis=1)
    combos = np.take_along_axis(combos, order, axis=1)
    slack = params.delta - (1.0 + m * a_k) * eps / math.sqrt(M) - tol
    norms = np.linalg.norm(cand, axis=-1)
    keep = np.all(np.diff(norms, axis=-1) > 0, axis=-1) & (norms[:, 0] > 0)
    if cand.shape[0]:
        keep &= wsb_batch(cand, alphabet) >= slack
        keep &= asb_batch(cand, alphabet) >= slack
    combos, cand = combos[keep], cand[keep]

    decode_tol = (1.0 + m * a_k) * eps + tol
    need = required_unit_count(M, params.lam)
    passed = []
    best_res, best_combo = np.inf, None
    for combo, W in zip(combos, cand):
        centers = design @ W
        diff = Y[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        labels = np.argmin(dist, axis=1)
        res = float(dist[np.arange(n), labels].max())
        if res < best_res:
            best_res, best_combo = res, tuple(int(c) for c in reps[combo])
        if res > decode_tol:
            continue
        ok, _ = lambda_separation(labels, m, M, params.lam, design)
        if ok:
            passed.append((labels.astype(np.int64), W))

    if not passed:
        raise RecoveryError(
            f"no candidate explains all rows (best residual {best_res:.3g}, "
            f"tolerance {decode_tol:.3g})",
            best_residual=best_res,
            best_candidate=best_combo,
        )
    if len(passed) > 1 and admissible:
        raise InternalConsistencyError(
            f"{len(passed)} candidates certified with epsilon={eps:g} < {bound:g}"
        )

    results = []
    for labels, W in passed:
        weights = np.vstack([Y[labels == u].mean(axis=0) for u in units])
        centers = design @ weights
        residual = float(np.max(np.linalg.norm(Y - centers[labels], axis=1)))
        results.append((residual, labels, weights))
    residual, labels, weights = min(results, key=lambda r: r[0])
    return RecoveryResult(
        labels=labels,
        weights=weights,
        residual=residual,
        certified=bool(admissible and len(passed) == 1),
        epsilon=eps,
        representatives=len(reps),
        candidates_checked=int(len(combos)),
    )
