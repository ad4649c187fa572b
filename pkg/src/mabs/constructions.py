"""Explicit separable weight matrices, ASB calibration and perturbations."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_matrix
from .core import as_alphabet, asb, wsb
from .exceptions import (
    DimensionError,
    InfeasibleConstructionError,
    InfeasiblePerturbationError,
    PreconditionError,
)

__all__ = [
    "AsbLimits",
    "omega_star_quadratic",
    "omega_extend",
    "calibrate_asb",
    "hyperrectangle_perturbation",
    "hyperrectangle_bound",
    "asb_limit_constants",
    "asb_upper_bound",
    "lemma_delta",
]


@dataclass(frozen=True)
class AsbLimits:
    c_lower: float
    C_upper: float


def lemma_delta(alphabet, m, M=None):
    """Separation level guaranteed by the quadratic/extended constructions.

    ``0.2 * min_gap / sqrt(m)`` for the square matrix and
    ``0.2 * min_gap * sqrt(M // m) / sqrt(M)`` once extended to `M` columns.
    """
    alphabet = as_alphabet(alphabet)
    if M is None:
        return 0.2 * alphabet.min_gap / math.sqrt(m)
    return 0.2 * alphabet.min_gap * math.sqrt(M // m) / math.sqrt(M)


def omega_star_quadratic(alphabet, m, delta):
    """Square weight matrix with ``wsb >= delta`` (and ``asb >= delta`` at the lemma level).

    Returns ``I - f B`` with ``f = 2 delta sqrt(m) / (1 + m a_k)`` where
    ``B`` has diagonal ``(m-1, ..., 1, 0)`` and last row
    ``(-(m-1), ..., -1, 0)``, so every column still sums to one.
    """
    alphabet = as_alphabet(alphabet)
    if m < 1:
        raise DimensionError(f"m must be positive, got {m}")
    if not (math.isfinite(delta) and delta > 0):
        raise InfeasibleConstructionError(f"delta must be positive, got {delta}")
    f = 2.0 * delta * math.sqrt(m) / (1.0 + m * alphabet.a_max)
    steps = np.arange(m - 1, -1, -1, dtype=np.float64)
    B = np.diag(steps)
    B[m - 1, :] = -steps
    omega = np.eye(m) - f * B
    # callers may ask for more than the lemma's sufficient condition
    if f * (m - 1) >= 1.0 or omega.min() < 0:
        raise InfeasibleConstructionError(
            f"delta={delta} too large for m={m}: diagonal entry "
            f"{1 - f * (m - 1):.3g} would not stay positive "
            f"(need delta < {(1 + m * alphabet.a_max) / (2 * math.sqrt(m) * max(m - 1, 1)):.6g})"
        )
    return omega


def omega_extend(quadratic, M):
    """Repeat a square matrix ``M // m`` times and pad with copies of ``e^m``."""
    Q = check_matrix(quadratic, name="quadratic")
    m = Q.shape[0]
    if Q.shape[1] != m:
        raise DimensionError(f"expected a square matrix, got {Q.shape}")
    if M < m:
        raise DimensionError(f"M={M} must be at least m={m}")
    reps = M // m
    pad = np.zeros((m, M - reps * m))
    pad[-1, :] = 1.0
    return np.hstack([np.tile(Q, (1, reps)), pad])


def _transfer_path(W, eps):
    out = W.copy()
    out[0] = eps * W[0]
    out[-1] = W[-1] + (1.0 - eps) * W[0]
    return out


def calibrate_asb(weights, alphabet, target_delta, return_epsilon=False,
                  scan_points=1001, max_iter=200, bracket_tol=1e-12):
    """Move along the mass-transfer path until ``asb == target_delta``.

    The path scales row 1 by ``eps`` and moves the removed mass to row m;
    ``eps = 1`` is the input and ``eps = 0`` has zero ASB. The returned point
    is the rightmost crossing: a scan locates the last sub-interval where ASB
    rises to the target and bisection refines it.

    The path never decreases WSB. The input must have ``asb >= target_delta``
    and the output must reach ``wsb >= target_delta``, so the result lies in
    the separable domain at the target level.

    Raises
    ------
    PreconditionError
        If either condition fails.
    """
    alphabet = as_alphabet(alphabet)
    W = check_matrix(weights, name="weights")
    if W.shape[0] < 2:
        raise DimensionError("calibration needs at least two sources")
    a1, w1 = asb(W, alphabet), wsb(W, alphabet)
    if not (target_delta > 0):
        raise PreconditionError(f"target must be positive, got {target_delta}")
    if a1 < target_delta:
        raise PreconditionError(
            f"cannot bracket target {target_delta}: asb={a1:.6g} is already below it"
        )

    def f(eps):
        return asb(_transfer_path(W, eps), alphabet) - target_delta

    def done(out, eps):
        # the path only widens the norm gaps, so wsb is checked on the output
        w = wsb(out, alphabet)
        if w < target_delta:
            raise PreconditionError(
                f"calibrated weights have wsb={w:.6g} < target {target_delta} "
                f"(input wsb={w1:.6g})"
            )
        return (out, eps) if return_epsilon else out

    if abs(a1 - target_delta) <= 1e-9:
        return done(W.copy(), 1.0)

    grid = np.linspace(0.0, 1.0, scan_points)
    vals = np.array([f(e) for e in grid])
    below = np.flatnonzero(vals < 0)
    i = below[-1]
    lo, hi = grid[i], grid[i + 1]
    for _ in range(max_iter):
        if hi - lo <= bracket_tol:
            break
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    eps = hi
    out = _transfer_path(W, eps)
    if abs(asb(out, alphabet) - target_delta) > 1e-9:
        raise PreconditionError("bisection did not reach the target within 1e-9")
    return done(out, eps)


def hyperrectangle_bound(alphabet, m):
    """Largest entry size of the perturbation box around the lower-bound center."""
    alphabet = as_alphabet(alphabet)
    return alphabet.min_gap / (6.0 * math.sqrt(2.0) * m**2.5 * alphabet.a_max)


def hyperrectangle_perturbation(center, eps, alphabet=None):
    """Add `eps` to rows ``1..m-1`` and compensate in row ``m``.

    Column sums are preserved. When `alphabet` is given, exceeding the box
    size of :func:`hyperrectangle_bound` triggers a :class:`UserWarning`.
    """
    C = check_matrix(center, name="center")
    m, M = C.shape
    E = np.asarray(eps, dtype=np.float64).reshape(m - 1, M) if m > 1 else np.zeros((0, M))
    out = C.copy()
    out[: m - 1] += E
    out[m - 1] -= E.sum(axis=0)
    if out.min() < 0:
        raise InfeasiblePerturbationError(
            f"perturbed weights leave the nonnegative orthant (min {out.min():.3g})"
        )
    if alphabet is not None and E.size:
        bound = hyperrectangle_bound(alphabet, m)
        if np.max(np.abs(E)) > bound:
            warnings.warn(
                f"perturbation size {np.max(np.abs(E)):.3g} exceeds box bound {bound:.3g}",
                stacklevel=2,
            )
    return out


def asb_limit_constants(alphabet, m):
    """Constants bracketing the limiting ASB of uniformly drawn weights."""
    alphabet = as_alphabet(alphabet)
    if m < 2:
        raise DimensionError(f"m must be at least 2, got {m}")
    k, a_k = alphabet.k, alphabet.a_max
    c = math.sqrt(2.0) * alphabet.second_order_min_gap / (
        math.sqrt(3.0) * k ** (2 * m) * m**2 * (m - 1)
    )
    C = math.sqrt(2.0) * (1.0 + m * a_k) / math.sqrt(m * (m - 1))
    return AsbLimits(c, C)


def asb_upper_bound(alphabet, m):
    """``(1 + m a_k) / sqrt(2 m (m + 1))``: no separable weights exceed this level."""
    alphabet = as_alphabet(alphabet)
    if m < 1:
        raise DimensionError(f"m must be positive, got {m}")
    return (1.0 + m * alphabet.a_max) / math.sqrt(2.0 * m * (m + 1))
