"""Exact constrained weight fit for two sources and two mixtures.

With ``omega = [[t1, t2], [1 - t1, 1 - t2]]`` and a fixed source matrix
``F`` the residual is ``alpha * ||t - t_star||**2 + const`` with
``alpha = ||F[:, 0] - F[:, 1]||**2``, so the fit is a nearest-point problem
in the plane. The feasible region is the unit square minus open disks
centred on the diagonal (one per separation constraint), intersected with
the region on the near side of a hyperbola branch with foci ``(0, 0)`` and
``(1, 1)`` (the norm-gap constraint). The nearest feasible point is either
``t_star``, a critical point of the distance along one boundary curve, or
an intersection of two boundary curves; all are enumerated.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .core import asb_batch, difference_vectors, wsb_batch

FEAS_RTOL = 1e-12
_SAMPLES = 4001


def _as_weights(P):
    P = np.atleast_2d(P)
    return np.stack([P, 1.0 - P], axis=-2)


def feasible_points(P, alphabet, delta):
    """Mask of points ``t`` whose weights lie in the separable domain."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    W = _as_weights(P)
    slack = delta * FEAS_RTOL
    norms = np.linalg.norm(W, axis=-1)
    ok = np.all((P >= 0.0) & (P <= 1.0), axis=1) & (norms[:, 0] > 0)
    ok &= np.minimum(asb_batch(W, alphabet), wsb_batch(W, alphabet)) >= delta - slack
    return ok


class _Hyperbola:
    """Branch ``||1 - t|| - ||t|| = g`` (the one nearer the origin)."""

    def __init__(self, g):
        self.g = g
        c = math.sqrt(2.0) / 2.0
        self.a = g / 2.0
        self.b = math.sqrt(max(c * c - self.a * self.a, 0.0))
        self.u = np.array([1.0, 1.0]) / math.sqrt(2.0)
        self.v = np.array([-1.0, 1.0]) / math.sqrt(2.0)
        self.s_max = math.asinh(1.5 / self.b) if self.b > 0 else 0.0

    def point(self, s):
        s = np.asarray(s, dtype=np.float64)
        return 0.5 - self.a * np.cosh(s)[..., None] * self.u + self.b * np.sinh(s)[..., None] * self.v

    def grid(self):
        return np.linspace(-self.s_max, self.s_max, _SAMPLES)


def _circle_line(c, r, axis, val):
    """Intersections of ``||t - (c, c)|| = r`` with ``t[axis] = val``."""
    h = r * r - (val - c) ** 2
    if h < 0:
        return []
    out = []
    for sgn in (-1.0, 1.0):
        p = [0.0, 0.0]
        p[axis] = val
        p[1 - axis] = c + sgn * math.sqrt(h)
        out.append(p)
    return out


def _circle_circle(c1, r1, c2, r2):
    p1, p2 = np.array([c1, c1]), np.array([c2, c2])
    d = float(np.linalg.norm(p2 - p1))
    if d == 0 or d > r1 + r2 or d < abs(r1 - r2):
        return []
    a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
    h = math.sqrt(max(r1 * r1 - a * a, 0.0))
    mid = p1 + a * (p2 - p1) / d
    perp = np.array([-(p2 - p1)[1], (p2 - p1)[0]]) / d
    return [mid + h * perp, mid - h * perp]


def _roots_along(hyp, func):
    """Parameters where ``func(point(s))`` changes sign along the hyperbola."""
    s = hyp.grid()
    vals = func(hyp.point(s))
    out = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0):
        if vals[i] == 0:
            out.append(s[i])
            continue
        if vals[i + 1] == 0:
            continue
        out.append(brentq(lambda x: float(func(hyp.point(np.array([x])))[0]), s[i], s[i + 1],
                          xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return out


def nearest_feasible(t_star, alphabet, delta):
    """All feasible points nearest to `t_star` (within a relative 1e-10).

    Returns
    -------
    list of ndarray of shape (2,)
        Empty if the feasible region is empty.
    """
    t_star = np.asarray(t_star, dtype=np.float64)
    M = 2
    a_k = alphabet.a_max
    g = 2.0 * math.sqrt(M) * delta / (1.0 + 2.0 * a_k)
    if g >= math.sqrt(2.0):
        return []
    circles = set()
    for d1, d2 in difference_vectors(alphabet, 2):
        s = d1 - d2
        if s == 0:
            if abs(d2) < delta:
                return []
            continue
        circles.add((round(-d2 / s, 15), math.sqrt(M) * delta / abs(s)))
    circles = sorted(circles)
    hyp = _Hyperbola(g)

    cands = [t_star]
    # box edges: projections and corners
    for axis, val in itertools.product((0, 1), (0.0, 1.0)):
        p = np.clip(t_star, 0.0, 1.0)
        p[axis] = val
        cands.append(p)
    cands += [np.array(c, dtype=float) for c in itertools.product((0.0, 1.0), repeat=2)]
    # circles: both critical points of the distance, and intersections
    for c, r in circles:
        center = np.array([c, c])
        dvec = t_star - center
        nrm = np.linalg.norm(dvec)
        dirs = [dvec / nrm] if nrm > 0 else [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        for u in dirs:
            cands += [center + r * u, center - r * u]
        for axis, val in itertools.product((0, 1), (0.0, 1.0)):
            cands += [np.array(p) for p in _circle_line(c, r, axis, val)]
    for (c1, r1), (c2, r2) in itertools.combinations(circles, 2):
        cands += _circle_circle(c1, r1, c2, r2)
    # hyperbola: local minima of the distance and intersections
    if hyp.b > 0:
        s = hyp.grid()
        dist = np.sum((hyp.point(s) - t_star) ** 2, axis=-1)
        for i in range(len(s)):
            lo, hi = max(i - 1, 0), min(i + 1, len(s) - 1)
            if dist[i] <= dist[lo] and dist[i] <= dist[hi]:
                res = minimize_scalar(
                    lambda x: float(np.sum((hyp.point(np.array([x]))[0] - t_star) ** 2)),
                    bounds=(s[lo], s[hi]), method="bounded", options={"xatol": 1e-14},
                )
                cands.append(hyp.point(np.array([res.x]))[0])
        funcs = [lambda P, a=axis, v=val: P[:, a] - v
                 for axis, val in itertools.product((0, 1), (0.0, 1.0))]
        funcs += [lambda P, c=c, r=r: np.sqrt(np.sum((P - c) ** 2, axis=-1)) - r
                  for c, r in circles]
        for f in funcs:
            cands += [hyp.point(np.array([x]))[0] for x in _roots_along(hyp, f)]

    P = np.array(cands, dtype=np.float64)
    P = P[np.all(np.isfinite(P), axis=1)]
    # snap rounding spill-over back into the box
    P = np.where((P < 0) & (P > -1e-13), 0.0, P)
    P = np.where((P > 1) & (P < 1 + 1e-13), 1.0, P)
    P = P[feasible_points(P, alphabet, delta)]
    if len(P) == 0:
        return []
    d2 = np.sum((P - t_star) ** 2, axis=1)
    best = d2.min()
    keep = P[d2 <= best + 1e-10 * max(best, 1e-12)]
    out = []
    for p in keep[np.lexsort(keep.T[::-1])]:
        if not out or np.max(np.abs(p - out[-1])) > 1e-9:
            out.append(p)
    return out
