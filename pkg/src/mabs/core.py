"""Finite alphabets, the design matrix, separation boundaries and metrics.

Throughout, a mixing matrix ``omega`` has shape ``(m, M)`` (sources by
mixtures) and an assignment is an integer vector of length ``n`` whose
entries index rows of the design matrix, the ``k**m`` by ``m`` matrix of all
alphabet combinations in lexicographic order (last coordinate fastest).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from ._validation import (
    check_labels,
    check_matrix,
    check_weights,
    in_weight_domain,
    weights_diagnostics,
)
from .exceptions import CapacityError, DimensionError, InvalidAlphabetError

DESIGN_BUDGET = 10**6
LAMBDA_TOL = 1e-12

__all__ = [
    "Alphabet",
    "SeparationParams",
    "SeparabilityReport",
    "Instance",
    "normalize_alphabet",
    "as_alphabet",
    "alphabet_gaps",
    "build_design_matrix",
    "unit_labels",
    "labels_from_rows",
    "difference_vectors",
    "asb",
    "asb_batch",
    "wsb",
    "wsb_batch",
    "unit_counts",
    "required_unit_count",
    "is_separable",
    "lambda_separation",
    "is_delta_separable",
    "mixture",
    "estimation_metric",
    "rowwise_max_distance",
]


@dataclass(frozen=True)
class Alphabet:
    """Ordered finite alphabet.

    Parameters
    ----------
    values : sequence of float
        Strictly increasing values, at least two.
    offset, scale : float
        Affine map from original to stored values, ``(a - offset) / scale``.
        The identity for alphabets given directly in normalized form.
    """

    values: tuple
    offset: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise InvalidAlphabetError("an alphabet needs at least 2 values")
        if not all(math.isfinite(v) for v in vals):
            raise InvalidAlphabetError("alphabet values must be finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidAlphabetError(
                f"alphabet values must be strictly increasing, got {vals}"
            )
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidAlphabetError("scale must be positive and finite")
        object.__setattr__(self, "values", vals)

    @property
    def k(self):
        return len(self.values)

    @property
    def a_max(self):
        """Largest alphabet value (``a_k``)."""
        return self.values[-1]

    @property
    def normalized(self):
        return self.values[0] == 0.0 and self.values[1] == 1.0

    @property
    def affine_map(self):
        return (self.offset, self.scale)

    @cached_property
    def min_gap(self):
        return float(np.min(np.diff(self.values)))

    @cached_property
    def second_order_min_gap(self):
        diffs = _signed_differences(self.values)
        return float(np.min(np.diff(diffs)))

    def as_array(self):
        return np.asarray(self.values, dtype=np.float64)

    def normalize_observations(self, Y):
        """Map observations in original units onto the stored alphabet."""
        return (np.asarray(Y, dtype=np.float64) - self.offset) / self.scale

    def to_dict(self):
        return {
            "values": list(self.values),
            "normalized": self.normalized,
            "affine_map": [self.offset, self.scale],
        }


def _signed_differences(values):
    v = np.asarray(values, dtype=np.float64)
    d = (v[:, None] - v[None, :])[~np.eye(len(v), dtype=bool)]
    d = np.sort(d)
    # collapse floating-point duplicates such as 0.3-0.1 vs 0.2
    scale = max(1.0, float(np.max(np.abs(v))))
    keep = np.concatenate([[True], np.diff(d) > 1e-12 * scale])
    return d[keep]


def normalize_alphabet(raw_values):
    """Sort `raw_values` and map them affinely so the two smallest are 0 and 1.

    Observations in the original units map onto the returned alphabet via
    ``(y - offset) / scale`` (see :meth:`Alphabet.normalize_observations`).

    >>> normalize_alphabet([8, 2, 4]).values
    (0.0, 1.0, 3.0)
    """
    try:
        raw = np.asarray(list(raw_values), dtype=np.float64).ravel()
    except (TypeError, ValueError) as exc:
        raise InvalidAlphabetError(f"cannot parse alphabet: {exc}") from exc
    if not np.all(np.isfinite(raw)):
        raise InvalidAlphabetError("alphabet values must be finite")
    raw = np.unique(raw)
    if raw.size < 2:
        raise InvalidAlphabetError("an alphabet needs at least 2 distinct values")
    a1, a2 = float(raw[0]), float(raw[1])
    scale = a2 - a1
    vals = (raw - a1) / scale
    vals[0], vals[1] = 0.0, 1.0
    return Alphabet(tuple(vals), offset=a1, scale=scale)


def as_alphabet(alphabet, require_normalized=True):
    """Coerce a sequence or :class:`Alphabet` into an :class:`Alphabet`."""
    if not isinstance(alphabet, Alphabet):
        try:
            alphabet = Alphabet(tuple(alphabet))
        except TypeError as exc:
            raise InvalidAlphabetError(f"cannot parse alphabet: {exc}") from exc
    if require_normalized and not alphabet.normalized:
        raise InvalidAlphabetError(
            f"alphabet {alphabet.values} is not normalized (needs 0 and 1 as "
            "its two smallest values); use normalize_alphabet"
        )
    return alphabet


def alphabet_gaps(alphabet):
    """Return ``(min_gap, second_order_min_gap)`` of the alphabet.

    The second-order gap is the smallest absolute difference between two
    distinct elements of the signed difference set ``{a - a' : a != a'}``.
    """
    alphabet = as_alphabet(alphabet)
    return alphabet.min_gap, alphabet.second_order_min_gap


def _check_budget(k, m, what="design matrix"):
    if m < 1:
        raise DimensionError(f"m must be a positive integer, got {m}")
    size = k**m
    if size > DESIGN_BUDGET:
        raise CapacityError(
            f"{what} would have {k}^{m} = {size} rows (budget {DESIGN_BUDGET})"
        )
    return size


@lru_cache(maxsize=64)
def _design_codes(k, m):
    codes = np.indices((k,) * m).reshape(m, -1).T
    codes.setflags(write=False)
    return codes


def build_design_matrix(alphabet, m):
    """All ``k**m`` alphabet combinations as rows, last coordinate fastest.

    >>> build_design_matrix([0, 1], 2)
    array([[0., 0.],
           [0., 1.],
           [1., 0.],
           [1., 1.]])
    """
    alphabet = as_alphabet(alphabet, require_normalized=False)
    _check_budget(alphabet.k, m)
    return alphabet.as_array()[_design_codes(alphabet.k, m)]


def unit_labels(alphabet, m):
    """Design-row indices of the unit vectors ``e^1, ..., e^m``."""
    alphabet = as_alphabet(alphabet)
    k = alphabet.k
    return np.array([k ** (m - 1 - i) for i in range(m)], dtype=np.int64)


def labels_from_rows(rows, alphabet):
    """Design-row indices of the given alphabet-valued rows."""
    alphabet = as_alphabet(alphabet, require_normalized=False)
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    vals = alphabet.as_array()
    codes = np.abs(rows[..., None] - vals).argmin(axis=-1)
    if not np.allclose(vals[codes], rows, rtol=0, atol=1e-12):
        raise DimensionError("rows contain values outside the alphabet")
    m = rows.shape[1]
    return np.ravel_multi_index(codes.T, (alphabet.k,) * m).astype(np.int64)


@lru_cache(maxsize=64)
def _difference_vectors(values, m):
    diffs = np.concatenate([[0.0], _signed_differences(values)])
    d1 = diffs.size
    if d1**m > DESIGN_BUDGET:
        raise CapacityError(
            f"difference set has {d1}^{m} elements (budget {DESIGN_BUDGET})"
        )
    D = diffs[_design_codes(d1, m)]
    # one representative per +/- pair: first nonzero coordinate positive
    nz = D != 0
    first = np.argmax(nz, axis=1)
    lead = D[np.arange(D.shape[0]), first]
    D = D[lead > 0]
    D.setflags(write=False)
    return D


def difference_vectors(alphabet, m):
    """Nonzero vectors ``e - e'`` over ``e, e'`` in the alphabet's m-th power.

    Only one of ``d`` and ``-d`` is kept since the boundaries depend on
    ``|d @ omega|`` alone.
    """
    alphabet = as_alphabet(alphabet, require_normalized=False)
    _check_budget(alphabet.k, m)
    return _difference_vectors(alphabet.values, m)


def asb_batch(weights, alphabet):
    """Alphabet separation boundary for a stack of matrices ``(..., m, M)``."""
    W = np.asarray(weights, dtype=np.float64)
    m, M = W.shape[-2:]
    D = difference_vectors(alphabet, m)
    out = np.full(W.shape[:-2], np.inf)
    # chunk over difference vectors to bound memory for large stacks
    step = max(1, int(4e6 // max(1, W[..., 0, :].size)))
    for start in range(0, D.shape[0], step):
        proj = np.einsum("dm,...mj->...dj", D[start : start + step], W)
        out = np.minimum(out, np.sqrt(np.min(np.sum(proj * proj, axis=-1), axis=-1)))
    return out / math.sqrt(M)


def asb(weights, alphabet):
    """Alphabet separation boundary.

    ``min_{e != e'} ||e omega - e' omega|| / sqrt(M)`` over all pairs of
    alphabet rows, evaluated through the (sign-reduced) difference set.
    """
    alphabet = as_alphabet(alphabet)
    W = check_matrix(weights, name="weights")
    return float(asb_batch(W, alphabet))


def wsb_batch(weights, alphabet):
    """Weights separation boundary for a stack ``(..., m, M)``.

    Negative values mean the rows are not ordered by norm; ``m == 1`` gives
    ``inf`` (empty minimum).
    """
    alphabet = as_alphabet(alphabet)
    W = np.asarray(weights, dtype=np.float64)
    m, M = W.shape[-2:]
    if m == 1:
        return np.full(W.shape[:-2], np.inf)
    norms = np.linalg.norm(W, axis=-1)
    gap = np.min(np.diff(norms, axis=-1), axis=-1)
    return (1.0 + m * alphabet.a_max) / (2.0 * math.sqrt(M)) * gap


def wsb(weights, alphabet):
    """Weights separation boundary.

    ``(1 + m a_k) / (2 sqrt(M)) * min_i (||omega_i|| - ||omega_{i-1}||)``.
    """
    alphabet = as_alphabet(alphabet)
    W = check_matrix(weights, name="weights")
    return float(wsb_batch(W, alphabet))


def _unit_rows(design):
    design = np.asarray(design)
    m = design.shape[1]
    eye = np.eye(m)
    idx = []
    for i in range(m):
        hit = np.flatnonzero(np.all(design == eye[i], axis=1))
        if hit.size != 1:
            raise DimensionError("design matrix does not contain every unit vector")
        idx.append(int(hit[0]))
    return np.array(idx, dtype=np.int64)


def unit_counts(labels, design):
    """How often each unit vector ``e^i`` is selected by `labels`."""
    labels = check_labels(labels, n_design=len(design))
    units = _unit_rows(design)
    return np.array([(labels == u).sum() for u in units], dtype=np.int64)


def required_unit_count(M, lam):
    """Integer threshold for ``count >= M * lam``."""
    return max(0, math.ceil(M * lam - LAMBDA_TOL))


def is_separable(labels, m, design):
    """True iff every unit vector is selected at least once."""
    design = np.asarray(design)
    if design.shape[1] != m:
        raise DimensionError(f"design has {design.shape[1]} columns, expected {m}")
    return bool(np.all(unit_counts(labels, design) >= 1))


def lambda_separation(labels, m, M, lam, design):
    """Check that each unit vector is selected at least ``M * lam`` times.

    Returns
    -------
    passed : bool
    counts : ndarray of shape (m,)
    """
    design = np.asarray(design)
    if design.shape[1] != m:
        raise DimensionError(f"design has {design.shape[1]} columns, expected {m}")
    counts = unit_counts(labels, design)
    return bool(np.all(counts >= required_unit_count(M, lam))), counts


@dataclass(frozen=True)
class SeparationParams:
    """Regularization levels of the parameter space.

    ``delta`` bounds ``min(ASB, WSB)`` from below, ``lam`` sets the minimal
    unit-vector count ``M * lam``, ``epsilon`` is a perturbation radius.
    """

    delta: float
    lam: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise DimensionError(f"delta must be positive, got {self.delta}")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise DimensionError(f"lambda must be positive, got {self.lam}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise DimensionError(f"epsilon must be nonnegative, got {self.epsilon}")

    def epsilon_bound(self, alphabet, m, M):
        """Largest admissible perturbation radius, ``sqrt(M) delta / (1 + m a_k)``."""
        alphabet = as_alphabet(alphabet)
        return math.sqrt(M) * self.delta / (1.0 + m * alphabet.a_max)


@dataclass(frozen=True)
class SeparabilityReport:
    asb: float
    wsb: float
    unit_counts: tuple
    in_domain: bool
    norm_margin: float
    colsum_error: float
    pass_ic1: bool
    pass_ic2: bool

    @property
    def passed(self):
        return self.in_domain and self.pass_ic1 and self.pass_ic2

    def to_dict(self):
        d = asdict(self)
        d["unit_counts"] = list(self.unit_counts)
        d["pass"] = self.passed
        return d


def is_delta_separable(weights, labels, params, alphabet):
    """Membership diagnostics for the regularized parameter space.

    The pair passes when `weights` lies in the weight domain, satisfies
    ``min(asb, wsb) >= delta`` and every unit vector appears at least
    ``M * lam`` times in the assignment.
    """
    alphabet = as_alphabet(alphabet)
    W = check_weights(weights, domain=False)
    m, M = W.shape
    design = build_design_matrix(alphabet, m)
    labels = check_labels(labels, n_design=len(design))
    a, w = asb(W, alphabet), wsb(W, alphabet)
    ok2, counts = lambda_separation(labels, m, M, params.lam, design)
    diag = weights_diagnostics(W)
    return SeparabilityReport(
        asb=a,
        wsb=w,
        unit_counts=tuple(int(c) for c in counts),
        in_domain=in_weight_domain(W),
        norm_margin=diag["norm_margin"],
        colsum_error=diag["colsum_error"],
        pass_ic1=bool(min(a, w) >= params.delta),
        pass_ic2=ok2,
    )


def mixture(labels, weights, design):
    """Noiseless mixture: row ``j`` is ``design[labels[j]] @ weights``."""
    design = np.asarray(design, dtype=np.float64)
    W = check_matrix(weights, name="weights")
    if design.shape[1] != W.shape[0]:
        raise DimensionError(
            f"design has {design.shape[1]} columns but weights have {W.shape[0]} rows"
        )
    labels = check_labels(labels, n_design=len(design))
    return design[labels] @ W


def estimation_metric(pair_a, pair_b):
    """``sqrt(M) * [labels differ] + max_i ||omega_a[i] - omega_b[i]||``."""
    za, wa = pair_a
    zb, wb = pair_b
    za, zb = np.asarray(za), np.asarray(zb)
    wa = np.asarray(wa, dtype=np.float64)
    wb = np.asarray(wb, dtype=np.float64)
    if za.shape != zb.shape or wa.shape != wb.shape or wa.ndim != 2:
        raise DimensionError(
            f"shape mismatch: labels {za.shape} vs {zb.shape}, "
            f"weights {wa.shape} vs {wb.shape}"
        )
    M = wa.shape[1]
    mismatch = 0.0 if np.array_equal(za, zb) else math.sqrt(M)
    return mismatch + float(np.max(np.linalg.norm(wa - wb, axis=1)))


def rowwise_max_distance(G, H):
    G = np.asarray(G, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if G.shape != H.shape:
        raise DimensionError(f"shape mismatch: {G.shape} vs {H.shape}")
    if G.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(np.atleast_2d(G - H), axis=-1)))


@dataclass
class Instance:
    """A complete problem: truth, noise level, regularization and data."""

    alphabet: Alphabet
    weights: np.ndarray
    labels: np.ndarray
    sigma: float
    params: SeparationParams
    G: np.ndarray
    Y: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.weights.shape[0]

    @property
    def M(self):
        return self.weights.shape[1]

    @property
    def n(self):
        return self.labels.shape[0]

    @property
    def design(self):
        return build_design_matrix(self.alphabet, self.m)

    @classmethod
    def from_truth(cls, alphabet, weights, labels, params, sigma=0.0, Y=None, seed=None):
        alphabet = as_alphabet(alphabet)
        W = check_matrix(weights, name="weights")
        design = build_design_matrix(alphabet, W.shape[0])
        labels = check_labels(labels, n_design=len(design))
        G = mixture(labels, W, design)
        if Y is None:
            if sigma != 0:
                raise DimensionError("observations required when sigma > 0")
            Y = G.copy()
        Y = check_matrix(Y)
        if Y.shape != G.shape:
            raise DimensionError(f"Y has shape {Y.shape}, expected {G.shape}")
        return cls(alphabet, W, labels, float(sigma), params, G, Y, seed)
