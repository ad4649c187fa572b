"""Input validation helpers shared by the functional and estimator APIs."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionError, InvalidWeightsError

COLUMN_SUM_TOL = 1e-12


def check_matrix(X, name="Y", ensure_min_samples=1):
    """Return `X` as a finite 2-D float64 array."""
    try:
        return check_array(
            X,
            dtype=np.float64,
            ensure_2d=True,
            ensure_min_samples=ensure_min_samples,
            input_name=name,
        )
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc


def check_labels(labels, n_design=None, n_samples=None):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DimensionError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        as_int = labels.astype(np.int64)
        if not np.array_equal(as_int, labels):
            raise DimensionError("labels must be integers")
        labels = as_int
    labels = labels.astype(np.int64, copy=False)
    if n_samples is not None and labels.shape[0] != n_samples:
        raise DimensionError(
            f"expected {n_samples} labels, got {labels.shape[0]}"
        )
    if n_design is not None and labels.size:
        if labels.min() < 0 or labels.max() >= n_design:
            raise DimensionError(
                f"labels must lie in [0, {n_design}), "
                f"got range [{labels.min()}, {labels.max()}]"
            )
    return labels


def weights_diagnostics(weights):
    """Domain diagnostics for a mixing matrix.

    Returns
    -------
    dict
        ``min_entry``, ``colsum_error`` (max absolute deviation of a column
        sum from one) and ``norm_margin`` (smallest consecutive gap between
        row norms, with the first row's norm counted as the gap from zero).
    """
    W = np.asarray(weights, dtype=np.float64)
    norms = np.linalg.norm(W, axis=1)
    gaps = np.diff(np.concatenate([[0.0], norms]))
    return {
        "min_entry": float(W.min()),
        "colsum_error": float(np.max(np.abs(W.sum(axis=0) - 1.0))),
        "norm_margin": float(gaps.min()),
    }


def in_weight_domain(weights):
    d = weights_diagnostics(weights)
    return (
        d["min_entry"] >= 0.0
        and d["colsum_error"] <= COLUMN_SUM_TOL
        and d["norm_margin"] > 0.0
    )


def check_weights(weights, m=None, M=None, domain=True):
    """Validate a mixing matrix of shape ``(m, M)``.

    With ``domain=True`` the matrix must be entrywise nonnegative, have
    column sums equal to one within ``1e-12`` and strictly increasing
    Euclidean row norms.
    """
    W = check_matrix(weights, name="weights")
    if m is not None and W.shape[0] != m:
        raise DimensionError(f"weights must have {m} rows, got {W.shape[0]}")
    if M is not None and W.shape[1] != M:
        raise DimensionError(f"weights must have {M} columns, got {W.shape[1]}")
    if domain:
        d = weights_diagnostics(W)
        if d["min_entry"] < 0:
            raise InvalidWeightsError(f"negative weight entry {d['min_entry']:g}")
        if d["colsum_error"] > COLUMN_SUM_TOL:
            raise InvalidWeightsError(
                f"column sums deviate from 1 by {d['colsum_error']:g}"
            )
        if d["norm_margin"] <= 0:
            raise InvalidWeightsError(
                "row norms must be strictly increasing "
                f"(margin {d['norm_margin']:g})"
            )
    return W
