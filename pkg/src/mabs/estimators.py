"""scikit-learn style wrapper around the estimation routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .core import SeparationParams, as_alphabet, build_design_matrix, normalize_alphabet
from .estimation import METHODS, estimate
from .exceptions import DimensionError, ValidationError
from .recovery import decode_rows


class FiniteAlphabetSeparator(TransformerMixin, BaseEstimator):
    """Blind separation of finite-alphabet sources from linear mixtures.

    Models ``Y = F @ omega + noise`` where the ``n x m`` source matrix ``F``
    takes values in `alphabet` and the columns of ``omega`` lie on the
    probability simplex.

    Parameters
    ----------
    alphabet : sequence of float, default=(0, 1)
        Source alphabet. Alphabets whose two smallest values are not 0 and 1
        are normalized affinely and observations are mapped accordingly.
    n_sources : int, default=2
    method : {"lloyd", "exact-enum", "exact-grid", "recover"}, default="lloyd"
    delta : float, default=0.01
        Required separation level of the weights.
    lam : float or None, default=None
        Unit-row frequency; ``None`` means ``1 / M``.
    epsilon : float, default=0.0
        Perturbation radius for ``method="recover"``.
    restarts : int, default=10
    resolution : float, default=1e-3
        Grid step of the grid-based routines.
    random_state : int or None, default=None

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Design-row index of every observation.
    sources_ : ndarray of shape (n_samples, n_sources)
        Estimated sources in the original alphabet units.
    weights_ : ndarray of shape (n_sources, n_mixtures)
    objective_ : float
        Residual sum of squares in normalized units.
    feasible_ : bool
    result_ : EstimationResult

    Examples
    --------
    >>> import numpy as np
    >>> W = np.array([[0.2, 0.3], [0.8, 0.7]])
    >>> F = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    >>> sep = FiniteAlphabetSeparator(method="recover").fit(F @ W)
    >>> np.allclose(sep.sources_, F)
    True
    """

    def __init__(self, alphabet=(0.0, 1.0), n_sources=2, method="lloyd", delta=0.01,
                 lam=None, epsilon=0.0, restarts=10, resolution=1e-3, random_state=None):
        self.alphabet = alphabet
        self.n_sources = n_sources
        self.method = method
        self.delta = delta
        self.lam = lam
        self.epsilon = epsilon
        self.restarts = restarts
        self.resolution = resolution
        self.random_state = random_state

    def _alphabet(self):
        A = as_alphabet(self.alphabet, require_normalized=False)
        return A if A.normalized else normalize_alphabet(self.alphabet)

    def fit(self, X, y=None):
        """Estimate sources and weights from the mixtures `X` (n_samples, M)."""
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        A = self._alphabet()
        Y = A.normalize_observations(check_matrix(X, name="X"))
        M = Y.shape[1]
        lam = 1.0 / M if self.lam is None else self.lam
        params = SeparationParams(self.delta, lam, self.epsilon)
        seed = self.random_state
        if seed is not None and not isinstance(seed, (int, np.integer)):
            raise ValidationError("random_state must be an int or None")
        res = estimate(Y, A, self.n_sources, params, method=self.method,
                       restarts=self.restarts, seed=seed, resolution=self.resolution)
        design = build_design_matrix(A, self.n_sources)
        self.alphabet_ = A
        self.labels_ = res.labels
        self.weights_ = res.weights
        self.sources_ = design[res.labels] * A.scale + A.offset
        self.objective_ = res.objective
        self.feasible_ = res.feasible
        self.result_ = res
        self.n_features_in_ = M
        return self

    def _check_X(self, X):
        check_is_fitted(self, "weights_")
        Y = check_matrix(X, name="X")
        if Y.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {Y.shape[1]} columns, the estimator was fitted on {self.n_features_in_}"
            )
        return self.alphabet_.normalize_observations(Y)

    def predict(self, X):
        """Design-row label of each row of `X` under the fitted weights."""
        labels, _ = decode_rows(self._check_X(X), self.weights_, self.alphabet_)
        return labels

    def transform(self, X):
        """Decoded sources for each row of `X`, in original alphabet units."""
        design = build_design_matrix(self.alphabet_, self.n_sources)
        return design[self.predict(X)] * self.alphabet_.scale + self.alphabet_.offset

    def inverse_transform(self, S):
        """Mix sources given in original alphabet units."""
        check_is_fitted(self, "weights_")
        S = check_matrix(S, name="S")
        A = self.alphabet_
        return ((S - A.offset) / A.scale @ self.weights_) * A.scale + A.offset

    def score(self, X, y=None):
        """Negative mean squared reconstruction error in original units."""
        Y = check_matrix(X, name="X")
        R = Y - self.inverse_transform(self.transform(Y))
        return -float(np.mean(R * R))
