"""scikit-learn style wrapper around :func:`flatjet.whitney.whitney_extend`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError
from .jets import Jet, Smoothness, WhitneyField, index_table
from .whitney import DEFAULT_MAX_LEVEL, whitney_extend

__all__ = ["WhitneyExtender"]


class WhitneyExtender(RegressorMixin, BaseEstimator):
    """Nonnegative interpolant of flat jet data.

    ``fit(X, y)`` accepts either values ``y`` of shape ``(N,)``, promoted to
    jets with zero derivatives, or full derivative arrays of shape ``(N, K)``
    ordered as :func:`flatjet.jets.enumerate_multiindices`. After fitting,
    ``extension_`` holds the constructed :class:`~flatjet.whitney.Extension`.
    """

    def __init__(self, s=2.0, epsilon=0.5, pad=3.0, max_level=DEFAULT_MAX_LEVEL):
        self.s = s
        self.epsilon = epsilon
        self.pad = pad
        self.max_level = max_level

    def _validate_X(self, X, reset):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataError("X must be a non-empty 2-d array")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite entries")
        if reset:
            if not 1 <= X.shape[1] <= 4:
                raise DataError(f"dimension {X.shape[1]} outside 1..4")
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def fit(self, X, y):
        smooth = Smoothness.of(self.s)
        if not 0 < self.epsilon < 1:
            raise DataError("epsilon must lie in (0, 1)")
        X = self._validate_X(X, reset=True)
        y = np.asarray(y, dtype=float)
        table = index_table(X.shape[1], smooth.floor_s)
        if y.ndim == 1:
            D = np.zeros((y.size, table.size))
            D[:, 0] = y
        elif y.ndim == 2 and y.shape[1] == table.size:
            D = y
        else:
            raise DataError(f"y must have shape (N,) or (N, {table.size})")
        if D.shape[0] != X.shape[0]:
            raise DataError("X and y have different numbers of rows")
        field = WhitneyField.from_jets(
            Jet.from_array(x, smooth.floor_s, d) for x, d in zip(X, D)
        )
        self.field_ = field
        self.extension_ = whitney_extend(
            field, smooth, eps=self.epsilon, pad=self.pad, max_level=self.max_level
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "extension_")
        X = self._validate_X(X, reset=False)
        return self.extension_(X)

    def predict_derivatives(self, X, order=None):
        """Derivative arrays of order ``<= order`` (default ``floor(s)``)."""
        check_is_fitted(self, "extension_")
        X = self._validate_X(X, reset=False)
        if order is None:
            order = Smoothness.of(self.s).floor_s
        return self.extension_.derivatives(X, order)
