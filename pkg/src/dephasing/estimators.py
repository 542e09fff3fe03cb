"""scikit-learn style wrappers.

Samples are initial phase-space points, one row ``(q, p)`` each.  The
wrappers only validate input and delegate to the functional API, so they
compose with ``Pipeline`` and ``clone`` but add no numerics of their own.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ensembles import EnsembleSpec
from .fidelity import dr_overlap, estimate_regime_params
from .maps import MapParams, action_series, wrap


def check_points(X) -> np.ndarray:
    """Validate an ``(n, 2)`` array of (q, p) and wrap it onto the torus."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if X.shape[1] != 2:
        raise ValueError(f"expected 2 columns (q, p), got {X.shape[1]}")
    return wrap(X)


def _check_steps(n_steps):
    if int(n_steps) != n_steps or n_steps < 0:
        raise ValueError(f"n_steps must be a non-negative integer, got {n_steps!r}")
    return int(n_steps)


class ActionDifference(TransformerMixin, BaseEstimator):
    """Map initial points to their action-difference series dS(0..n_steps)."""

    def __init__(self, k=20.0, epsilon=0.003, n_steps=100):
        self.k = k
        self.epsilon = epsilon
        self.n_steps = n_steps

    def fit(self, X, y=None):
        X = check_points(X)
        self.params_ = MapParams(self.k, self.epsilon)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_points(X)
        return action_series(X[:, 0], X[:, 1], self.params_, _check_steps(self.n_steps))


class DephasingFidelity(BaseEstimator):
    """Fidelity of the ensemble given as ``X``.

    ``fit`` stores ``fidelity_`` and ``stderr_`` for t = 0..n_steps;
    ``predict`` looks them up at integer times.
    """

    def __init__(self, k=20.0, epsilon=0.003, hbar=2 * np.pi / 1000, n_steps=100, workers=1):
        self.k = k
        self.epsilon = epsilon
        self.hbar = hbar
        self.n_steps = n_steps
        self.workers = workers

    def fit(self, X, y=None):
        X = check_points(X)
        spec = EnsembleSpec.explicit(X)
        curve = dr_overlap(spec, MapParams(self.k, self.epsilon), self.hbar,
                           _check_steps(self.n_steps), workers=self.workers)
        self.n_features_in_ = X.shape[1]
        self.times_ = curve.times
        self.fidelity_ = curve.M
        self.stderr_ = curve.stderr
        self.overlap_ = curve.overlap
        return self

    def predict(self, times):
        check_is_fitted(self, "fidelity_")
        t = np.asarray(times)
        if not np.issubdtype(t.dtype, np.integer):
            if not np.all(t == np.round(t)):
                raise ValueError("times must be integers")
            t = t.astype(int)
        if np.any((t < 0) | (t > self.times_[-1])):
            raise ValueError(f"times must lie in [0, {int(self.times_[-1])}]")
        return self.fidelity_[t]


class RegimeParamsEstimator(BaseEstimator):
    """Correlator integrals, Lyapunov exponent and alpha from an ensemble."""

    def __init__(self, k=20.0, epsilon=0.003, hbar=2 * np.pi / 1000, t_max=50,
                 lyapunov_steps=200, workers=1):
        self.k = k
        self.epsilon = epsilon
        self.hbar = hbar
        self.t_max = t_max
        self.lyapunov_steps = lyapunov_steps
        self.workers = workers

    def fit(self, X, y=None):
        X = check_points(X)
        spec = EnsembleSpec.explicit(X)
        rp, diag = estimate_regime_params(spec, MapParams(self.k, self.epsilon), self.hbar,
                                          T_max=self.t_max, lyapunov_steps=self.lyapunov_steps,
                                          workers=self.workers)
        self.n_features_in_ = X.shape[1]
        self.regime_params_ = rp
        self.integrals_ = diag
        self.K_ = rp.K
        self.C_V_inf_ = rp.C_V_inf
        self.D_ = rp.D
        self.lambda_ = rp.lambda_
        self.alpha_ = rp.alpha
        return self
