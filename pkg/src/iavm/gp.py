"""Gaussian-process binding function from parameters to statistic means.

One independent GP per output dimension, each with a Matern-3/2 covariance,
a linear trend (intercept plus one slope per input) estimated by generalized
least squares, and hyperparameters (partial sill, range, nugget) chosen by
maximising the profile log marginal likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .exceptions import DuplicateDesignError, OptimizerError

SQRT3 = math.sqrt(3.0)


@dataclass
class GPHyper:
    sigma2: float
    phi: float
    tau2: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.phi > 0 and self.tau2 >= 0):
            raise ValueError("need sigma2 > 0, phi > 0, tau2 >= 0")
        self.beta = np.asarray(self.beta, dtype=float)
        if not all(np.isfinite([self.sigma2, self.phi, self.tau2])) or not np.all(np.isfinite(self.beta)):
            raise ValueError("hyperparameters must be finite")


def matern32(a, b, hyper: GPHyper, same_index: bool = False) -> float:
    """Covariance between two inputs; the nugget is added only for a self-pair."""
    r = float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
    z = SQRT3 * r / hyper.phi
    value = hyper.sigma2 * (1.0 + z) * math.exp(-z)
    return value + (hyper.tau2 if same_index else 0.0)


def matern32_matrix(A, B, sigma2: float, phi: float) -> np.ndarray:
    """Cross-covariance matrix without nugget."""
    z = SQRT3 * cdist(np.atleast_2d(A), np.atleast_2d(B)) / phi
    return sigma2 * (1.0 + z) * np.exp(-z)


def _trend(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def profile_loglik(log_params, X, y, dist=None, grad=True):
    """Profile log marginal likelihood (beta by GLS) and its gradient in
    (log sigma2, log phi, log tau2)."""
    sigma2, phi, tau2 = np.exp(log_params)
    d = X.shape[0]
    if dist is None:
        dist = cdist(X, X)
    z = SQRT3 * dist / phi
    ez = np.exp(-z)
    R = (1.0 + z) * ez
    C = sigma2 * R + tau2 * np.eye(d)
    try:
        cf = cho_factor(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return (-np.inf, np.zeros(3)) if grad else -np.inf
    F = _trend(X)
    CiF = cho_solve(cf, F, check_finite=False)
    Ciy = cho_solve(cf, y, check_finite=False)
    beta = np.linalg.solve(F.T @ CiF, F.T @ Ciy)
    resid = y - F @ beta
    alpha = cho_solve(cf, resid, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    ll = -0.5 * resid @ alpha - 0.5 * logdet - 0.5 * d * math.log(2 * math.pi)
    if not grad:
        return ll
    Ci = cho_solve(cf, np.eye(d), check_finite=False)
    W = np.outer(alpha, alpha) - Ci
    dC = (sigma2 * R, sigma2 * z * z * ez, tau2 * np.eye(d))
    g = np.array([0.5 * np.sum(W * D) for D in dC])
    return ll, g


def concentrated_loglik(log_params, X, y, dist):
    """Log likelihood with sigma2 and beta profiled out, in (log phi, log g), g = tau2 / sigma2.

    Returns (loglik, gradient, sigma2_hat).
    """
    phi, g = np.exp(log_params)
    d = X.shape[0]
    z = SQRT3 * dist / phi
    ez = np.exp(-z)
    Rg = (1.0 + z) * ez + g * np.eye(d)
    try:
        cf = cho_factor(Rg, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return -np.inf, np.zeros(2), np.nan
    F = _trend(X)
    CiF = cho_solve(cf, F, check_finite=False)
    beta = np.linalg.solve(F.T @ CiF, CiF.T @ y)
    resid = y - F @ beta
    a = cho_solve(cf, resid, check_finite=False)
    s2 = max(resid @ a / d, 1e-300)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    ll = -0.5 * d * math.log(s2) - 0.5 * logdet - 0.5 * d * (1 + math.log(2 * math.pi))
    Ri = cho_solve(cf, np.eye(d), check_finite=False)
    W = np.outer(a, a) / s2 - Ri
    grad = np.array([0.5 * np.sum(W * (z * z * ez)), 0.5 * g * np.trace(W)])
    return ll, grad, s2


@dataclass
class _Fitted:
    hyper: GPHyper
    chol: np.ndarray
    alpha: np.ndarray


class GPBinding(BaseEstimator, RegressorMixin):
    """Kriging emulator for a vector-valued mean function.

    Parameters
    ----------
    n_starts : int
        Number of log-uniform multi-start points for the hyperparameter search.
    nugget_floor : float
        Lower bound on the nugget, in standardized output units.
    phi_bounds : tuple of float
        Bounds on the range parameter, in standardized input units.
    standardize : bool
        Centre/scale inputs and outputs before fitting.
    hyperparams : dict or list of dict, optional
        Fixed (sigma2, phi, tau2) per output dimension; skips optimisation.
        Values are in the units the GP is fitted in (standardized if
        ``standardize`` is true).
    random_state : int
        Seed for the multi-start points.
    """

    def __init__(self, n_starts: int = 8, nugget_floor: float = 1e-8, phi_bounds=(1e-3, 1e3),
                 standardize: bool = True, hyperparams=None, random_state: int = 0):
        self.n_starts = n_starts
        self.nugget_floor = nugget_floor
        self.phi_bounds = phi_bounds
        self.standardize = standardize
        self.hyperparams = hyperparams
        self.random_state = random_state

    # -- fitting ---------------------------------------------------------

    def fit(self, X, Y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(Y, dtype=float)
        self._single_output = Y.ndim == 1
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y need the same number of rows")
        d, p = X.shape
        if d < p + 2:
            raise ValueError(f"need at least p + 2 = {p + 2} design points, got {d}")
        # canonical row order makes the fit invariant to input permutations
        order = np.lexsort(X.T[::-1])
        X, Y = X[order], Y[order]
        if np.any(np.all(np.diff(X, axis=0) == 0, axis=1)):
            raise DuplicateDesignError("design contains duplicate rows")

        if self.standardize:
            self.x_mean_ = X.mean(axis=0)
            sx = X.std(axis=0)
            self.x_scale_ = np.where(sx > 0, sx, 1.0)
            self.y_mean_ = Y.mean(axis=0)
            sy = Y.std(axis=0)
            self.y_scale_ = np.where(sy > 0, sy, 1.0)
        else:
            self.x_mean_, self.x_scale_ = np.zeros(p), np.ones(p)
            self.y_mean_, self.y_scale_ = np.zeros(Y.shape[1]), np.ones(Y.shape[1])
        Xs = (X - self.x_mean_) / self.x_scale_
        Ys = (Y - self.y_mean_) / self.y_scale_
        self.X_train_ = Xs
        self.n_features_in_ = p

        fixed = self.hyperparams
        if isinstance(fixed, dict):
            fixed = [fixed] * Y.shape[1]
        dist = cdist(Xs, Xs)
        self.models_ = []
        for k in range(Y.shape[1]):
            if fixed is not None:
                h = fixed[k]
                params = (float(h["sigma2"]), float(h["phi"]), float(h["tau2"]))
            else:
                params = self._optimise(Xs, Ys[:, k], dist, k)
            self.models_.append(self._condition(Xs, Ys[:, k], *params))
        return self

    def _bounds(self):
        lo_phi, hi_phi = self.phi_bounds
        return [(math.log(1e-8), math.log(1e8)),
                (math.log(lo_phi), math.log(hi_phi)),
                (math.log(self.nugget_floor), math.log(1e2))]

    def _starts(self, k):
        # (log phi, log nugget ratio)
        rng = np.random.default_rng([self.random_state, k])
        lo = np.log([5e-2, 1e-6])
        hi = np.log([5.0, 1e-1])
        return lo + rng.random((self.n_starts, 2)) * (hi - lo)

    def _optimise(self, Xs, y, dist, k):
        lo_phi, hi_phi = self.phi_bounds
        bounds2 = [(math.log(lo_phi), math.log(hi_phi)), (math.log(1e-12), math.log(1e2))]

        def objective2(lp):
            ll, g, _ = concentrated_loglik(lp, Xs, y, dist)
            if not np.isfinite(ll):
                return 1e300, np.zeros(2)
            return -ll, -g

        best = None
        for x0 in self._starts(k):
            try:
                res = minimize(objective2, x0, jac=True, method="L-BFGS-B", bounds=bounds2,
                               options={"maxiter": 1000, "ftol": 1e-14, "gtol": 1e-9})
            except (np.linalg.LinAlgError, ValueError):
                continue
            if not np.isfinite(res.fun) or res.fun >= 1e299:
                continue
            if best is None or res.fun < best.fun:
                best = res
        if best is None:
            raise OptimizerError(f"all {self.n_starts} starts failed for output {k}")

        # polish in (log sigma2, log phi, log tau2) where the nugget floor applies
        _, _, s2 = concentrated_loglik(best.x, Xs, y, dist)
        phi, ratio = np.exp(best.x)
        bounds3 = self._bounds()
        x0 = np.clip(np.log([s2, phi, max(ratio * s2, self.nugget_floor)]),
                     [b[0] for b in bounds3], [b[1] for b in bounds3])

        def objective3(lp):
            ll, g = profile_loglik(lp, Xs, y, dist)
            if not np.isfinite(ll):
                return 1e300, np.zeros(3)
            return -ll, -g

        start_val = objective3(x0)[0]
        x = x0
        try:
            res = minimize(objective3, x0, jac=True, method="L-BFGS-B", bounds=bounds3,
                           options={"maxiter": 1000, "ftol": 1e-15, "gtol": 1e-10})
            if np.isfinite(res.fun) and res.fun <= start_val:
                x = res.x
        except (np.linalg.LinAlgError, ValueError):
            pass
        return tuple(np.exp(x))

    def _condition(self, Xs, y, sigma2, phi, tau2) -> _Fitted:
        d = Xs.shape[0]
        C = matern32_matrix(Xs, Xs, sigma2, phi) + tau2 * np.eye(d)
        L = np.linalg.cholesky(C)
        F = _trend(Xs)
        CiF = cho_solve((L, True), F)
        beta = np.linalg.solve(F.T @ CiF, CiF.T @ y)
        alpha = cho_solve((L, True), y - F @ beta)
        return _Fitted(GPHyper(sigma2, phi, tau2, beta), L, alpha)

    # -- prediction ------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "models_"):
            raise NotFittedError("GPBinding is not fitted yet")

    def _scaled(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if X.size == self.n_features_in_ else X[:, None]
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features")
        return (X - self.x_mean_) / self.x_scale_

    def predict(self, X, return_var: bool = False):
        """EBLUP of the mean at each row of X (shape (n, q), or (n,) for a single output)."""
        self._check_fitted()
        Xs = self._scaled(X)
        F = _trend(Xs)
        out = np.empty((Xs.shape[0], len(self.models_)))
        var = np.empty_like(out) if return_var else None
        for k, m in enumerate(self.models_):
            c = matern32_matrix(Xs, self.X_train_, m.hyper.sigma2, m.hyper.phi)
            out[:, k] = F @ m.hyper.beta + c @ m.alpha
            if return_var:
                v = solve_triangular(m.chol, c.T, lower=True)
                var[:, k] = np.maximum(m.hyper.sigma2 + m.hyper.tau2 - np.sum(v * v, axis=0), 0.0)
        out = self.y_mean_ + out * self.y_scale_
        if return_var:
            var = var * self.y_scale_ ** 2
        if self._single_output:
            out = out[:, 0]
            var = var[:, 0] if return_var else None
        return (out, var) if return_var else out

    def predict_mean(self, theta) -> np.ndarray:
        """Mean vector at a single parameter point."""
        self._check_fitted()
        out = self.predict(np.atleast_1d(np.asarray(theta, dtype=float)).reshape(1, -1))
        return np.atleast_1d(out[0])

    def predict_variance(self, theta) -> np.ndarray:
        self._check_fitted()
        _, var = self.predict(np.atleast_1d(np.asarray(theta, dtype=float)).reshape(1, -1), return_var=True)
        return np.atleast_1d(var[0])

    def refit_outputs(self, Y):
        """Recondition on new outputs at the same design with the current hyperparameters.

        Y must follow the row order of ``X_train_`` in original units.
        """
        self._check_fitted()
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        Ys = (Y - self.y_mean_) / self.y_scale_
        self.models_ = [self._condition(self.X_train_, Ys[:, k], m.hyper.sigma2, m.hyper.phi, m.hyper.tau2)
                        for k, m in enumerate(self.models_)]
        return self

    @property
    def hyper_(self) -> list:
        self._check_fitted()
        return [m.hyper for m in self.models_]

    def log_marginal_likelihood(self, k: int = 0, log_params=None):
        """Profile log likelihood of output k and its gradient in log-parameters."""
        self._check_fitted()
        m = self.models_[k]
        if log_params is None:
            log_params = np.log([m.hyper.sigma2, m.hyper.phi, m.hyper.tau2])
        y = self._train_outputs(k)
        return profile_loglik(np.asarray(log_params, dtype=float), self.X_train_, y)

    def _train_outputs(self, k):
        m = self.models_[k]
        C = matern32_matrix(self.X_train_, self.X_train_, m.hyper.sigma2, m.hyper.phi)
        C[np.diag_indices_from(C)] += m.hyper.tau2
        return C @ m.alpha + _trend(self.X_train_) @ m.hyper.beta

    # -- persistence -----------------------------------------------------

    def to_arrays(self) -> dict:
        self._check_fitted()
        arrays = {
            "gp/x_mean": self.x_mean_, "gp/x_scale": self.x_scale_,
            "gp/y_mean": self.y_mean_, "gp/y_scale": self.y_scale_,
            "gp/X_train": self.X_train_,
            "gp/single_output": np.array([float(self._single_output)]),
        }
        for k, m in enumerate(self.models_):
            arrays[f"gp/{k}/hyper"] = np.array([m.hyper.sigma2, m.hyper.phi, m.hyper.tau2])
            arrays[f"gp/{k}/beta"] = m.hyper.beta
            arrays[f"gp/{k}/chol"] = m.chol
            arrays[f"gp/{k}/alpha"] = m.alpha
        return arrays

    @classmethod
    def from_arrays(cls, arrays: dict, **params) -> "GPBinding":
        gp = cls(**params)
        gp.x_mean_ = arrays["gp/x_mean"]
        gp.x_scale_ = arrays["gp/x_scale"]
        gp.y_mean_ = arrays["gp/y_mean"]
        gp.y_scale_ = arrays["gp/y_scale"]
        gp.X_train_ = arrays["gp/X_train"]
        gp.n_features_in_ = gp.X_train_.shape[1]
        gp._single_output = bool(arrays["gp/single_output"][0])
        gp.models_ = []
        k = 0
        while f"gp/{k}/hyper" in arrays:
            s2, phi, t2 = arrays[f"gp/{k}/hyper"]
            gp.models_.append(_Fitted(GPHyper(s2, phi, t2, arrays[f"gp/{k}/beta"]),
                                      arrays[f"gp/{k}/chol"], arrays[f"gp/{k}/alpha"]))
            k += 1
        return gp


def fit_gp(design, means, **params) -> GPBinding:
    """Fit one emulator per statistic to (design points, sample means)."""
    points = getattr(design, "points", design)
    return GPBinding(**params).fit(points, means)
