"""Maximum pseudolikelihood, design-point generation and prior construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, log1p
from sklearn.base import BaseEstimator

from . import _kernels as K
from .exceptions import ConvergenceError, SeparationError
from .models import ModelSpec, State
from .validation import check_random_state, check_spd


@dataclass
class MPLEResult:
    theta_hat: np.ndarray
    neg_hessian_inv: np.ndarray
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0
    log_pl: float = 0.0

    def __post_init__(self):
        self.theta_hat = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        self.neg_hessian_inv = np.atleast_2d(np.asarray(self.neg_hessian_inv, dtype=float))
        p = self.theta_hat.size
        if self.neg_hessian_inv.shape != (p, p):
            raise ValueError("covariance shape does not match theta_hat")
        check_spd(self.neg_hessian_inv, "neg_hessian_inv")

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.neg_hessian_inv))

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "covariance": self.neg_hessian_inv.tolist(),
            "diagnostics": {
                "converged": bool(self.converged),
                "iterations": int(self.iterations),
                "grad_inf_norm": float(self.grad_norm),
                "log_pseudolikelihood": float(self.log_pl),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MPLEResult":
        diag = d.get("diagnostics", {})
        return cls(np.array(d["theta_hat"]), np.array(d["covariance"]),
                   diag.get("converged", True), diag.get("iterations", 0),
                   diag.get("grad_inf_norm", 0.0), diag.get("log_pseudolikelihood", 0.0))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MPLEResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PriorBox:
    """Independent uniform prior on a box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ValueError("bounds must have equal length")
        if not np.all(self.lower < self.upper):
            raise ValueError("prior box needs lower < upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def log_density(self, theta) -> float:
        if not self.contains(theta):
            return -np.inf
        return -float(np.sum(np.log(self.upper - self.lower)))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorBox":
        return cls(np.array(d["lower"]), np.array(d["upper"]))


@dataclass
class DesignSet:
    points: np.ndarray
    source: dict = field(default_factory=lambda: {"mode": "given"})

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 2:
            raise ValueError("a design needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("design points must be finite")
        srt = pts[np.lexsort(pts.T[::-1])]
        if np.any(np.all(np.abs(np.diff(srt, axis=0)) <= 1e-12, axis=1)):
            raise ValueError("design contains duplicate rows")
        self.points = pts

    @property
    def d(self) -> int:
        return self.points.shape[0]

    @property
    def p(self) -> int:
        return self.points.shape[1]


# ---------------------------------------------------------------------------
# pseudolikelihood
# ---------------------------------------------------------------------------


def pseudo_design(data: State, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Binary responses and change-statistic covariates, one row per site/dyad.

    Each full conditional is logistic: P(y_u = 1 | rest) = expit(covariates_u . theta).
    """
    if spec.kind == "ising":
        spins = data.spins
        padded = np.pad(spins, 1)
        field_ = padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        y = ((spins.reshape(-1) + 1) // 2).astype(float)
        X = 2.0 * field_.reshape(-1, 1).astype(float)
        return y, X
    kinds, params, factors, edge_scale = spec._encode(data)
    return K.all_change_stats(data.adjacency, kinds, params, factors, edge_scale)


def _logistic_terms(y, X, theta):
    eta = X @ theta
    # log(1 + e^eta) evaluated stably
    softplus = np.where(eta > 0, eta + log1p(np.exp(-np.abs(eta))), log1p(np.exp(-np.abs(eta))))
    ll = float(np.sum(y * eta - softplus))
    prob = expit(eta)
    grad = X.T @ (y - prob)
    w = prob * (1 - prob)
    hess = -(X * w[:, None]).T @ X
    return ll, grad, hess


def pseudo_loglik_grad_hess(data: State, spec: ModelSpec, theta):
    """Log pseudolikelihood with analytic gradient and Hessian."""
    y, X = pseudo_design(data, spec)
    return _logistic_terms(y, X, np.asarray(theta, dtype=float).reshape(spec.dim))


def mple(data: State, spec: ModelSpec, tol: float = 1e-8, max_iter: int = 100) -> MPLEResult:
    """Newton ascent with step halving from theta = 0."""
    y, X = pseudo_design(data, spec)
    return _newton(y, X, tol, max_iter)


# a standard error above 1e3 signals an unbounded pseudolikelihood
SEPARATION_VARIANCE = 1e6


def _newton(y, X, tol, max_iter) -> MPLEResult:
    if np.all(y == y[0]):
        raise SeparationError("all responses identical; pseudolikelihood is unbounded")
    p = X.shape[1]
    theta = np.zeros(p)
    ll, grad, hess = _logistic_terms(y, X, theta)
    for it in range(1, max_iter + 1):
        try:
            chol = np.linalg.cholesky(-hess)
        except np.linalg.LinAlgError:
            raise SeparationError("negative Hessian is singular; parameters not identifiable") from None
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        t = 1.0
        while True:
            cand = theta + t * step
            ll_new, grad_new, hess_new = _logistic_terms(y, X, cand)
            if ll_new >= ll or t < 1e-10:
                break
            t /= 2
        theta, ll, grad, hess = cand, ll_new, grad_new, hess_new
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > 1e6:
            raise SeparationError("Newton iterates diverged; pseudolikelihood appears unbounded")
        if np.max(np.abs(grad)) < tol:
            neg_inv = np.linalg.inv(-hess)
            neg_inv = 0.5 * (neg_inv + neg_inv.T)
            if np.max(np.diag(neg_inv)) > SEPARATION_VARIANCE:
                # quasi-separation: the supremum is approached only at infinity
                raise SeparationError("pseudolikelihood is flat along some direction; the MPLE does not exist")
            try:
                return MPLEResult(theta, neg_inv, True, it, float(np.max(np.abs(grad))), ll)
            except ValueError:
                raise SeparationError("negative Hessian not positive definite at the MPLE") from None
    if np.max(np.abs(grad)) < 1e3 * tol and np.max(np.abs(theta)) > 5:
        raise SeparationError("Newton iterates drifting with vanishing gradient; the MPLE does not exist")
    raise ConvergenceError(f"MPLE did not converge in {max_iter} iterations "
                           f"(|grad|_inf = {np.max(np.abs(grad)):.3g})")


class MaximumPseudolikelihood(BaseEstimator):
    """Estimator wrapper around :func:`mple`.

    Attributes set by ``fit``: ``coef_``, ``covariance_``, ``result_``.
    """

    def __init__(self, spec: Optional[ModelSpec] = None, tol: float = 1e-8, max_iter: int = 100):
        self.spec = spec
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X: State, y=None):
        spec = self.spec if self.spec is not None else ModelSpec.ising()
        self.result_ = mple(X, spec, self.tol, self.max_iter)
        self.coef_ = self.result_.theta_hat
        self.covariance_ = self.result_.neg_hessian_inv
        return self


# ---------------------------------------------------------------------------
# priors and designs
# ---------------------------------------------------------------------------


def prior_box(result: MPLEResult, width_sd: float = 10.0, half_width: bool = True) -> PriorBox:
    """Box centred at the MPLE.

    With ``half_width`` the box extends ``width_sd`` standard errors on each
    side; otherwise the total width is ``width_sd`` standard errors.
    """
    if width_sd <= 0:
        raise ValueError("width_sd must be positive")
    half = width_sd if half_width else width_sd / 2
    sd = result.std_errors
    return PriorBox(result.theta_hat - half * sd, result.theta_hat + half * sd)


def sample_design_points(result: MPLEResult, d: int, nu: float = 5.0, rng=None,
                         prior: Optional[PriorBox] = None, max_tries: int = 1000) -> DesignSet:
    """d draws from a multivariate t centred at the MPLE, scale = inverse negative Hessian.

    Draws outside ``prior`` are rejected and redrawn.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if nu <= 2:
        raise ValueError("nu must exceed 2")
    rng = check_random_state(rng)
    L = np.linalg.cholesky(result.neg_hessian_inv)
    p = result.theta_hat.size
    out = np.empty((0, p))
    for _ in range(max_tries):
        need = d - out.shape[0]
        z = rng.standard_normal((need, p))
        w = rng.chisquare(nu, need)
        draws = result.theta_hat + (z @ L.T) / np.sqrt(w / nu)[:, None]
        if prior is not None:
            draws = draws[[prior.contains(row) for row in draws]]
        out = np.vstack([out, draws])
        if out.shape[0] >= d:
            break
    else:
        raise RuntimeError("rejection sampling of design points failed; prior box too narrow")
    return DesignSet(out[:d], {"mode": "mvt", "nu": float(nu),
                               "center": result.theta_hat.tolist(),
                               "scale": result.neg_hessian_inv.tolist()})


def uniform_design(prior: PriorBox, d: int, rng=None) -> DesignSet:
    """Evenly spaced grid for one parameter; uniform random fill of the box otherwise."""
    if d < 2:
        raise ValueError("d must be >= 2")
    if prior.dim == 1:
        pts = np.linspace(prior.lower[0], prior.upper[0], d)[:, None]
    else:
        rng = check_random_state(rng)
        pts = prior.lower + rng.random((d, prior.dim)) * (prior.upper - prior.lower)
    return DesignSet(pts, {"mode": "uniform-grid", "lower": prior.lower.tolist(),
                           "upper": prior.upper.tolist()})
