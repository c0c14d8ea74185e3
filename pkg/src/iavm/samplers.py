"""MCMC over theta for models with intractable normalising functions.

All three samplers share one Metropolis-Hastings step and differ only in how
the auxiliary statistic S_y is produced at the proposed parameter:

* ``dmh``      a short Gibbs run started at the observed data,
* ``exchange`` an exact draw by coupling from the past (Ising only),
* ``iavm``     a normal draw with GP-emulated mean and nearest-design covariance.
"""

from __future__ import annotations

import csv
import io as _io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels as K
from .diagnostics import mcse
from .exceptions import DigestMismatchError, IAVMError
from .models import LatticeState, ModelSpec, State, cftp_ising, suff_stats
from .precompute import PrecomputeStore
from .pseudolikelihood import PriorBox, mple
from .validation import check_random_state, check_spd, check_theta

ALGORITHMS = ("dmh", "iavm", "exchange")


@dataclass
class ProposalSpec:
    """Symmetric random-walk normal proposal with covariance ``scale * covariance``."""

    covariance: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        check_spd(self.covariance, "proposal covariance")
        if not self.scale > 0:
            raise ValueError("proposal scale must be positive")
        self.chol = np.linalg.cholesky(self.scale * self.covariance)

    @classmethod
    def sd(cls, sd: float, p: int = 1) -> "ProposalSpec":
        return cls(np.eye(p) * float(sd) ** 2)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def draw(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return theta + self.chol @ rng.standard_normal(self.dim)

    def log_ratio(self, theta_n, theta_star) -> float:
        # q(theta_n | theta_star) / q(theta_star | theta_n) for a symmetric walk
        return 0.0


def log_accept_ratio(theta_n, theta_star, S_x, S_y, prior: PriorBox,
                     proposal: Optional[ProposalSpec] = None) -> float:
    """Log MH ratio with an auxiliary statistic; the normalising function cancels."""
    theta_n = np.atleast_1d(np.asarray(theta_n, dtype=float))
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    if not (prior.contains(theta_star) and prior.contains(theta_n)):
        return -math.inf
    S_x = np.atleast_1d(np.asarray(S_x, dtype=float))
    S_y = np.atleast_1d(np.asarray(S_y, dtype=float))
    diff = theta_star - theta_n
    out = prior.log_density(theta_star) - prior.log_density(theta_n)
    out += float(diff @ S_x) - float(diff @ S_y)
    if proposal is not None:
        out += proposal.log_ratio(theta_n, theta_star)
    return out


@dataclass
class Chain:
    samples: np.ndarray
    accepted: int
    wall_seconds: float
    seed: Optional[int]
    algorithm: str
    names: list
    aux_draws: int = 0
    aux_cycles: int = 0
    aux_seconds: float = 0.0
    settings: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.n if self.n else float("nan")

    @property
    def aux_seconds_per_draw(self) -> float:
        return self.aux_seconds / self.aux_draws if self.aux_draws else float("nan")

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"theta_{k + 1}" for k in range(self.samples.shape[1])])
        for row in self.samples:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def manifest(self) -> dict:
        """Run description with no timing fields, so reruns hash identically."""
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "n_samples": self.n,
            "parameters": list(self.names),
            "accepted": int(self.accepted),
            "acceptance_rate": self.acceptance_rate,
            "aux_draws": int(self.aux_draws),
            "aux_gibbs_cycles": int(self.aux_cycles),
            "aux_gibbs_cycles_per_iteration": self.aux_cycles / self.n if self.n else 0.0,
            "settings": self.settings,
        }

    def timing(self) -> dict:
        return {"wall_seconds": self.wall_seconds, "aux_seconds": self.aux_seconds,
                "aux_seconds_per_draw": self.aux_seconds_per_draw}

    @classmethod
    def from_csv(cls, text: str, algorithm: str = "unknown", wall_seconds: float = 0.0) -> "Chain":
        rows = list(csv.reader(_io.StringIO(text)))
        names = rows[0]
        samples = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(names))
        accepted = int(np.sum(np.any(np.diff(samples, axis=0) != 0, axis=1)))
        return cls(samples, accepted, wall_seconds, None, algorithm, names)


# ---------------------------------------------------------------------------
# auxiliary draws
# ---------------------------------------------------------------------------


class _InnerGibbs:
    """Scratch model state reset to the observed data before every inner run."""

    def __init__(self, data: State, spec: ModelSpec, cycles: int):
        self.spec = spec
        self.cycles = int(cycles)
        if spec.kind == "ising":
            self.data_spins = data.spins
            self.spins = data.spins.copy()
            self.data_stat = int(K.ising_stat(self.spins))
        else:
            self.kinds, self.params, self.factors, self.edge_scale = spec._encode(data)
            self.n = data.n_nodes
            self.pristine = (data.adjacency.copy(),) + tuple(K.build_cache(data.adjacency.copy()))
            self.work = tuple(a.copy() for a in self.pristine)
            self.data_stats = K.full_stats(data.adjacency, self.kinds, self.params, self.factors,
                                           self.edge_scale)
            self.stats = self.data_stats.copy()

    def __call__(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.spec.kind == "ising":
            np.copyto(self.spins, self.data_spins)
            u = rng.random((self.cycles,) + self.spins.shape)
            stat = K.ising_run(self.spins, float(theta[0]), u, self.data_stat, 0, np.empty(0))
            return np.array([float(stat)])
        for dst, src in zip(self.work, self.pristine):
            np.copyto(dst, src)
        np.copyto(self.stats, self.data_stats)
        adj, nbr, pos, deg, sp = self.work
        m = self.cycles * self.n * (self.n - 1) // 2
        a = rng.integers(0, self.n, m)
        b = rng.integers(0, self.n - 1, m)
        b = b + (b >= a)
        u = rng.random(m)
        K.ergm_gibbs(adj, nbr, pos, deg, sp, np.asarray(theta, dtype=np.float64), self.kinds, self.params,
                     self.factors, self.edge_scale, a, b, u, self.stats)
        return self.stats.copy()


class _SurrogateDraw:
    def __init__(self, store: PrecomputeStore, gp):
        self.store = store
        self.gp = gp

    def __call__(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.gp.predict_mean(theta)
        _, L = self.store.nearest(theta)
        return mu + L @ rng.standard_normal(mu.size)


class _PerfectDraw:
    def __init__(self, data: LatticeState, max_sweeps: int):
        self.rows, self.cols = data.shape
        self.max_sweeps = max_sweeps

    def __call__(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        lat = cftp_ising(float(theta[0]), self.rows, self.cols, rng, max_sweeps=self.max_sweeps)
        return np.array([float(K.ising_stat(lat.spins))])


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


def _start(theta0, data, spec, prior) -> np.ndarray:
    if theta0 is not None:
        theta0 = check_theta(theta0, spec.dim)
        if not prior.contains(theta0):
            raise ValueError("initial value lies outside the prior support")
        return theta0
    try:
        th = mple(data, spec).theta_hat
        if prior.contains(th):
            return th
    except IAVMError:
        pass
    return 0.5 * (prior.lower + prior.upper)


def _seed_of(rng) -> Optional[int]:
    return int(rng) if isinstance(rng, (int, np.integer)) else None


def metropolis(S_x, prior: PriorBox, proposal: ProposalSpec, aux: Callable, theta0: np.ndarray,
               N: Optional[int], rng: np.random.Generator, mcse_target: Optional[float] = None,
               check_every: int = 1000, max_iter: int = 10 ** 7, cycles_per_draw: int = 0):
    """Random-walk MH driven by an auxiliary-statistic generator.

    With ``mcse_target`` the chain is extended in blocks of ``check_every``
    until every coordinate's batch-means MCSE is at or below the target
    (at least N iterations, at most ``max_iter``).
    """
    p = theta0.size
    if proposal.dim != p or prior.dim != p:
        raise ValueError("prior, proposal and model dimensions disagree")
    if N is None and mcse_target is None:
        raise ValueError("give N, mcse_target or both")
    n_min = N if N is not None else check_every
    if n_min < 1:
        raise ValueError("N must be >= 1")
    cap = n_min if mcse_target is None else max(max_iter, n_min)
    S_x = np.atleast_1d(np.asarray(S_x, dtype=float))
    out = np.empty((min(cap, max(n_min, 1024)), p))
    theta = theta0.copy()
    accepted = draws = 0
    aux_seconds = 0.0
    t0 = time.perf_counter()
    it = 0
    while True:
        star = proposal.draw(theta, rng)
        if prior.contains(star):
            ta = time.perf_counter()
            S_y = aux(star, rng)
            aux_seconds += time.perf_counter() - ta
            draws += 1
            if math.log(rng.random()) < log_accept_ratio(theta, star, S_x, S_y, prior, proposal):
                theta = star
                accepted += 1
        if it == out.shape[0]:
            out = np.concatenate([out, np.empty_like(out)])[:cap]
        out[it] = theta
        it += 1
        if it >= cap:
            break
        if mcse_target is not None and it >= n_min and it % check_every == 0 and it >= 100:
            if all(mcse(out[:it, k]) <= mcse_target for k in range(p)):
                break
    wall = time.perf_counter() - t0
    return out[:it].copy(), accepted, wall, draws, draws * cycles_per_draw, aux_seconds


def _chain(algorithm, spec, rng_arg, result, settings) -> Chain:
    samples, accepted, wall, draws, cycles, aux_s = result
    return Chain(samples, accepted, wall, _seed_of(rng_arg), algorithm, spec.labels, draws, cycles, aux_s,
                 settings)


def _settings(prior, proposal, N, theta0, mcse_target, **extra) -> dict:
    out = {"prior": prior.to_dict(), "proposal_covariance": proposal.covariance.tolist(),
           "proposal_scale": proposal.scale, "N": N, "theta0": theta0.tolist(), "mcse_target": mcse_target}
    out.update(extra)
    return out


def run_dmh(data: State, spec: ModelSpec, prior: PriorBox, proposal: ProposalSpec, N: Optional[int] = None,
            rng=None, inner_cycles: int = 1, theta0=None, mcse_target: Optional[float] = None) -> Chain:
    """Double Metropolis-Hastings: S_y from ``inner_cycles`` Gibbs cycles started at the data."""
    if inner_cycles < 1:
        raise ValueError("inner_cycles must be >= 1")
    gen = check_random_state(rng)
    th0 = _start(theta0, data, spec, prior)
    aux = _InnerGibbs(data, spec, inner_cycles)
    res = metropolis(suff_stats(data, spec), prior, proposal, aux, th0, N, gen, mcse_target,
                     cycles_per_draw=inner_cycles)
    return _chain("dmh", spec, rng, res, _settings(prior, proposal, N, th0, mcse_target,
                                                   inner_cycles=inner_cycles))


def run_iavm(data: State, spec: ModelSpec, prior: PriorBox, proposal: ProposalSpec, store: PrecomputeStore,
             gp=None, N: Optional[int] = None, rng=None, theta0=None,
             mcse_target: Optional[float] = None) -> Chain:
    """IAVM: S_y ~ N(GP mean at theta*, covariance of the nearest design point)."""
    if store.model_digest != spec.digest(data):
        raise DigestMismatchError("precompute store was built for a different model or data size")
    gp = gp if gp is not None else store.gp
    if gp is None:
        raise IAVMError("no fitted GP: run fit-gp on the store first")
    gen = check_random_state(rng)
    th0 = _start(theta0, data, spec, prior)
    res = metropolis(suff_stats(data, spec), prior, proposal, _SurrogateDraw(store, gp), th0, N, gen,
                     mcse_target)
    return _chain("iavm", spec, rng, res, _settings(prior, proposal, N, th0, mcse_target,
                                                    store_digest=store.model_digest, d=store.d, M=store.M))


def run_exchange(data: LatticeState, spec: ModelSpec, prior: PriorBox, proposal: ProposalSpec,
                 N: Optional[int] = None, rng=None, theta0=None, mcse_target: Optional[float] = None,
                 max_sweeps: int = 2 ** 20) -> Chain:
    """Exchange algorithm with perfect Ising draws; the prior is truncated at 0.

    Coupling-from-the-past slows sharply near the critical point
    (theta ~ 0.44). On a 100x100 lattice one draw takes well under a second
    for theta <= 0.4 and several seconds by 0.43. ``max_sweeps`` bounds the
    search for a coalescence time, so a chain that wanders there fails loudly
    instead of stalling.
    """
    if spec.kind != "ising":
        raise ValueError("the exchange sampler needs perfect simulation and supports Ising only")
    lower = np.maximum(prior.lower, 0.0)
    if not np.all(lower < prior.upper):
        raise ValueError("prior support has no nonnegative part")
    box = PriorBox(lower, prior.upper)
    gen = check_random_state(rng)
    th0 = _start(theta0, data, spec, box)
    res = metropolis(suff_stats(data, spec), box, proposal, _PerfectDraw(data, max_sweeps), th0, N, gen,
                     mcse_target)
    return _chain("exchange", spec, rng, res, _settings(box, proposal, N, th0, mcse_target))


# ---------------------------------------------------------------------------
# estimator wrappers
# ---------------------------------------------------------------------------


class _SamplerBase(BaseEstimator):
    def _finish(self, chain: Chain):
        self.chain_ = chain
        self.samples_ = chain.samples
        self.posterior_mean_ = chain.samples.mean(axis=0)
        self.acceptance_rate_ = chain.acceptance_rate
        return self


class DMHSampler(_SamplerBase):
    """Estimator wrapper for :func:`run_dmh`; ``fit(data)`` runs the chain."""

    def __init__(self, spec=None, prior=None, proposal=None, n_samples=10_000, inner_cycles=1,
                 theta0=None, mcse_target=None, random_state=0):
        self.spec = spec
        self.prior = prior
        self.proposal = proposal
        self.n_samples = n_samples
        self.inner_cycles = inner_cycles
        self.theta0 = theta0
        self.mcse_target = mcse_target
        self.random_state = random_state

    def fit(self, X, y=None):
        return self._finish(run_dmh(X, self.spec, self.prior, self.proposal, self.n_samples, self.random_state,
                                    self.inner_cycles, self.theta0, self.mcse_target))


class IAVMSampler(_SamplerBase):
    """Estimator wrapper for :func:`run_iavm`."""

    def __init__(self, spec=None, prior=None, proposal=None, store=None, n_samples=10_000, theta0=None,
                 mcse_target=None, random_state=0):
        self.spec = spec
        self.prior = prior
        self.proposal = proposal
        self.store = store
        self.n_samples = n_samples
        self.theta0 = theta0
        self.mcse_target = mcse_target
        self.random_state = random_state

    def fit(self, X, y=None):
        return self._finish(run_iavm(X, self.spec, self.prior, self.proposal, self.store, None, self.n_samples,
                                     self.random_state, self.theta0, self.mcse_target))


class ExchangeSampler(_SamplerBase):
    """Estimator wrapper for :func:`run_exchange`."""

    def __init__(self, spec=None, prior=None, proposal=None, n_samples=10_000, theta0=None,
                 mcse_target=None, random_state=0):
        self.spec = spec
        self.prior = prior
        self.proposal = proposal
        self.n_samples = n_samples
        self.theta0 = theta0
        self.mcse_target = mcse_target
        self.random_state = random_state

    def fit(self, X, y=None):
        spec = self.spec if self.spec is not None else ModelSpec.ising()
        return self._finish(run_exchange(X, spec, self.prior, self.proposal, self.n_samples, self.random_state,
                                         self.theta0, self.mcse_target))
