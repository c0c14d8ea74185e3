"""Simulation of summary statistics at design points and the resulting store.

For every design point the true model is simulated M times; the sample mean
feeds the GP binding function and the sample covariance is used directly
for proposals near that point.
"""

from __future__ import annotations

import csv
import io as _io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import io
from .exceptions import ConfigError, DegenerateCovarianceError
from .gp import GPBinding
from .models import ModelSpec, SimSettings, State, simulate_suff_stats
from .pseudolikelihood import DesignSet


def point_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Seed for design point ``index``; depends only on (base seed, index)."""
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))


def _factor(cov: np.ndarray) -> np.ndarray:
    p = cov.shape[0]
    scale = max(np.trace(cov) / p, np.finfo(float).tiny)
    jitter = 1e-8 * scale
    while jitter <= 1e-6 * scale * (1 + 1e-12):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(p))
        except np.linalg.LinAlgError:
            jitter *= 10
    raise DegenerateCovarianceError("sample covariance not positive definite even with jitter")


@dataclass
class PrecomputeStore:
    design: DesignSet
    means: np.ndarray
    covariances: np.ndarray
    M: int
    sim_settings: SimSettings
    model_digest: str
    chol: Optional[np.ndarray] = None
    gp: Optional[GPBinding] = None
    gp_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        d, p = self.means.shape
        if self.design.points.shape[0] != d or self.covariances.shape != (d, p, p):
            raise ValueError("design, means and covariances do not align")
        if self.chol is None:
            self.chol = np.stack([_factor(c) for c in self.covariances])

    @property
    def d(self) -> int:
        return self.means.shape[0]

    @property
    def p(self) -> int:
        return self.means.shape[1]

    def nearest(self, theta) -> tuple[int, np.ndarray]:
        """Index of the closest design point (ties: smallest index) and its factor."""
        diff = self.design.points - np.asarray(theta, dtype=float).reshape(1, -1)
        idx = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
        return idx, self.chol[idx]

    def fit_gp(self, **params) -> GPBinding:
        self.gp = GPBinding(**params).fit(self.design.points, self.means)
        self.gp_params = self.gp.get_params()
        return self.gp

    # -- persistence -----------------------------------------------------

    def to_arrays(self) -> dict:
        arrays = {"design": self.design.points, "means": self.means,
                  "covariances": self.covariances, "chol": self.chol}
        if self.gp is not None:
            arrays.update(self.gp.to_arrays())
        return arrays

    def metadata(self) -> dict:
        return {
            "format": "IAVM1",
            "M": int(self.M),
            "d": self.d,
            "p": self.p,
            "model_digest": self.model_digest,
            "design_source": self.design.source,
            "sim_settings": {"burnin_cycles": self.sim_settings.burnin_cycles,
                             "spacing_cycles": self.sim_settings.spacing_cycles,
                             "rng_seed": int(self.sim_settings.rng_seed)},
            "point_seeds": [{"base": int(self.sim_settings.rng_seed), "index": i} for i in range(self.d)],
            "gp": None if self.gp is None else {"version": 1, "params": _jsonable(self.gp_params)},
        }

    def save(self, path, extra: Optional[dict] = None) -> str:
        """Write the container and its ``.json`` sidecar; returns the container sha256.

        ``extra`` entries are added to the sidecar (provenance hashes and the like).
        """
        digest = io.write_container(path, self.to_arrays())
        meta = dict(extra or {})
        meta.update(self.metadata())
        meta["container_sha256"] = digest
        io.write_json(meta, str(path) + ".json")
        return digest

    @classmethod
    def load(cls, path) -> "PrecomputeStore":
        arrays = io.read_container(path)
        meta = io.read_json(str(path) + ".json")
        s = meta["sim_settings"]
        store = cls(DesignSet(arrays["design"], meta.get("design_source", {})), arrays["means"],
                    arrays["covariances"], meta["M"], SimSettings(s["burnin_cycles"], s["spacing_cycles"],
                                                                  s["rng_seed"]),
                    meta["model_digest"], chol=arrays["chol"])
        if meta.get("gp"):
            params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["gp"]["params"].items()}
            store.gp = GPBinding.from_arrays(arrays, **params)
            store.gp_params = params
        return store

    def means_csv(self, names=None) -> str:
        names = names or [f"stat_{k + 1}" for k in range(self.p)]
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"theta_{k + 1}" for k in range(self.design.p)] + list(names))
        for pt, mu in zip(self.design.points, self.means):
            w.writerow([repr(float(v)) for v in pt] + [repr(float(v)) for v in mu])
        return buf.getvalue()


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        if isinstance(v, (int, float, str, bool, list)) or v is None:
            out[k] = v
    return out


def sample_moments(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample mean and covariance of an (M, p) array."""
    draws = np.asarray(draws, dtype=float)
    mean = draws.mean(axis=0)
    centred = draws - mean
    cov = centred.T @ centred / (draws.shape[0] - 1)
    return mean, 0.5 * (cov + cov.T)


def _simulate_point(args):
    spec, theta, M, settings, init, i = args
    rng = np.random.default_rng(point_seed(settings.rng_seed, i))
    draws = simulate_suff_stats(spec, theta, M, settings, init, rng)
    return sample_moments(draws)


def default_workers() -> int:
    """Worker count from the IAVM_WORKERS environment variable (default 1)."""
    raw = os.environ.get("IAVM_WORKERS", "1")
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"IAVM_WORKERS={raw!r} is not an integer") from None
    if w < 1:
        raise ConfigError("IAVM_WORKERS must be >= 1")
    return w


def harvest(spec: ModelSpec, data: State, design: DesignSet, M: int, settings: SimSettings,
            workers: Optional[int] = None) -> PrecomputeStore:
    """Simulate M statistic vectors at every design point, chains started at ``data``.

    Results do not depend on ``workers``: each point has its own derived seed.
    """
    if M <= spec.dim:
        raise ValueError(f"M must exceed the parameter dimension {spec.dim}")
    workers = workers or default_workers()
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if design.p != spec.dim:
        raise ValueError("design dimension does not match the model")
    jobs = [(spec, design.points[i] if spec.kind == "ergm" else float(design.points[i, 0]), M, settings, data, i)
            for i in range(design.d)]
    if workers == 1:
        results = [_simulate_point(j) for j in jobs]
    else:
        # compiled kernels release the GIL
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_point, jobs))
    means = np.stack([r[0] for r in results])
    covs = np.stack([r[1] for r in results])
    for i, c in enumerate(covs):
        if np.trace(c) <= 0:
            raise DegenerateCovarianceError(f"statistics constant at design point {i}: {design.points[i]}")
    return PrecomputeStore(design, means, covs, M, settings, spec.digest(data))


def nearest_design(store: PrecomputeStore, theta) -> tuple[int, np.ndarray]:
    """Closest design point and its sample covariance."""
    idx, _ = store.nearest(theta)
    return idx, store.covariances[idx]


@dataclass
class SurrogateCheck:
    true_draws: np.ndarray
    normal_draws: np.ndarray
    ks_distance: np.ndarray
    names: list

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = []
        for n in self.names:
            header += [f"{n}.true", f"{n}.normal"]
        w.writerow(header)
        for a, b in zip(self.true_draws, self.normal_draws):
            row = []
            for k in range(len(self.names)):
                row += [repr(float(a[k])), repr(float(b[k]))]
            w.writerow(row)
        return buf.getvalue()


def surrogate_check(spec: ModelSpec, theta, M: int, settings: SimSettings, data: State,
                    rng=None) -> SurrogateCheck:
    """M true-model draws against M draws from their fitted normal."""
    if M < 2:
        raise ValueError("M must be >= 2")
    rng = np.random.default_rng(settings.rng_seed) if rng is None else rng
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    true = simulate_suff_stats(spec, th if spec.kind == "ergm" else float(th[0]), M, settings, data, rng)
    mean, cov = sample_moments(true)
    if np.trace(cov) > 0:
        L = _factor(cov)
        normal = mean + rng.standard_normal((M, spec.dim)) @ L.T
    else:
        normal = np.tile(mean, (M, 1))
    ks = np.array([stats.ks_2samp(true[:, k], normal[:, k]).statistic for k in range(spec.dim)])
    return SurrogateCheck(true, normal, ks, spec.labels)
