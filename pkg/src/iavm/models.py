"""Ising and undirected ERGM models: states, statistics, simulators.

All simulators draw their randomness from a ``numpy.random.Generator`` and
hand pre-drawn uniforms to the compiled kernels, so a seeded generator gives
bit-identical output.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K
from .exceptions import CoalescenceError, EnumerationLimitError, MissingAttributeError

GRADES = tuple(range(7, 13))
SEXES = ("male", "female")


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


class LatticeState:
    """An m x n grid of +/-1 spins with free boundary."""

    def __init__(self, spins):
        spins = np.array(spins, dtype=np.int64)
        if spins.ndim != 2 or spins.size == 0:
            raise ValueError("spins must be a non-empty 2-D array")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("spins must be -1 or +1")
        self._spins = spins

    @property
    def spins(self) -> np.ndarray:
        return self._spins

    @property
    def shape(self) -> tuple[int, int]:
        return self._spins.shape

    @property
    def rows(self) -> int:
        return self._spins.shape[0]

    @property
    def cols(self) -> int:
        return self._spins.shape[1]

    def copy(self) -> "LatticeState":
        return LatticeState(self._spins.copy())

    def __eq__(self, other):
        return isinstance(other, LatticeState) and np.array_equal(self._spins, other._spins)

    def __repr__(self):
        return f"LatticeState({self.rows}x{self.cols})"

    @classmethod
    def constant(cls, rows: int, cols: int, value: int = 1) -> "LatticeState":
        return cls(np.full((rows, cols), value, dtype=np.int64))


class NetworkState:
    """Undirected simple graph on ``n_nodes`` nodes with optional attributes.

    Parameters
    ----------
    adjacency : array_like
        Symmetric 0/1 matrix with zero diagonal.
    attributes : dict, optional
        Mapping of attribute name ("grade", "sex") to a length-n sequence.
    """

    def __init__(self, adjacency, attributes: Optional[dict] = None):
        adj = np.array(adjacency, dtype=np.uint8)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ValueError("adjacency must be a non-empty square matrix")
        if np.any(adj > 1):
            raise ValueError("adjacency must be binary")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValueError("adjacency must have a zero diagonal")
        n = adj.shape[0]
        attrs = {}
        for name, values in (attributes or {}).items():
            values = np.asarray(values, dtype=object)
            if values.shape != (n,):
                raise ValueError(f"attribute {name!r} must have exactly {n} rows")
            attrs[name] = values
        self.adjacency = adj
        self.attributes = attrs

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def copy(self) -> "NetworkState":
        return NetworkState(self.adjacency.copy(), {k: v.copy() for k, v in self.attributes.items()})

    def __eq__(self, other):
        return isinstance(other, NetworkState) and np.array_equal(self.adjacency, other.adjacency)

    def __repr__(self):
        return f"NetworkState(n_nodes={self.n_nodes}, n_edges={self.n_edges})"

    @classmethod
    def from_edges(cls, n_nodes: int, edges, attributes=None) -> "NetworkState":
        adj = np.zeros((n_nodes, n_nodes), dtype=np.uint8)
        for a, b in edges:
            if a == b:
                raise ValueError("self-loops are not allowed")
            adj[a, b] = adj[b, a] = 1
        return cls(adj, attributes)

    @classmethod
    def empty(cls, n_nodes: int, attributes=None) -> "NetworkState":
        return cls(np.zeros((n_nodes, n_nodes), dtype=np.uint8), attributes)


State = Union[LatticeState, NetworkState]


# ---------------------------------------------------------------------------
# model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    """One sufficient-statistic descriptor.

    ``kind`` is one of ``"ising"``, ``"edges"``, ``"nodefactor"``, ``"gwd"``,
    ``"gwesp"``. ``attribute``/``level`` are used by nodefactor; ``decay``
    by gwd/gwesp.
    """

    kind: str
    attribute: Optional[str] = None
    level: Optional[Union[int, str]] = None
    decay: float = 0.0

    def label(self) -> str:
        if self.kind == "nodefactor":
            return f"nodefactor.{self.attribute}.{self.level}"
        if self.kind in ("gwd", "gwesp"):
            return f"{self.kind}.{self.decay:g}"
        return self.kind


_TERM_CODES = {"edges": K.EDGES, "nodefactor": K.NODEFACTOR, "gwd": K.GWD, "gwesp": K.GWESP}


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus its ordered statistic terms.

    ``edge_convention`` selects how the edges term is counted: ``"degree-sum"``
    (sum of node degrees, twice the edge count) or ``"edge-count"``.
    """

    kind: str
    terms: tuple = field(default_factory=tuple)
    edge_convention: str = "degree-sum"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.kind not in ("ising", "ergm"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.terms:
            raise ValueError("term list must be non-empty")
        if self.kind == "ising":
            if len(self.terms) != 1 or self.terms[0].kind != "ising":
                raise ValueError("Ising model has exactly one 'ising' term")
        else:
            for t in self.terms:
                if t.kind not in _TERM_CODES:
                    raise ValueError(f"term {t.kind!r} not valid for an ERGM")
                if t.kind in ("gwd", "gwesp") and t.decay < 0:
                    raise ValueError("decay parameters must be nonnegative")
                if t.kind == "nodefactor" and (t.attribute is None or t.level is None):
                    raise ValueError("nodefactor needs an attribute and a level")
        if self.edge_convention not in ("degree-sum", "edge-count"):
            raise ValueError(f"unknown edge convention {self.edge_convention!r}")

    @property
    def dim(self) -> int:
        return len(self.terms)

    @property
    def labels(self) -> list[str]:
        return [t.label() for t in self.terms]

    @classmethod
    def ising(cls) -> "ModelSpec":
        return cls("ising", (Term("ising"),))

    @classmethod
    def ergm(cls, terms: Sequence[Union[Term, str]], tau: float = 0.25,
             edge_convention: str = "degree-sum") -> "ModelSpec":
        """Build an ERGM spec; bare strings "edges", "gwd", "gwesp" get decay ``tau``."""
        built = []
        for t in terms:
            if isinstance(t, str):
                t = Term(t, decay=tau if t in ("gwd", "gwesp") else 0.0)
            built.append(t)
        return cls("ergm", tuple(built), edge_convention)

    @classmethod
    def faux_magnolia(cls, tau_d: float = 0.25, tau_s: float = 0.25) -> "ModelSpec":
        terms = [Term("edges")]
        terms += [Term("nodefactor", "grade", g) for g in GRADES]
        terms += [Term("nodefactor", "sex", "male"), Term("gwd", decay=tau_d), Term("gwesp", decay=tau_s)]
        return cls("ergm", tuple(terms))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "edge_convention": self.edge_convention,
            "terms": [{"kind": t.kind, "attribute": t.attribute, "level": t.level, "decay": t.decay}
                      for t in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        terms = tuple(Term(t["kind"], t.get("attribute"), t.get("level"), float(t.get("decay", 0.0)))
                      for t in d["terms"])
        return cls(d["kind"], terms, d.get("edge_convention", "degree-sum"))

    def digest(self, data: Optional[State] = None) -> str:
        """Content hash of the model specification and, if given, the data dimensions."""
        payload = self.to_dict()
        if data is not None:
            payload["dims"] = list(data.shape) if isinstance(data, LatticeState) else [data.n_nodes]
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    # kernel encoding -------------------------------------------------------

    def _encode(self, net: NetworkState):
        p = self.dim
        kinds = np.array([_TERM_CODES[t.kind] for t in self.terms], dtype=np.int64)
        params = np.array([t.decay for t in self.terms], dtype=np.float64)
        factors = np.zeros((p, net.n_nodes))
        for k, t in enumerate(self.terms):
            if t.kind == "nodefactor":
                if t.attribute not in net.attributes:
                    raise MissingAttributeError(t.attribute)
                vals = net.attributes[t.attribute]
                factors[k] = [_level_match(v, t.level) for v in vals]
        edge_scale = 2.0 if self.edge_convention == "degree-sum" else 1.0
        return kinds, params, factors, edge_scale


def _level_match(value, level) -> float:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return 0.0
    try:
        return float(int(value) == int(level))
    except (TypeError, ValueError):
        return float(str(value) == str(level))


@dataclass(frozen=True)
class SimSettings:
    """Burn-in and thinning (in full cycles) plus the base seed."""

    burnin_cycles: int = 0
    spacing_cycles: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.burnin_cycles < 0:
            raise ValueError("burnin_cycles must be >= 0")
        if self.spacing_cycles < 1:
            raise ValueError("spacing_cycles must be >= 1")


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def ising_suff_stat(lattice: LatticeState) -> np.ndarray:
    """Sum of products over horizontally and vertically adjacent spin pairs."""
    return np.array([float(K.ising_stat(lattice.spins))])


def ergm_suff_stats(net: NetworkState, spec: ModelSpec) -> np.ndarray:
    kinds, params, factors, edge_scale = spec._encode(net)
    return K.full_stats(net.adjacency, kinds, params, factors, edge_scale)


def suff_stats(state: State, spec: ModelSpec) -> np.ndarray:
    if spec.kind == "ising":
        return ising_suff_stat(state)
    return ergm_suff_stats(state, spec)


def ising_full_conditional(lattice: LatticeState, i: int, j: int, theta: float) -> float:
    """P(x_ij = +1 | neighbours) under the Ising model."""
    s = float(K._site_field(lattice.spins, i, j))
    return float(1.0 / (1.0 + np.exp(-2.0 * theta * s)))


def change_stat(net: NetworkState, spec: ModelSpec, i: int, j: int) -> np.ndarray:
    """stats(x with edge ij) - stats(x without edge ij)."""
    if i == j:
        raise ValueError("dyad endpoints must differ")
    kinds, params, factors, edge_scale = spec._encode(net)
    nbr, pos, deg, sp = K.build_cache(net.adjacency)
    out = np.zeros(spec.dim)
    K.change_stats(net.adjacency, nbr, deg, sp, i, j, kinds, params, factors, edge_scale, out)
    return out


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


class IsingSimulator:
    """Mutable Ising chain with an incrementally maintained statistic."""

    def __init__(self, lattice: LatticeState, theta: float):
        self.spins = lattice.spins.copy()
        self.theta = float(theta)
        self.stat = int(K.ising_stat(self.spins))

    def cycles(self, rng: np.random.Generator, n_cycles: int = 1) -> None:
        if n_cycles <= 0:
            return
        u = rng.random((n_cycles,) + self.spins.shape)
        self.stat = K.ising_run(self.spins, self.theta, u, self.stat, 0, np.empty(0))

    def stats(self) -> np.ndarray:
        return np.array([float(self.stat)])

    def state(self) -> LatticeState:
        return LatticeState(self.spins.copy())


class ERGMSimulator:
    """Mutable ERGM chain with cached degrees, neighbour lists and shared-partner counts."""

    def __init__(self, net: NetworkState, theta, spec: ModelSpec):
        self.spec = spec
        self.n = net.n_nodes
        self.attributes = net.attributes
        self.theta = np.asarray(theta, dtype=np.float64).reshape(spec.dim)
        self.kinds, self.params, self.factors, self.edge_scale = spec._encode(net)
        self.adj = net.adjacency.copy()
        self.nbr, self.pos, self.deg, self.sp = K.build_cache(self.adj)
        self.stats_ = K.full_stats(self.adj, self.kinds, self.params, self.factors, self.edge_scale)

    @property
    def n_dyads(self) -> int:
        return self.n * (self.n - 1) // 2

    def updates(self, rng: np.random.Generator, n_updates: int) -> None:
        if self.n < 2 or n_updates <= 0:
            return
        a = rng.integers(0, self.n, n_updates)
        b = rng.integers(0, self.n - 1, n_updates)
        b = b + (b >= a)
        u = rng.random(n_updates)
        K.ergm_gibbs(self.adj, self.nbr, self.pos, self.deg, self.sp, self.theta, self.kinds,
                     self.params, self.factors, self.edge_scale, a, b, u, self.stats_)

    def cycles(self, rng: np.random.Generator, n_cycles: int = 1) -> None:
        for _ in range(n_cycles):
            self.updates(rng, self.n_dyads)

    def stats(self) -> np.ndarray:
        return self.stats_.copy()

    def recompute(self) -> np.ndarray:
        return K.full_stats(self.adj, self.kinds, self.params, self.factors, self.edge_scale)

    def state(self) -> NetworkState:
        return NetworkState(self.adj.copy(), self.attributes)


def make_simulator(state: State, theta, spec: ModelSpec):
    if spec.kind == "ising":
        return IsingSimulator(state, float(np.asarray(theta).reshape(-1)[0]))
    return ERGMSimulator(state, theta, spec)


def gibbs_cycle_ising(lattice: LatticeState, theta: float, rng: np.random.Generator) -> LatticeState:
    """One raster-order Gibbs sweep; returns a new lattice."""
    sim = IsingSimulator(lattice, theta)
    sim.cycles(rng, 1)
    return sim.state()


def gibbs_cycle_ergm(net: NetworkState, theta, spec: ModelSpec, rng: np.random.Generator) -> NetworkState:
    """n(n-1)/2 random-scan dyad updates; returns a new network."""
    sim = ERGMSimulator(net, theta, spec)
    sim.cycles(rng, 1)
    return sim.state()


def simulate_suff_stats(spec: ModelSpec, theta, M: int, settings: SimSettings, init: State,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Record M statistic vectors from a Gibbs chain started at ``init``.

    Returns an ``(M, p)`` array. When ``rng`` is omitted a generator seeded
    with ``settings.rng_seed`` is used.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if rng is None:
        rng = np.random.default_rng(settings.rng_seed)
    sim = make_simulator(init, theta, spec)
    out = np.empty((M, spec.dim))
    if spec.kind == "ising":
        # fused loop: burn-in, then spacing-cycle blocks
        sim.cycles(rng, settings.burnin_cycles)
        rec = np.empty(1)
        for k in range(M):
            u = rng.random((settings.spacing_cycles,) + sim.spins.shape)
            sim.stat = K.ising_run(sim.spins, sim.theta, u, sim.stat, settings.spacing_cycles, rec)
            out[k, 0] = rec[0]
        return out
    sim.cycles(rng, settings.burnin_cycles)
    for k in range(M):
        sim.cycles(rng, settings.spacing_cycles)
        out[k] = sim.stats_
    return out


def cftp_ising(theta: float, rows: int, cols: int, rng: np.random.Generator,
               max_sweeps: int = 2 ** 20, chunk: int = 64) -> LatticeState:
    """Exact Ising draw by monotone coupling from the past.

    Epochs double (1, 2, 4, ... sweeps back). The uniforms for the sweeps in
    each doubling block come from a dedicated child seed so they are
    regenerated identically whenever the block is revisited.
    """
    if theta < 0:
        raise ValueError("monotone CFTP needs theta >= 0")
    entropy = int(rng.integers(0, 2 ** 63))
    shape = (rows, cols)

    def block_uniforms(b, n_sweeps):
        # sweeps for block b, in forward time order, yielded in chunks
        g = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(b,)))
        done = 0
        while done < n_sweeps:
            k = min(chunk, n_sweeps - done)
            yield g.random((k,) + shape)
            done += k

    T = 1
    n_blocks = 1
    while True:
        upper = np.ones(shape, dtype=np.int64)
        lower = -np.ones(shape, dtype=np.int64)
        # block b covers sweeps [-2^b, -2^(b-1)); block 0 is the final sweep
        for b in range(n_blocks - 1, -1, -1):
            n_sweeps = 1 if b == 0 else 2 ** (b - 1)
            for u in block_uniforms(b, n_sweeps):
                K.cftp_sweeps(upper, lower, theta, u)
        if K.all_equal(upper, lower):
            return LatticeState(upper)
        if T >= max_sweeps:
            raise CoalescenceError(f"no coalescence after {T} sweeps at theta={theta}")
        T *= 2
        n_blocks += 1


# ---------------------------------------------------------------------------
# exhaustive enumeration
# ---------------------------------------------------------------------------

ENUMERATION_LIMIT = 2 ** 20


def enumerate_stats(spec: ModelSpec, template: State) -> tuple[np.ndarray, np.ndarray]:
    """Distinct statistic vectors over the whole sample space and their multiplicities.

    ``template`` only supplies dimensions (and node attributes for ERGMs).
    """
    if spec.kind == "ising":
        m, n = template.shape
        n_var = m * n
        if 2 ** n_var > ENUMERATION_LIMIT:
            raise EnumerationLimitError(f"2^{n_var} lattice states exceed the enumeration budget")
        codes = np.arange(2 ** n_var, dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(n_var)) & 1).astype(np.int64)
        spins = (2 * bits - 1).reshape(-1, m, n)
        s = (spins[:, :, :-1] * spins[:, :, 1:]).sum(axis=(1, 2)) + (spins[:, :-1, :] * spins[:, 1:, :]).sum(axis=(1, 2))
        vals, counts = np.unique(s, return_counts=True)
        return vals.astype(float)[:, None], counts.astype(float)
    n = template.n_nodes
    iu = np.triu_indices(n, 1)
    n_var = len(iu[0])
    if 2 ** n_var > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"2^{n_var} graphs exceed the enumeration budget")
    kinds, params, factors, edge_scale = spec._encode(template)
    rows = np.empty((2 ** n_var, spec.dim))
    adj = np.zeros((n, n), dtype=np.uint8)
    for code in range(2 ** n_var):
        bits = (code >> np.arange(n_var)) & 1
        adj[iu] = bits
        adj.T[iu] = bits
        rows[code] = K.full_stats(adj, kinds, params, factors, edge_scale)
    rows = np.round(rows, 12)
    vals, counts = np.unique(rows, axis=0, return_counts=True)
    return vals, counts.astype(float)


def exact_log_z(spec: ModelSpec, theta, template: State) -> Union[float, np.ndarray]:
    """log sum_x exp(theta . S_x) by enumeration.

    ``theta`` may be a single parameter vector or a stack of them (last axis p);
    a stack returns one value per row.
    """
    vals, counts = enumerate_stats(spec, template)
    return log_z_from_table(vals, counts, theta)


def log_z_from_table(vals: np.ndarray, counts: np.ndarray, theta):
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim <= 1
    th = theta.reshape(-1, vals.shape[1]) if not single else theta.reshape(1, -1)
    eta = th @ vals.T + np.log(counts)[None, :]
    out = logsumexp(eta, axis=1)
    return float(out[0]) if single else out


def boltzmann_probabilities(theta: float, rows: int, cols: int) -> np.ndarray:
    """Exact probability of each lattice state, indexed by the bit code
    (bit k set means spin k in raster order is +1)."""
    n_var = rows * cols
    if 2 ** n_var > ENUMERATION_LIMIT:
        raise EnumerationLimitError("lattice too large")
    codes = np.arange(2 ** n_var)
    spins = (2 * ((codes[:, None] >> np.arange(n_var)) & 1) - 1).reshape(-1, rows, cols)
    s = (spins[:, :, :-1] * spins[:, :, 1:]).sum(axis=(1, 2)) + (spins[:, :-1, :] * spins[:, 1:, :]).sum(axis=(1, 2))
    logw = theta * s
    return np.exp(logw - logsumexp(logw))


def lattice_code(lattice: LatticeState) -> int:
    bits = (lattice.spins.reshape(-1) > 0).astype(np.int64)
    return int((bits << np.arange(bits.size)).sum())
