"""Experiment configuration read from an INI file.

Example::

    [model]
    kind = ergm
    terms = edges, gwesp
    tau_s = 0.25
    edges = network.csv

    [design]
    mode = mvt
    d = 200

    [precompute]
    M = 50

    [sampler]
    algorithm = iavm
    n = 30000

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError
from .models import ModelSpec, SimSettings, State, Term
from .samplers import ALGORITHMS

_SECTIONS = {
    "model": {"kind", "terms", "tau_s", "tau_d", "edge_convention", "lattice", "edges", "attributes", "n_nodes"},
    "design": {"mode", "d", "nu", "prior_width", "width_convention", "prior_lower", "prior_upper", "seed"},
    "precompute": {"m", "burnin", "spacing", "workers", "seed"},
    "sampler": {"algorithm", "n", "mcse_target", "proposal_scale", "proposal_sd", "inner_cycles", "seed",
                "theta0"},
    "output": {"directory", "formats"},
}


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


@dataclass
class ModelSection:
    kind: str
    terms: list
    tau_s: float = 0.25
    tau_d: float = 0.25
    edge_convention: str = "degree-sum"
    lattice: Optional[Path] = None
    edges: Optional[Path] = None
    attributes: Optional[Path] = None
    n_nodes: Optional[int] = None

    def spec(self) -> ModelSpec:
        if self.kind == "ising":
            return ModelSpec.ising()
        terms = []
        for name in self.terms:
            parts = name.split(".")
            if parts[0] == "gwesp":
                terms.append(Term("gwesp", decay=self.tau_s))
            elif parts[0] == "gwd":
                terms.append(Term("gwd", decay=self.tau_d))
            elif parts[0] == "nodefactor":
                if len(parts) != 3:
                    raise ConfigError(f"nodefactor term must read nodefactor.<attribute>.<level>: {name!r}")
                level = int(parts[2]) if parts[2].lstrip("-").isdigit() else parts[2]
                terms.append(Term("nodefactor", parts[1], level))
            else:
                terms.append(Term(parts[0]))
        try:
            return ModelSpec("ergm", tuple(terms), self.edge_convention)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def load_data(self) -> State:
        from . import io
        if self.kind == "ising":
            return io.read_lattice(self.lattice)
        return io.read_network(self.edges, self.attributes, self.n_nodes)


@dataclass
class DesignSection:
    mode: str = "mvt"
    d: int = 200
    nu: float = 5.0
    prior_width: float = 10.0
    width_convention: str = "half"
    prior_lower: Optional[list] = None
    prior_upper: Optional[list] = None
    seed: int = 0


@dataclass
class PrecomputeSection:
    M: int = 50
    burnin: int = 10
    spacing: int = 1
    workers: Optional[int] = None
    seed: int = 0

    def settings(self) -> SimSettings:
        return SimSettings(self.burnin, self.spacing, self.seed)


@dataclass
class SamplerSection:
    algorithm: str = "iavm"
    n: Optional[int] = 10_000
    mcse_target: Optional[float] = None
    proposal_scale: float = 1.0
    proposal_sd: Optional[float] = None
    inner_cycles: int = 1
    seed: int = 0
    theta0: Optional[list] = None


@dataclass
class OutputSection:
    directory: Path = Path("out")
    formats: list = field(default_factory=lambda: ["csv", "text"])


@dataclass
class ExperimentConfig:
    model: ModelSection
    design: DesignSection
    precompute: PrecomputeSection
    sampler: SamplerSection
    output: OutputSection
    path: Optional[Path] = None

    @property
    def spec(self) -> ModelSpec:
        return self.model.spec()

    def validate(self) -> "ExperimentConfig":
        m = self.model
        if m.kind not in ("ising", "ergm"):
            raise ConfigError(f"model.kind must be ising or ergm, got {m.kind!r}")
        needed = [("lattice", m.lattice)] if m.kind == "ising" else [("edges", m.edges)]
        if m.attributes is not None:
            needed.append(("attributes", m.attributes))
        for key, p in needed:
            if p is None:
                raise ConfigError(f"model.{key} is required for kind={m.kind}")
            if not Path(p).is_file():
                raise FileNotFoundError(f"model.{key}: no such file {p}")
        if m.kind == "ergm" and not m.terms:
            raise ConfigError("model.terms is empty")
        self.spec  # term parsing errors surface here
        d = self.design
        if d.mode not in ("uniform", "mvt"):
            raise ConfigError("design.mode must be uniform or mvt")
        if d.d < 2:
            raise ConfigError("design.d must be >= 2")
        if d.nu <= 2:
            raise ConfigError("design.nu must exceed 2")
        if d.prior_width <= 0:
            raise ConfigError("design.prior_width must be positive")
        if d.width_convention not in ("half", "total"):
            raise ConfigError("design.width_convention must be half or total")
        if (d.prior_lower is None) != (d.prior_upper is None):
            raise ConfigError("give both design.prior_lower and design.prior_upper, or neither")
        if self.precompute.M < 2:
            raise ConfigError("precompute.M must be positive and exceed the parameter count")
        if self.precompute.burnin < 0 or self.precompute.spacing < 1:
            raise ConfigError("precompute.burnin must be >= 0 and precompute.spacing >= 1")
        if self.precompute.workers is not None and self.precompute.workers < 1:
            raise ConfigError("precompute.workers must be >= 1")
        s = self.sampler
        if s.algorithm not in ALGORITHMS:
            raise ConfigError(f"sampler.algorithm must be one of {', '.join(ALGORITHMS)}")
        if s.n is None and s.mcse_target is None:
            raise ConfigError("sampler needs n or mcse_target")
        if s.n is not None and s.n < 1:
            raise ConfigError("sampler.n must be positive")
        if s.proposal_scale <= 0 or (s.proposal_sd is not None and s.proposal_sd <= 0):
            raise ConfigError("proposal scale and sd must be positive")
        if s.inner_cycles < 1:
            raise ConfigError("sampler.inner_cycles must be >= 1")
        return self


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        unknown = set(cp[sec]) - _SECTIONS[sec]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(unknown))}")
    if "model" not in cp:
        raise ConfigError("missing [model] section")

    def get(sec, key, conv=str, default=None):
        if sec not in cp or key not in cp[sec] or cp[sec][key].strip() == "":
            return default
        raw = cp[sec][key].strip()
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{sec}] {key} = {raw!r} is not valid") from None

    def rel(p):
        return None if p is None else (base / p).resolve()

    model = ModelSection(
        kind=get("model", "kind", default=""),
        terms=[t.strip() for t in get("model", "terms", default="").split(",") if t.strip()],
        tau_s=get("model", "tau_s", float, 0.25),
        tau_d=get("model", "tau_d", float, 0.25),
        edge_convention=get("model", "edge_convention", default="degree-sum"),
        lattice=rel(get("model", "lattice")),
        edges=rel(get("model", "edges")),
        attributes=rel(get("model", "attributes")),
        n_nodes=get("model", "n_nodes", int),
    )
    design = DesignSection(
        mode=get("design", "mode", default="mvt"),
        d=get("design", "d", int, 200),
        nu=get("design", "nu", float, 5.0),
        prior_width=get("design", "prior_width", float, 10.0),
        width_convention=get("design", "width_convention", default="half"),
        prior_lower=get("design", "prior_lower", _floats),
        prior_upper=get("design", "prior_upper", _floats),
        seed=get("design", "seed", int, 0),
    )
    pre = PrecomputeSection(
        M=get("precompute", "m", int, 50),
        burnin=get("precompute", "burnin", int, 10),
        spacing=get("precompute", "spacing", int, 1),
        workers=get("precompute", "workers", int),
        seed=get("precompute", "seed", int, 0),
    )
    sampler = SamplerSection(
        algorithm=get("sampler", "algorithm", default="iavm"),
        n=get("sampler", "n", int, None if get("sampler", "mcse_target") else 10_000),
        mcse_target=get("sampler", "mcse_target", float),
        proposal_scale=get("sampler", "proposal_scale", float, 1.0),
        proposal_sd=get("sampler", "proposal_sd", float),
        inner_cycles=get("sampler", "inner_cycles", int, 1),
        seed=get("sampler", "seed", int, 0),
        theta0=get("sampler", "theta0", _floats),
    )
    out = OutputSection(
        directory=rel(get("output", "directory", default="out")),
        formats=[f.strip() for f in get("output", "formats", default="csv, text").split(",") if f.strip()],
    )
    cfg = ExperimentConfig(model, design, pre, sampler, out, path.resolve())
    cfg.validate()
    if cfg.precompute.M <= cfg.spec.dim:
        raise ConfigError(f"precompute.M must exceed the parameter count {cfg.spec.dim}")
    return cfg

