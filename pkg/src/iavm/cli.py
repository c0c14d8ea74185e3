"""Command-line driver: mple -> design -> precompute -> fit-gp -> sample -> diagnose.

Every stage writes its artifact into the output directory and records the
sha256 of the inputs it consumed. Exit codes: 0 success, 1 runtime failure,
2 usage error, 3 bad configuration, 4 missing file, 5 digest mismatch.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .config import ExperimentConfig, load_config
from .diagnostics import summarize
from .exceptions import ConfigError, DigestMismatchError, IAVMError
from .models import ERGMSimulator, ModelSpec, NetworkState, SimSettings, cftp_ising
from .precompute import PrecomputeStore, default_workers, harvest, surrogate_check
from .pseudolikelihood import DesignSet, MPLEResult, PriorBox, mple, prior_box, sample_design_points, \
    uniform_design
from .samplers import ALGORITHMS, Chain, ProposalSpec, run_dmh, run_exchange, run_iavm

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_DIGEST = 0, 1, 2, 3, 4, 5

EXAMPLES = {
    "ising": ["ising.ini", "ising_100x100.txt"],
    "ergm50": ["ergm50.ini", "ergm50_edges.csv"],
}


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------


class Context:
    def __init__(self, cfg: ExperimentConfig, out: Optional[str]):
        self.cfg = cfg
        self.out = Path(out) if out else Path(cfg.output.directory)
        self.out.mkdir(parents=True, exist_ok=True)
        self._data = None

    @property
    def spec(self) -> ModelSpec:
        return self.cfg.spec

    @property
    def data(self):
        if self._data is None:
            self._data = self.cfg.model.load_data()
        return self._data

    def data_files(self) -> list:
        m = self.cfg.model
        return [p for p in (m.lattice, m.edges, m.attributes) if p is not None]

    def data_sha(self) -> str:
        return io.sha256_of_files(self.data_files())

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, hint: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found; run '{hint}' first")
        return p


def _mple_result(ctx: Context) -> MPLEResult:
    p = ctx.path("mple.json")
    if p.is_file():
        doc = io.read_json(p)
        if doc.get("data_sha256") != ctx.data_sha() or doc.get("model_digest") != ctx.spec.digest(ctx.data):
            raise DigestMismatchError(f"{p} was produced from different data or model; rerun 'mple'")
        return MPLEResult.from_dict(doc)
    return mple(ctx.data, ctx.spec)


def _prior(ctx: Context, result: Optional[MPLEResult]) -> PriorBox:
    d = ctx.cfg.design
    if d.prior_lower is not None:
        if len(d.prior_lower) != ctx.spec.dim:
            raise ConfigError("design.prior_lower/upper length does not match the model")
        return PriorBox(d.prior_lower, d.prior_upper)
    if result is None:
        result = _mple_result(ctx)
    return prior_box(result, d.prior_width, d.width_convention == "half")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_mple(ctx: Context, args) -> Path:
    res = mple(ctx.data, ctx.spec)
    doc = res.to_dict()
    doc.update({"parameters": ctx.spec.labels, "model_digest": ctx.spec.digest(ctx.data),
                "data_sha256": ctx.data_sha()})
    out = ctx.path("mple.json")
    io.write_json(doc, out)
    print(f"MPLE {np.array2string(res.theta_hat, precision=5)} -> {out}")
    return out


def stage_design(ctx: Context, args) -> Path:
    d = ctx.cfg.design
    seed = args.seed if args.seed is not None else d.seed
    mple_path = ctx.path("mple.json")
    res = _mple_result(ctx) if (d.mode == "mvt" or d.prior_lower is None) else None
    prior = _prior(ctx, res)
    rng = np.random.default_rng(seed)
    if d.mode == "uniform":
        design = uniform_design(prior, d.d, rng)
    else:
        design = sample_design_points(res, d.d, d.nu, rng, prior)
    doc = {"points": design.points.tolist(), "source": design.source, "prior": prior.to_dict(), "seed": seed,
           "model_digest": ctx.spec.digest(ctx.data),
           "inputs": {"mple.json": io.file_sha256(mple_path) if mple_path.is_file() else None}}
    out = ctx.path("design.json")
    io.write_json(doc, out)
    print(f"{design.d} design points ({d.mode}) -> {out}")
    return out


def _load_design(ctx: Context, path: Optional[str]) -> tuple[DesignSet, Path]:
    p = Path(path) if path else ctx.require("design.json", "iavm design")
    doc = io.read_json(p)
    if doc.get("model_digest") != ctx.spec.digest(ctx.data):
        raise DigestMismatchError(f"{p} was built for a different model")
    return DesignSet(np.array(doc["points"], dtype=float), doc["source"]), p


def stage_precompute(ctx: Context, args) -> Path:
    pre = ctx.cfg.precompute
    design, dpath = _load_design(ctx, getattr(args, "design", None))
    seed = args.seed if args.seed is not None else pre.seed
    workers = args.workers or pre.workers or default_workers()
    store = harvest(ctx.spec, ctx.data, design, pre.M, SimSettings(pre.burnin, pre.spacing, seed), workers)
    out = ctx.path("store.iavm")
    store.save(out, {"data_sha256": ctx.data_sha(), "inputs": {"design.json": io.file_sha256(dpath)}})
    if "csv" in ctx.cfg.output.formats:
        ctx.path("means.csv").write_text(store.means_csv(ctx.spec.labels))
    print(f"harvested d={store.d}, M={store.M} with {workers} worker(s) -> {out}")
    return out


def _load_store(ctx: Context, path: Optional[str]) -> tuple[PrecomputeStore, Path]:
    p = Path(path) if path else ctx.require("store.iavm", "iavm precompute")
    sidecar = Path(str(p) + ".json")
    if not sidecar.is_file():
        raise FileNotFoundError(f"{sidecar} not found")
    meta = io.read_json(sidecar)
    if meta.get("container_sha256") != io.file_sha256(p):
        raise DigestMismatchError(f"{p} does not match the hash recorded in its sidecar")
    if meta.get("model_digest") != ctx.spec.digest(ctx.data):
        raise DigestMismatchError(f"{p} was built for a different model or data size")
    if meta.get("data_sha256") not in (None, ctx.data_sha()):
        raise DigestMismatchError(f"{p} was built from different data")
    return PrecomputeStore.load(p), p


def stage_fit_gp(ctx: Context, args) -> Path:
    store, p = _load_store(ctx, getattr(args, "store", None))
    meta = io.read_json(str(p) + ".json")
    store.fit_gp(random_state=args.seed if args.seed is not None else 0)
    store.save(p, {k: meta[k] for k in ("data_sha256", "inputs") if k in meta})
    print(f"GP fitted on {store.d} points x {store.p} outputs -> {p}")
    return p


def _proposal(ctx: Context, res: Optional[MPLEResult]) -> ProposalSpec:
    s = ctx.cfg.sampler
    if s.proposal_sd is not None:
        return ProposalSpec(np.eye(ctx.spec.dim) * s.proposal_sd ** 2, s.proposal_scale)
    res = res or _mple_result(ctx)
    return ProposalSpec(res.neg_hessian_inv, s.proposal_scale)


def stage_sample(ctx: Context, args) -> Path:
    s = ctx.cfg.sampler
    alg = args.algorithm or s.algorithm
    seed = args.seed if args.seed is not None else s.seed
    need_mple = s.proposal_sd is None or ctx.cfg.design.prior_lower is None
    res = _mple_result(ctx) if need_mple else None
    prior, prop = _prior(ctx, res), _proposal(ctx, res)
    inputs = {"data": ctx.data_sha()}
    common = dict(N=s.n, rng=seed, theta0=s.theta0, mcse_target=s.mcse_target)
    if alg == "dmh":
        chain = run_dmh(ctx.data, ctx.spec, prior, prop, inner_cycles=s.inner_cycles, **common)
    elif alg == "exchange":
        if ctx.spec.kind != "ising":
            raise ConfigError("the exchange sampler supports Ising models only")
        chain = run_exchange(ctx.data, ctx.spec, prior, prop, **common)
    else:
        store, p = _load_store(ctx, getattr(args, "store", None))
        if store.gp is None:
            raise IAVMError(f"{p} has no fitted GP; run 'iavm fit-gp' first")
        inputs["store.iavm"] = io.file_sha256(p)
        chain = run_iavm(ctx.data, ctx.spec, prior, prop, store, **common)
    stem = f"chain_{alg}"
    ctx.path(stem + ".csv").write_text(chain.to_csv())
    manifest = chain.manifest()
    manifest["parameters"] = ctx.spec.labels
    manifest["inputs"] = inputs
    io.write_json(manifest, ctx.path(stem + ".json"))
    io.write_json(chain.timing(), ctx.path(stem + ".timing.json"))
    print(f"{alg}: {chain.n} samples, acceptance {chain.acceptance_rate:.3f}, "
          f"{chain.wall_seconds:.2f} s -> {ctx.path(stem + '.csv')}")
    return ctx.path(stem + ".csv")


def diagnose_chain(chain_path: Path, out_dir: Optional[Path] = None, timing_path: Optional[Path] = None,
                   formats=("csv", "text")) -> str:
    chain_path = Path(chain_path)
    if not chain_path.is_file():
        raise FileNotFoundError(f"{chain_path} not found")
    chain = Chain.from_csv(chain_path.read_text())
    manifest = chain_path.with_suffix(".json")
    names = io.read_json(manifest).get("parameters") if manifest.is_file() else None
    timing = Path(timing_path) if timing_path else chain_path.with_suffix(".timing.json")
    wall = io.read_json(timing)["wall_seconds"] if timing.is_file() else 0.0
    table = summarize(chain.samples, wall, names)
    out_dir = Path(out_dir) if out_dir else chain_path.parent
    stem = chain_path.stem.replace("chain", "summary", 1) if chain_path.stem.startswith("chain") \
        else chain_path.stem + "_summary"
    if "csv" in formats:
        (out_dir / f"{stem}.csv").write_text(table.to_csv())
    text = table.to_text()
    if "text" in formats:
        (out_dir / f"{stem}.txt").write_text(text)
    return text


def stage_diagnose(args) -> int:
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    print(diagnose_chain(Path(args.chain), out, args.timing), end="")
    return EXIT_OK


def stage_check_surrogate(ctx: Context, args) -> Path:
    if args.theta == "mple":
        theta = _mple_result(ctx).theta_hat
    else:
        try:
            theta = np.array([float(v) for v in args.theta.replace(",", " ").split()])
        except ValueError:
            raise ConfigError(f"--theta must be 'mple' or numbers, got {args.theta!r}") from None
        if theta.size != ctx.spec.dim:
            raise ConfigError(f"--theta needs {ctx.spec.dim} values")
    pre = ctx.cfg.precompute
    seed = args.seed if args.seed is not None else pre.seed
    res = surrogate_check(ctx.spec, theta, args.m, SimSettings(pre.burnin, pre.spacing, seed), ctx.data)
    out = ctx.path("surrogate.csv")
    out.write_text(res.to_csv())
    io.write_json({"theta": theta.tolist(), "M": args.m, "seed": seed, "parameters": ctx.spec.labels,
                   "ks_distance": res.ks_distance.tolist()}, ctx.path("surrogate.json"))
    for name, ks in zip(ctx.spec.labels, res.ks_distance):
        print(f"{name:>24}  KS distance {ks:.4f}")
    return out


def stage_run(ctx: Context, args) -> int:
    stage_mple(ctx, args)
    stage_design(ctx, args)
    alg = args.algorithm or ctx.cfg.sampler.algorithm
    if alg == "iavm":
        stage_precompute(ctx, args)
        stage_fit_gp(ctx, args)
    chain = stage_sample(ctx, args)
    print(diagnose_chain(chain, formats=ctx.cfg.output.formats), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# data generation and bundled examples
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "ising":
        theta = float(args.theta[0])
        io.write_lattice(cftp_ising(theta, args.rows, args.cols, rng), out)
        print(f"perfect {args.rows}x{args.cols} Ising draw at theta={theta} -> {out}")
        return EXIT_OK
    spec = ModelSpec.ergm([t.strip() for t in args.terms.split(",")], tau=args.tau)
    if len(args.theta) != spec.dim:
        raise ConfigError(f"--theta needs {spec.dim} values for terms {args.terms}")
    sim = ERGMSimulator(NetworkState.empty(args.nodes), np.array(args.theta, dtype=float), spec)
    sim.cycles(rng, args.burnin)
    io.write_network(sim.state(), out)
    print(f"{args.nodes}-node network with {sim.state().n_edges} edges -> {out}")
    return EXIT_OK


def cmd_init(args) -> int:
    if args.name not in EXAMPLES:
        raise ConfigError(f"unknown example {args.name!r}; choose from {', '.join(EXAMPLES)}")
    dest = Path(args.directory)
    dest.mkdir(parents=True, exist_ok=True)
    pkg = resources.files("iavm") / "data"
    for fname in EXAMPLES[args.name]:
        with resources.as_file(pkg / fname) as src:
            shutil.copyfile(src, dest / fname)
    print(f"example '{args.name}' written to {dest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iavm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def staged(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", help="artifact directory (default: [output] directory)")
        p.add_argument("--seed", type=int, help="override the stage's seed")
        return p

    staged("mple", "maximum pseudolikelihood estimate")
    staged("design", "generate design points")
    p = staged("precompute", "simulate statistics at the design points")
    p.add_argument("--design", help="design.json (default: in --out)")
    p.add_argument("--workers", type=int, help="parallel workers (default: IAVM_WORKERS or 1)")
    p = staged("fit-gp", "fit the GP binding function into the store")
    p.add_argument("--store", help="store file (default: store.iavm in --out)")
    p = staged("sample", "run a sampler")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--store", help="store file for iavm")
    p = staged("check-surrogate", "true vs normal-approximation statistic draws")
    p.add_argument("--theta", default="mple", help="'mple' or comma-separated values")
    p.add_argument("--m", type=int, default=100, help="draws per column (default 100)")
    p = staged("run", "all stages in order")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("diagnose", help="summarise a chain CSV")
    p.add_argument("chain", help="chain CSV")
    p.add_argument("--timing", help="timing JSON (default: alongside the chain)")
    p.add_argument("--out", help="directory for summary files (default: alongside the chain)")

    p = sub.add_parser("simulate", help="generate a synthetic data set")
    p.add_argument("kind", choices=("ising", "ergm"))
    p.add_argument("--theta", type=float, nargs="+", required=True)
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--cols", type=int, default=100)
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--terms", default="edges,gwesp")
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--burnin", type=int, default=1000, help="Gibbs cycles for networks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("init", help="copy a bundled example config and data set")
    p.add_argument("name", choices=sorted(EXAMPLES))
    p.add_argument("directory")
    return ap


_STAGES = {"mple": stage_mple, "design": stage_design, "precompute": stage_precompute, "fit-gp": stage_fit_gp,
           "sample": stage_sample, "check-surrogate": stage_check_surrogate, "run": stage_run}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "diagnose":
            return stage_diagnose(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "init":
            return cmd_init(args)
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        ctx = Context(load_config(args.config), args.out)
        _STAGES[args.command](ctx, args)
        return EXIT_OK
    except DigestMismatchError as exc:
        print(f"iavm: digest mismatch: {exc}", file=sys.stderr)
        return EXIT_DIGEST
    except ConfigError as exc:
        print(f"iavm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"iavm: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (IAVMError, ValueError) as exc:
        print(f"iavm: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
