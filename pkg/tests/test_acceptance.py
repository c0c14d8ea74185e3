"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the pytest terminal summary)
before asserting, so a failing criterion still reports its measured numbers.
"""

import math
import time
from importlib import resources

import numpy as np
from scipy import stats

from iavm import io
from iavm.cli import main as cli_main
from iavm.diagnostics import ess, hpd, mcse
from iavm.gp import GPBinding, matern32_matrix
from iavm.models import (ERGMSimulator, IsingSimulator, LatticeState, ModelSpec, NetworkState, SimSettings,
                         boltzmann_probabilities, cftp_ising, ergm_suff_stats, exact_log_z, ising_suff_stat,
                         lattice_code)
from iavm.precompute import harvest
from iavm.pseudolikelihood import PriorBox, mple, prior_box, sample_design_points, uniform_design
from iavm.samplers import ProposalSpec, run_dmh, run_exchange, run_iavm

from oracles import ergm_stats_sets, ising_stat_loops, random_graph

ISING = ModelSpec.ising()
UNIT = PriorBox([0.0], [1.0])
DATA = resources.files("iavm") / "data"


def record(log, number, checks):
    """checks: list of (ok, description). Logs one line and returns overall status."""
    ok = all(c for c, _ in checks)
    detail = "; ".join(f"{'' if c else '[x] '}{d}" for c, d in checks)
    log.append((number, ok, detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    return ok, detail


def ar1(rng, n, rho):
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho ** 2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    return x


# ---------------------------------------------------------------------------
# 1. exact-oracle agreement on 3x3 Ising
# ---------------------------------------------------------------------------


def test_criterion_1_exact_oracle_3x3(acceptance_log):
    t_start = time.perf_counter()
    data = cftp_ising(0.3, 3, 3, np.random.default_rng(20240611))
    s_x = ising_suff_stat(data)[0]
    grid = np.linspace(0.0, 1.0, 2001)
    log_post = grid * s_x - exact_log_z(ISING, grid[:, None], data)
    w = np.exp(log_post - log_post.max())
    z = np.trapezoid(w, grid)
    mean = np.trapezoid(w * grid, grid) / z
    sd = math.sqrt(np.trapezoid(w * grid ** 2, grid) / z - mean ** 2)
    proposal = ProposalSpec.sd(0.3)

    chains = {
        # a 3x3 lattice needs a longer inner run than one sweep for DMH to be close to exact
        "DMH": run_dmh(data, ISING, UNIT, proposal, 100_000, rng=11, inner_cycles=20),
        "exchange": run_exchange(data, ISING, UNIT, proposal, 10_000, rng=12),
    }
    store = harvest(ISING, data, uniform_design(UNIT, 20), 200, SimSettings(100, 1, 13))
    store.fit_gp()
    chains["IAVM"] = run_iavm(data, ISING, UNIT, proposal, store, N=100_000, rng=14)
    elapsed = time.perf_counter() - t_start

    checks = []
    for name, ch in chains.items():
        x = ch.samples[:, 0]
        err = mcse(x)
        z_score = (x.mean() - mean) / err
        checks.append((abs(z_score) < 3,
                       f"{name} mean {x.mean():.4f} vs {mean:.4f} ({z_score:+.2f} MCSE), sd {x.std():.4f} vs {sd:.4f}"))
    checks.append((elapsed < 300, f"runtime {elapsed:.0f}s"))
    ok, detail = record(acceptance_log, 1, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 2. 100x100 Ising benchmark
# ---------------------------------------------------------------------------


def test_criterion_2_ising_100x100(acceptance_log):
    data = io.read_lattice(DATA / "ising_100x100.txt")
    proposal = ProposalSpec.sd(0.01)
    checks = []
    t0 = time.perf_counter()
    dmh = run_dmh(data, ISING, UNIT, proposal, 10_000, rng=1)
    t_dmh = time.perf_counter() - t0
    t0 = time.perf_counter()
    store = harvest(ISING, data, uniform_design(UNIT, 20), 50, SimSettings(100, 1, 1))
    store.fit_gp()
    iavm = run_iavm(data, ISING, UNIT, proposal, store, N=10_000, rng=1)
    t_iavm = time.perf_counter() - t0
    summaries = {}
    for name, ch, t in (("DMH", dmh, t_dmh), ("IAVM", iavm, t_iavm)):
        x = ch.samples[:, 0]
        lo, hi = hpd(x)
        summaries[name] = (x.mean(), lo, hi)
        checks.append((0.29 <= x.mean() <= 0.31 and abs(lo - 0.29) <= 0.01 and abs(hi - 0.31) <= 0.01,
                       f"{name} mean {x.mean():.4f} HPD ({lo:.4f}, {hi:.4f})"))
        checks.append((t < 900, f"{name} {t:.1f}s"))
    d = np.abs(np.subtract(summaries["DMH"], summaries["IAVM"]))
    checks.append((np.all(d < 0.01), f"DMH-IAVM |diff| mean {d[0]:.4f}, HPD {d[1]:.4f}/{d[2]:.4f}"))
    ok, detail = record(acceptance_log, 2, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 3. auxiliary-draw cost on a 1000-node network
# ---------------------------------------------------------------------------


def test_criterion_3_aux_cost_1000_nodes(acceptance_log):
    spec = ModelSpec.ergm(["edges", "gwesp"], tau=0.25)
    theta_true = np.array([-3.0, 0.5])
    rng = np.random.default_rng(3)
    sim = ERGMSimulator(NetworkState.empty(1000), theta_true, spec)
    sim.cycles(rng, 3)
    data = sim.state()
    res = mple(data, spec)
    prior = prior_box(res)
    proposal = ProposalSpec(res.neg_hessian_inv)

    dmh = run_dmh(data, spec, prior, proposal, 30, rng=4)
    design = sample_design_points(res, 20, rng=np.random.default_rng(5), prior=prior)
    store = harvest(spec, data, design, 5, SimSettings(2, 1, 6))
    store.fit_gp()
    iavm = run_iavm(data, spec, prior, proposal, store, N=3000, rng=7)
    ratio = dmh.aux_seconds_per_draw / iavm.aux_seconds_per_draw

    # the surrogate draw cost depends on the design size, not the network: time it at d=400 too
    rng = np.random.default_rng(8)
    X = rng.normal(size=(400, 2))
    big = GPBinding(n_starts=2).fit(X, np.c_[X.sum(1), np.sin(X[:, 0])])
    probe = rng.normal(size=(500, 2))
    t0 = time.perf_counter()
    for q in probe:
        big.predict_mean(q)
        store.nearest(q)
    per_400 = (time.perf_counter() - t0) / len(probe)
    ratio_400 = dmh.aux_seconds_per_draw / per_400

    checks = [
        (ratio >= 5, f"DMH 1-cycle draw {1e3 * dmh.aux_seconds_per_draw:.1f} ms vs IAVM "
                     f"{1e3 * iavm.aux_seconds_per_draw:.3f} ms (d=20): ratio {ratio:.0f}x"),
        (ratio_400 >= 5, f"surrogate draw at d=400 {1e3 * per_400:.3f} ms: ratio {ratio_400:.0f}x"),
        (iavm.aux_cycles == 0, "IAVM Gibbs cycles per iteration = 0"),
    ]
    ok, detail = record(acceptance_log, 3, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 4. DMH / IAVM agreement on a 50-node network
# ---------------------------------------------------------------------------


def test_criterion_4_ergm_agreement(acceptance_log):
    spec = ModelSpec.ergm(["edges", "gwesp"], tau=0.25)
    data = io.read_network(DATA / "ergm50_edges.csv", n_nodes=50)
    res = mple(data, spec)
    prior = prior_box(res)
    proposal = ProposalSpec(res.neg_hessian_inv)
    N = 30_000

    dmh = run_dmh(data, spec, prior, proposal, N, rng=1)
    runs = {}
    for M in (50, 100):
        for d in (100, 200):
            design = sample_design_points(res, d, rng=np.random.default_rng(2), prior=prior)
            store = harvest(spec, data, design, M, SimSettings(10, 1, 3))
            store.fit_gp()
            runs[(M, d)] = run_iavm(data, spec, prior, proposal, store, N=N, rng=1)

    def moments(ch):
        return (ch.samples.mean(0), np.array([mcse(c) for c in ch.samples.T]),
                [hpd(c) for c in ch.samples.T])

    checks = []
    m_d, e_d, h_d = moments(dmh)
    m_i, e_i, h_i = moments(runs[(50, 200)])
    for k, name in enumerate(spec.labels):
        comb = math.hypot(e_d[k], e_i[k])
        z_score = (m_i[k] - m_d[k]) / comb
        overlap = h_d[k][0] <= h_i[k][1] and h_i[k][0] <= h_d[k][1]
        checks.append((abs(z_score) < 3, f"{name}: DMH {m_d[k]:.4f} vs IAVM {m_i[k]:.4f} ({z_score:+.2f} MCSE)"))
        checks.append((overlap, f"{name} HPDs ({h_d[k][0]:.3f}, {h_d[k][1]:.3f}) / ({h_i[k][0]:.3f}, {h_i[k][1]:.3f})"))
    stats_ = {key: moments(ch) for key, ch in runs.items()}
    keys = list(stats_)
    for k, name in enumerate(spec.labels):
        worst = max(abs(stats_[a][0][k] - stats_[b][0][k]) / math.hypot(stats_[a][1][k], stats_[b][1][k])
                    for i, a in enumerate(keys) for b in keys[i + 1:])
        means = ", ".join(f"{stats_[key][0][k]:.4f}" for key in keys)
        checks.append((worst < 2, f"{name} over (M,d) grid [{means}]: max spread {worst:.2f} MCSE"))
    ok, detail = record(acceptance_log, 4, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 5. statistic golden values
# ---------------------------------------------------------------------------


def test_criterion_5_statistic_golden_values(acceptance_log, rng):
    tri = NetworkState.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    gwesp = [float(ergm_suff_stats(tri, ModelSpec.ergm(["gwesp"], tau=t))[0]) for t in (0.0, 0.25, 1.0, 3.0)]
    gwd = float(ergm_suff_stats(tri, ModelSpec.ergm(["gwd"], tau=0.25))[0])
    up = ising_suff_stat(LatticeState.constant(2, 2, 1))[0]
    checker = ising_suff_stat(LatticeState([[1, -1], [-1, 1]]))[0]

    spec = ModelSpec.ergm(["edges", "gwd", "gwesp"])
    net = NetworkState(random_graph(rng, 30, 0.15))
    sim = ERGMSimulator(net, rng.normal(0, 0.3, 3), spec)
    sim.updates(rng, 10_000)
    oracle = ergm_stats_sets(sim.adj, [("edges", None), ("gwd", 0.25), ("gwesp", 0.25)])
    ergm_err = float(np.max(np.abs(sim.stats() - oracle)))
    isim = IsingSimulator(LatticeState(rng.choice([-1, 1], size=(10, 10))), 0.3)
    isim.cycles(rng, 100)
    ising_err = abs(isim.stat - ising_stat_loops(isim.spins.tolist()))

    checks = [
        (all(g == 3.0 for g in gwesp), f"triangle gwesp {gwesp}"),
        (abs(gwd - 3 * (2 - math.exp(-0.25))) <= 1e-12, f"triangle gwd(0.25) {gwd!r}"),
        (up == 4 and checker == -4, f"2x2 Ising {up:+.0f}/{checker:+.0f}"),
        (ergm_err <= 1e-9 and ising_err <= 1e-9,
         f"incremental vs scratch after 1e4 updates: ERGM {ergm_err:.1e}, Ising {ising_err:.1e}"),
    ]
    ok, detail = record(acceptance_log, 5, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 6. GP emulator
# ---------------------------------------------------------------------------


def _fd_grad(fun, x, h=1e-5):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def test_criterion_6_gp_suite(acceptance_log):
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(20, 1))
    y = np.sin(6 * X[:, 0]) + 3
    gp = GPBinding().fit(X, y)
    interp = float(np.max(np.abs(gp.predict(X) - y) / np.abs(y)))

    worst_grad = 0.0
    for seed in range(3):
        r = np.random.default_rng(seed)
        Xg = r.uniform(size=(40, 2))
        Yg = np.c_[np.sin(4 * Xg[:, 0]) + Xg[:, 1], Xg[:, 0] * Xg[:, 1]] + 0.02 * r.normal(size=(40, 2))
        g = GPBinding().fit(Xg, Yg)
        for k in range(2):
            h = g.hyper_[k]
            lp = np.log([h.sigma2, h.phi, h.tau2])
            fd = _fd_grad(lambda v: g.log_marginal_likelihood(k, v)[0], lp)
            for j, (lo, hi) in enumerate(g._bounds()):
                # a component pinned at a bound and pushing outward satisfies KKT
                if (lp[j] <= lo + 1e-9 and fd[j] < 0) or (lp[j] >= hi - 1e-9 and fd[j] > 0):
                    fd[j] = 0.0
            worst_grad = max(worst_grad, float(np.max(np.abs(fd))))

    min_eig = np.inf
    for _ in range(200):
        n, p = rng.integers(2, 40), rng.integers(1, 4)
        Z = rng.normal(size=(n, p)) * rng.uniform(0.01, 10)
        G = matern32_matrix(Z, Z, rng.uniform(0.1, 5), rng.uniform(0.01, 10)) + 1e-8 * np.eye(n)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(G).min()))

    Xl = rng.uniform(-2, 2, size=(30, 2))
    lin = GPBinding().fit(Xl, Xl @ [2.0, -1.0] + 1)
    Xt = rng.uniform(-2, 2, size=(50, 2))
    lin_err = float(np.max(np.abs(lin.predict(Xt) - (Xt @ [2.0, -1.0] + 1))))

    checks = [
        (interp <= 1e-4, f"interpolation rel err {interp:.1e}"),
        (worst_grad < 1e-4, f"max |grad| at optimum {worst_grad:.1e}"),
        (min_eig >= -1e-8, f"min Gram eigenvalue {min_eig:.1e}"),
        (lin_err <= 1e-6, f"linear recovery err {lin_err:.1e}"),
    ]
    ok, detail = record(acceptance_log, 6, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 7. diagnostics
# ---------------------------------------------------------------------------


def test_criterion_7_diagnostics(acceptance_log):
    rng = np.random.default_rng(7)
    iid = [ess(rng.normal(size=10_000)) for _ in range(10)]
    n, rho = 100_000, 0.5
    target = n * (1 - rho) / (1 + rho)
    ar = ess(ar1(rng, n, rho))
    lo, hi = hpd(rng.random(1_000_000))
    checks = [
        (all(9000 <= e <= 11000 for e in iid), f"iid ESS range [{min(iid):.0f}, {max(iid):.0f}]"),
        (abs(ar - target) < 0.15 * target, f"AR(1) ESS {ar:.0f} vs {target:.0f}"),
        (abs(hi - lo - 0.95) < 0.005, f"uniform HPD length {hi - lo:.4f}"),
    ]
    ok, detail = record(acceptance_log, 7, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 8. CFTP exactness
# ---------------------------------------------------------------------------


def test_criterion_8_cftp_exact(acceptance_log):
    checks = []
    for theta in (0.1, 0.3):
        rng = np.random.default_rng(800 + int(theta * 10))
        counts = np.zeros(16)
        for _ in range(20_000):
            counts[lattice_code(cftp_ising(theta, 2, 2, rng))] += 1
        expected = 20_000 * boltzmann_probabilities(theta, 2, 2)
        pvalue = stats.chisquare(counts, expected).pvalue
        checks.append((pvalue > 0.01, f"theta={theta}: chi-square p={pvalue:.3f}"))
    ok, detail = record(acceptance_log, 8, checks)
    assert ok, detail


# ---------------------------------------------------------------------------
# 9. determinism of every pipeline stage
# ---------------------------------------------------------------------------


def _hashes(directory):
    return {p.name: io.file_sha256(p) for p in sorted(directory.iterdir()) if not p.name.endswith(".timing.json")}


def test_criterion_9_determinism(acceptance_log, tmp_path):
    work = tmp_path / "ergm"
    assert cli_main(["init", "ergm50", str(work)]) == 0
    ini = work / "ergm50.ini"
    text = ini.read_text().replace("d = 200", "d = 40").replace("n = 30000", "n = 2000")
    ini.write_text(text)
    lattice = tmp_path / "ising"
    assert cli_main(["init", "ising", str(lattice)]) == 0
    iini = lattice / "ising.ini"
    iini.write_text(iini.read_text().replace("n = 10000", "n = 500"))

    results = []
    for cfg, algorithms in ((ini, ("iavm", "dmh")), (iini, ("iavm", "dmh", "exchange"))):
        per_run = []
        for tag, workers in (("a", 1), ("b", 4), ("c", 1)):
            out = cfg.parent / f"out_{tag}"
            base = ["--config", str(cfg), "--out", str(out)]
            codes = [cli_main(["mple"] + base), cli_main(["design"] + base),
                     cli_main(["precompute"] + base + ["--workers", str(workers)]), cli_main(["fit-gp"] + base)]
            for alg in algorithms:
                codes.append(cli_main(["sample"] + base + ["--algorithm", alg]))
                io.write_json({"wall_seconds": 1.0}, out / f"chain_{alg}.timing.json")
                codes.append(cli_main(["diagnose", str(out / f"chain_{alg}.csv")]))
            assert all(c == 0 for c in codes), codes
            per_run.append(_hashes(out))
        same = per_run[0] == per_run[1] == per_run[2]
        results.append((same, f"{cfg.stem}: {len(per_run[0])} artifacts identical across reruns and 1/4 workers"
                        if same else f"{cfg.stem}: artifacts differ"))
    ok, detail = record(acceptance_log, 9, results)
    assert ok, detail
