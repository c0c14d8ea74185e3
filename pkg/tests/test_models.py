import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from iavm.exceptions import CoalescenceError, EnumerationLimitError, MissingAttributeError
from iavm.models import (
    ERGMSimulator,
    IsingSimulator,
    LatticeState,
    ModelSpec,
    NetworkState,
    SimSettings,
    Term,
    boltzmann_probabilities,
    cftp_ising,
    change_stat,
    ergm_suff_stats,
    exact_log_z,
    gibbs_cycle_ergm,
    gibbs_cycle_ising,
    ising_full_conditional,
    ising_suff_stat,
    lattice_code,
    simulate_suff_stats,
)

from oracles import ergm_stats_sets, ising_stat_loops, log_z_lattice_brute, random_graph

TRIANGLE = NetworkState.from_edges(3, [(0, 1), (1, 2), (0, 2)])


# -- states -----------------------------------------------------------------


def test_lattice_rejects_bad_spins():
    with pytest.raises(ValueError):
        LatticeState([[1, 0], [1, 1]])


def test_network_rejects_asymmetric():
    with pytest.raises(ValueError):
        NetworkState([[0, 1], [0, 0]])


def test_network_rejects_self_loop():
    with pytest.raises(ValueError):
        NetworkState([[1, 0], [0, 0]])


def test_network_attribute_rows_checked():
    with pytest.raises(ValueError):
        NetworkState.empty(3, {"grade": [7, 8]})


def test_ising_spec_has_one_term():
    with pytest.raises(ValueError):
        ModelSpec("ising", (Term("ising"), Term("ising")))


# -- Ising statistic ----------------------------------------------------------


def test_ising_stat_all_up():
    assert ising_suff_stat(LatticeState.constant(2, 2))[0] == 4


def test_ising_stat_checkerboard():
    assert ising_suff_stat(LatticeState([[1, -1], [-1, 1]]))[0] == -4


def test_ising_stat_matches_double_loop(rng):
    for _ in range(100):
        x = rng.choice([-1, 1], size=(3, 3))
        assert ising_suff_stat(LatticeState(x))[0] == ising_stat_loops(x.tolist())


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_ising_stat_range(m, n, seed):
    x = np.random.default_rng(seed).choice([-1, 1], size=(m, n))
    bound = 2 * m * n - m - n
    s = ising_suff_stat(LatticeState(x))[0]
    assert -bound <= s <= bound and s == int(s)


# -- ERGM statistics ------------------------------------------------------------


def test_triangle_edges_degree_sum():
    assert ergm_suff_stats(TRIANGLE, ModelSpec.ergm(["edges"]))[0] == 6


def test_triangle_edges_edge_count_convention():
    spec = ModelSpec.ergm(["edges"], edge_convention="edge-count")
    assert ergm_suff_stats(TRIANGLE, spec)[0] == 3


@pytest.mark.parametrize("tau", [0.0, 0.1, 0.25, 1.0, 3.0])
def test_triangle_gwesp_is_three(tau):
    assert ergm_suff_stats(TRIANGLE, ModelSpec.ergm(["gwesp"], tau=tau))[0] == pytest.approx(3, abs=1e-12)


def test_triangle_gwd():
    val = ergm_suff_stats(TRIANGLE, ModelSpec.ergm(["gwd"], tau=0.25))[0]
    assert abs(val - 3 * (2 - math.exp(-0.25))) < 1e-12


def test_empty_graph_zero_vector():
    spec = ModelSpec.faux_magnolia()
    net = NetworkState.empty(5, {"grade": [7, 8, 9, 10, 11], "sex": ["male"] * 5})
    np.testing.assert_array_equal(ergm_suff_stats(net, spec), np.zeros(10))


def test_missing_attribute():
    with pytest.raises(MissingAttributeError):
        ergm_suff_stats(TRIANGLE, ModelSpec.faux_magnolia())


def _faux_net(rng, n, density=0.3):
    attrs = {"grade": rng.integers(7, 13, n), "sex": rng.choice(["male", "female"], n)}
    return NetworkState(random_graph(rng, n, density), attrs)


def _oracle_terms(spec):
    out = []
    for t in spec.terms:
        if t.kind == "nodefactor":
            out.append((t.kind, (t.attribute, t.level)))
        else:
            out.append((t.kind, t.decay))
    return out


def test_ergm_stats_match_set_oracle(rng):
    spec = ModelSpec.faux_magnolia(tau_d=0.4, tau_s=0.7)
    for _ in range(20):
        net = _faux_net(rng, int(rng.integers(2, 25)), rng.uniform(0.05, 0.6))
        expected = ergm_stats_sets(net.adjacency, _oracle_terms(spec), net.attributes)
        np.testing.assert_allclose(ergm_suff_stats(net, spec), expected, atol=1e-9)


def test_change_stats_match_scratch(rng):
    spec = ModelSpec.faux_magnolia(tau_d=0.25, tau_s=0.25)
    for _ in range(10):
        net = _faux_net(rng, 12, rng.uniform(0.1, 0.6))
        for i in range(12):
            for j in range(i + 1, 12):
                on, off = net.adjacency.copy(), net.adjacency.copy()
                on[i, j] = on[j, i] = 1
                off[i, j] = off[j, i] = 0
                expected = (ergm_suff_stats(NetworkState(on, net.attributes), spec)
                            - ergm_suff_stats(NetworkState(off, net.attributes), spec))
                np.testing.assert_allclose(change_stat(net, spec, i, j), expected, atol=1e-9)


def test_gwesp_change_stat_direct_term(rng):
    # endpoints share c partners and nothing else: direct term plus 2c partner terms
    tau = 0.25
    r = 1 - math.exp(-tau)
    for c in range(1, 5):
        edges = [(0, k) for k in range(2, 2 + c)] + [(1, k) for k in range(2, 2 + c)]
        net = NetworkState.from_edges(2 + c, edges)
        delta = change_stat(net, ModelSpec.ergm(["gwesp"], tau=tau), 0, 1)[0]
        direct = math.exp(tau) * (1 - r ** c)
        # each partner edge goes from 0 to 1 shared partner: weight gain r^0 = 1
        assert delta == pytest.approx(direct + 2 * c, abs=1e-12)


# -- full conditional -----------------------------------------------------------


def test_full_conditional_theta_zero(rng):
    x = LatticeState(rng.choice([-1, 1], size=(4, 4)))
    assert all(ising_full_conditional(x, i, j, 0.0) == 0.5 for i in range(4) for j in range(4))


def test_full_conditional_interior():
    x = LatticeState.constant(3, 3)
    assert ising_full_conditional(x, 1, 1, 0.3) == pytest.approx(1 / (1 + math.exp(-2.4)), abs=1e-12)
    assert ising_full_conditional(x, 1, 1, 0.3) == pytest.approx(0.9168, abs=1e-4)


def test_full_conditional_limit():
    x = LatticeState.constant(3, 3)
    assert ising_full_conditional(x, 0, 0, 50.0) == pytest.approx(1.0)


# -- Gibbs -------------------------------------------------------------------


def test_ising_gibbs_theta_zero_fair_coins(rng):
    x = LatticeState.constant(10, 10)
    ups = 0
    for _ in range(50):
        x = gibbs_cycle_ising(x, 0.0, rng)
        ups += int((x.spins == 1).sum())
    n = 50 * 100
    assert abs(ups - n / 2) < 4 * math.sqrt(n / 4)


def test_ising_gibbs_deterministic():
    x = LatticeState.constant(6, 7)
    a = gibbs_cycle_ising(x, 0.3, np.random.default_rng(5))
    b = gibbs_cycle_ising(x, 0.3, np.random.default_rng(5))
    assert a == b


def _chisq_pvalue(counts, probs):
    keep = probs * counts.sum() >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(probs[keep], probs[~keep].sum()) * counts.sum()
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    return stats.chisquare(obs, exp).pvalue


def test_ising_gibbs_stationary_2x2(rng):
    theta = 0.3
    sim = IsingSimulator(LatticeState.constant(2, 2), theta)
    counts = np.zeros(16)
    sim.cycles(rng, 100)
    for _ in range(100_000):
        sim.cycles(rng, 1)
        counts[lattice_code(LatticeState(sim.spins))] += 1
    assert _chisq_pvalue(counts, boltzmann_probabilities(theta, 2, 2)) > 0.01


def test_ergm_gibbs_theta_zero_bernoulli_half(rng):
    spec = ModelSpec.ergm(["edges", "gwesp"])
    net = NetworkState.empty(30)
    dens = []
    for _ in range(20):
        net = gibbs_cycle_ergm(net, [0.0, 0.0], spec, rng)
        dens.append(net.n_edges / (30 * 29 / 2))
    assert abs(np.mean(dens) - 0.5) < 0.02


def test_ergm_gibbs_preserves_symmetry(rng):
    spec = ModelSpec.ergm(["edges", "gwesp", "gwd"])
    net = NetworkState(random_graph(rng, 15, 0.3))
    for _ in range(5):
        net = gibbs_cycle_ergm(net, [-0.5, 0.2, 0.1], spec, rng)
        adj = net.adjacency
        assert np.array_equal(adj, adj.T) and not adj.diagonal().any()


def test_ergm_gibbs_edges_density_closed_form(rng):
    theta = -0.4
    spec = ModelSpec.ergm(["edges"])
    sim = ERGMSimulator(NetworkState.empty(4), [theta], spec)
    total = 0
    n_draws = 20_000
    for _ in range(n_draws):
        sim.cycles(rng, 1)
        total += sim.adj.sum() // 2
    density = total / (6 * n_draws)
    closed = 1 / (1 + math.exp(-2 * theta))
    # enumeration: d log Z / d theta = E[degree sum] = 2 * 6 * density
    h = 1e-5
    dlogz = (exact_log_z(spec, [theta + h], sim.state()) - exact_log_z(spec, [theta - h], sim.state())) / (2 * h)
    assert dlogz / 12 == pytest.approx(closed, abs=1e-8)
    assert abs(density - closed) < 4 * math.sqrt(closed * (1 - closed) / (6 * n_draws))


def test_ergm_gibbs_stationary_4_nodes(rng):
    from oracles import ergm_stats_sets
    theta = np.array([-0.3, 0.4])
    spec = ModelSpec.ergm(["edges", "gwesp"])
    iu = np.triu_indices(4, 1)
    logw = np.empty(64)
    for code in range(64):
        adj = np.zeros((4, 4), dtype=np.uint8)
        adj[iu] = (code >> np.arange(6)) & 1
        adj = adj | adj.T
        logw[code] = theta @ ergm_stats_sets(adj, [("edges", None), ("gwesp", 0.25)])
    probs = np.exp(logw - logw.max())
    probs /= probs.sum()
    sim = ERGMSimulator(NetworkState.empty(4), theta, spec)
    counts = np.zeros(64)
    for _ in range(100_000):
        sim.cycles(rng, 1)
        code = int((sim.adj[iu].astype(np.int64) << np.arange(6)).sum())
        counts[code] += 1
    assert _chisq_pvalue(counts, probs) > 0.01


def test_incremental_stats_exact_ergm(rng):
    spec = ModelSpec.faux_magnolia()
    net = _faux_net(rng, 40, 0.1)
    theta = rng.normal(0, 0.3, 10)
    sim = ERGMSimulator(net, theta, spec)
    sim.updates(rng, 10_000)
    expected = ergm_stats_sets(sim.adj, _oracle_terms(spec), net.attributes)
    np.testing.assert_allclose(sim.stats(), expected, atol=1e-9)
    np.testing.assert_allclose(sim.stats(), sim.recompute(), atol=1e-9)


def test_incremental_stats_exact_ising(rng):
    sim = IsingSimulator(LatticeState(rng.choice([-1, 1], size=(10, 10))), 0.2)
    sim.cycles(rng, 100)  # 10^4 site updates
    assert sim.stat == ising_stat_loops(sim.spins.tolist())


# -- simulate_suff_stats ---------------------------------------------------------


def test_simulate_composition():
    spec = ModelSpec.ising()
    x0 = LatticeState.constant(5, 5)
    out = simulate_suff_stats(spec, 0.3, 1, SimSettings(0, 1, 9), x0)
    x1 = gibbs_cycle_ising(x0, 0.3, np.random.default_rng(9))
    assert out[0, 0] == ising_suff_stat(x1)[0]


def test_simulate_composition_ergm():
    spec = ModelSpec.ergm(["edges", "gwesp"])
    x0 = NetworkState.empty(8)
    out = simulate_suff_stats(spec, [-0.5, 0.2], 1, SimSettings(0, 1, 9), x0)
    x1 = gibbs_cycle_ergm(x0, [-0.5, 0.2], spec, np.random.default_rng(9))
    np.testing.assert_allclose(out[0], ergm_suff_stats(x1, spec))


def test_simulate_seed_reproducible():
    spec = ModelSpec.ergm(["edges", "gwesp"])
    settings_ = SimSettings(3, 2, 77)
    a = simulate_suff_stats(spec, [-0.5, 0.2], 10, settings_, NetworkState.empty(10))
    b = simulate_suff_stats(spec, [-0.5, 0.2], 10, settings_, NetworkState.empty(10))
    np.testing.assert_array_equal(a, b)


def test_simulate_ising_statistics_roughly_normal(rng):
    x = cftp_ising(0.3, 100, 100, rng)
    draws = simulate_suff_stats(ModelSpec.ising(), 0.3, 50, SimSettings(20, 2, 1), x)[:, 0]
    z = (draws - draws.mean()) / draws.std(ddof=1)
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_sim_settings_validation():
    with pytest.raises(ValueError):
        SimSettings(spacing_cycles=0)
    with pytest.raises(ValueError):
        SimSettings(burnin_cycles=-1)


# -- CFTP --------------------------------------------------------------------


def test_cftp_theta_zero_fair(rng):
    ups = sum(int((cftp_ising(0.0, 10, 10, rng).spins == 1).sum()) for _ in range(30))
    n = 3000
    assert abs(ups - n / 2) < 4 * math.sqrt(n / 4)


@pytest.mark.parametrize("theta", [0.1, 0.3])
def test_cftp_exact_2x2(theta):
    rng = np.random.default_rng(int(theta * 1000))
    counts = np.zeros(16)
    for _ in range(20_000):
        counts[lattice_code(cftp_ising(theta, 2, 2, rng))] += 1
    assert _chisq_pvalue(counts, boltzmann_probabilities(theta, 2, 2)) > 0.01


def test_cftp_budget_error(rng):
    with pytest.raises(CoalescenceError):
        cftp_ising(2.0, 20, 20, rng, max_sweeps=4)


def test_cftp_deterministic():
    a = cftp_ising(0.3, 20, 20, np.random.default_rng(3))
    b = cftp_ising(0.3, 20, 20, np.random.default_rng(3))
    assert a == b


def test_cftp_large_lattice_terminates(rng):
    x = cftp_ising(0.3, 100, 100, rng)
    assert x.shape == (100, 100)


def test_cftp_rejects_negative():
    with pytest.raises(ValueError):
        cftp_ising(-0.1, 3, 3, np.random.default_rng(0))


# -- enumeration --------------------------------------------------------------


def test_log_z_1x2():
    theta = 0.7
    got = exact_log_z(ModelSpec.ising(), theta, LatticeState.constant(1, 2))
    assert got == pytest.approx(math.log(2 * math.exp(theta) + 2 * math.exp(-theta)), abs=1e-12)


def test_log_z_theta_zero():
    assert exact_log_z(ModelSpec.ising(), 0.0, LatticeState.constant(3, 4)) == pytest.approx(12 * math.log(2))
    spec = ModelSpec.ergm(["edges", "gwesp"])
    assert exact_log_z(spec, [0.0, 0.0], NetworkState.empty(5)) == pytest.approx(10 * math.log(2))


def test_log_z_3x3_brute_force():
    for theta in (0.0, 0.3, -0.4, 1.1):
        got = exact_log_z(ModelSpec.ising(), theta, LatticeState.constant(3, 3))
        assert got == pytest.approx(log_z_lattice_brute(3, 3, theta), abs=1e-10)


def test_log_z_vectorised():
    spec = ModelSpec.ising()
    grid = np.linspace(0, 1, 5)[:, None]
    out = exact_log_z(spec, grid, LatticeState.constant(2, 3))
    assert out.shape == (5,)
    assert out[2] == pytest.approx(exact_log_z(spec, 0.5, LatticeState.constant(2, 3)))


def test_log_z_size_limit():
    with pytest.raises(EnumerationLimitError):
        exact_log_z(ModelSpec.ising(), 0.1, LatticeState.constant(5, 5))
    with pytest.raises(EnumerationLimitError):
        exact_log_z(ModelSpec.ergm(["edges"]), [0.1], NetworkState.empty(8))
