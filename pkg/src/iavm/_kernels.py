"""Compiled inner loops for the Ising and ERGM simulators.

Randomness never originates here: every kernel consumes uniforms (and dyad
indices) drawn by the caller from a ``numpy.random.Generator`` so results
are bit-reproducible and independent of threading.
"""

import math

import numpy as np
from numba import njit

# term codes shared with models.py
EDGES = 0
NODEFACTOR = 1
GWD = 2
GWESP = 3

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def _site_field(spins, i, j):
    m, n = spins.shape
    s = 0
    if i > 0:
        s += spins[i - 1, j]
    if i < m - 1:
        s += spins[i + 1, j]
    if j > 0:
        s += spins[i, j - 1]
    if j < n - 1:
        s += spins[i, j + 1]
    return s


@njit(**_JIT)
def ising_stat(spins):
    m, n = spins.shape
    total = 0
    for i in range(m):
        for j in range(n - 1):
            total += spins[i, j] * spins[i, j + 1]
    for i in range(m - 1):
        for j in range(n):
            total += spins[i, j] * spins[i + 1, j]
    return total


@njit(**_JIT)
def _up_table(theta):
    # P(+1 | neighbour sum s) for s = -4..4
    table = np.empty(9)
    for s in range(-4, 5):
        table[s + 4] = 1.0 / (1.0 + math.exp(-2.0 * theta * s))
    return table


@njit(**_JIT)
def ising_sweep(spins, table, uniforms, stat):
    """One raster-order heat-bath sweep in place; returns the updated statistic."""
    m, n = spins.shape
    for i in range(m):
        for j in range(n):
            s = _site_field(spins, i, j)
            new = 1 if uniforms[i, j] < table[s + 4] else -1
            old = spins[i, j]
            if new != old:
                spins[i, j] = new
                stat += (new - old) * s
    return stat


@njit(**_JIT)
def ising_run(spins, theta, uniforms, stat, record_every, out):
    """Run ``uniforms.shape[0]`` sweeps, storing the statistic every
    ``record_every`` sweeps (counted from the end of the first block)."""
    table = _up_table(theta)
    k = 0
    for t in range(uniforms.shape[0]):
        stat = ising_sweep(spins, table, uniforms[t], stat)
        if record_every > 0 and (t + 1) % record_every == 0:
            out[k] = stat
            k += 1
    return stat


@njit(**_JIT)
def cftp_sweeps(upper, lower, theta, uniforms):
    """Drive the top and bottom chains through the same sweeps."""
    m, n = upper.shape
    table = _up_table(theta)
    for t in range(uniforms.shape[0]):
        for i in range(m):
            for j in range(n):
                u = uniforms[t, i, j]
                upper[i, j] = 1 if u < table[_site_field(upper, i, j) + 4] else -1
                lower[i, j] = 1 if u < table[_site_field(lower, i, j) + 4] else -1


@njit(**_JIT)
def all_equal(a, b):
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j] != b[i, j]:
                return False
    return True


# ---------------------------------------------------------------------------
# ERGM bookkeeping
#
# adj   : n x n uint8, symmetric, zero diagonal
# nbr   : n x n int32, first deg[i] entries are the neighbours of i
# pos   : n x n int32, pos[i, j] = index of j inside nbr[i] (valid iff adj)
# deg   : n int64
# sp    : n x n int32, sp[i, j] = number of common neighbours of i and j
# ---------------------------------------------------------------------------


@njit(**_JIT)
def build_cache(adj):
    n = adj.shape[0]
    nbr = np.zeros((n, n), dtype=np.int32)
    pos = np.full((n, n), -1, dtype=np.int32)
    deg = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            if adj[i, j]:
                pos[i, j] = deg[i]
                nbr[i, deg[i]] = j
                deg[i] += 1
    sp = np.zeros((n, n), dtype=np.int32)
    for k in range(n):
        for a in range(deg[k]):
            i = nbr[k, a]
            for b in range(deg[k]):
                j = nbr[k, b]
                if i != j:
                    sp[i, j] += 1
    return nbr, pos, deg, sp


@njit(**_JIT)
def _geo_weight(k, decay):
    # e^tau * (1 - r^k) with r = 1 - e^-tau, written as 1 + r e^tau (1 - r^(k-1))
    # so that a single partner weighs exactly 1; zero for k = 0
    if k == 0:
        return 0.0
    r = 1.0 - math.exp(-decay)
    return 1.0 + r * math.exp(decay) * (1.0 - r ** (k - 1))


@njit(**_JIT)
def full_stats(adj, kinds, params, factors, edge_scale):
    n = adj.shape[0]
    p = kinds.shape[0]
    nbr, pos, deg, sp = build_cache(adj)
    out = np.zeros(p)
    for t in range(p):
        kind = kinds[t]
        if kind == EDGES:
            total = 0.0
            for i in range(n):
                total += deg[i]
            out[t] = total * edge_scale / 2.0
        elif kind == NODEFACTOR:
            total = 0.0
            for i in range(n):
                total += deg[i] * factors[t, i]
            out[t] = total
        elif kind == GWD:
            total = 0.0
            for i in range(n):
                total += _geo_weight(deg[i], params[t])
            out[t] = total
        else:
            total = 0.0
            for i in range(n):
                for j in range(i + 1, n):
                    if adj[i, j]:
                        total += _geo_weight(sp[i, j], params[t])
            out[t] = total
    return out


@njit(**_JIT)
def change_stats(adj, nbr, deg, sp, i, j, kinds, params, factors, edge_scale, out):
    """Fill ``out`` with stats(x_ij = 1) - stats(x_ij = 0)."""
    x = adj[i, j]
    for t in range(kinds.shape[0]):
        kind = kinds[t]
        if kind == EDGES:
            out[t] = edge_scale
        elif kind == NODEFACTOR:
            out[t] = factors[t, i] + factors[t, j]
        elif kind == GWD:
            r = 1.0 - math.exp(-params[t])
            out[t] = r ** (deg[i] - x) + r ** (deg[j] - x)
        else:
            tau = params[t]
            r = 1.0 - math.exp(-tau)
            # sp[i, j] does not depend on the (i, j) edge itself
            delta = _geo_weight(sp[i, j], tau)
            if sp[i, j] > 0:
                # each shared partner k gains one ESP on edges (i,k) and (j,k)
                if deg[i] <= deg[j]:
                    a, b = i, j
                else:
                    a, b = j, i
                for q in range(deg[a]):
                    k = nbr[a, q]
                    if k != b and adj[b, k]:
                        delta += r ** (sp[i, k] - x) + r ** (sp[j, k] - x)
            out[t] = delta


@njit(**_JIT)
def toggle(adj, nbr, pos, deg, sp, i, j):
    if adj[i, j]:
        # remove j from i's list and vice versa
        for a, b in ((i, j), (j, i)):
            idx = pos[a, b]
            last = nbr[a, deg[a] - 1]
            nbr[a, idx] = last
            pos[a, last] = idx
            pos[a, b] = -1
            deg[a] -= 1
        adj[i, j] = 0
        adj[j, i] = 0
        step = -1
    else:
        for a, b in ((i, j), (j, i)):
            nbr[a, deg[a]] = b
            pos[a, b] = deg[a]
            deg[a] += 1
        adj[i, j] = 1
        adj[j, i] = 1
        step = 1
    # j becomes/stops being a common neighbour of i and each k ~ j, etc.
    for q in range(deg[i]):
        k = nbr[i, q]
        if k != j:
            sp[j, k] += step
            sp[k, j] += step
    for q in range(deg[j]):
        k = nbr[j, q]
        if k != i:
            sp[i, k] += step
            sp[k, i] += step


@njit(**_JIT)
def ergm_gibbs(adj, nbr, pos, deg, sp, theta, kinds, params, factors, edge_scale,
               dyads_i, dyads_j, uniforms, stats):
    """Random-scan Gibbs over the supplied dyads; ``stats`` updated in place."""
    p = kinds.shape[0]
    delta = np.zeros(p)
    for u in range(uniforms.shape[0]):
        i = dyads_i[u]
        j = dyads_j[u]
        change_stats(adj, nbr, deg, sp, i, j, kinds, params, factors, edge_scale, delta)
        eta = 0.0
        for t in range(p):
            eta += theta[t] * delta[t]
        if eta >= 0:
            prob = 1.0 / (1.0 + math.exp(-eta))
        else:
            e = math.exp(eta)
            prob = e / (1.0 + e)
        new = 1 if uniforms[u] < prob else 0
        if new != adj[i, j]:
            toggle(adj, nbr, pos, deg, sp, i, j)
            sign = 1.0 if new == 1 else -1.0
            for t in range(p):
                stats[t] += sign * delta[t]


@njit(**_JIT)
def all_change_stats(adj, kinds, params, factors, edge_scale):
    """Response vector and change-statistic matrix over all dyads i < j."""
    n = adj.shape[0]
    p = kinds.shape[0]
    nbr, pos, deg, sp = build_cache(adj)
    n_dyads = n * (n - 1) // 2
    design = np.zeros((n_dyads, p))
    response = np.zeros(n_dyads)
    row = np.zeros(p)
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            change_stats(adj, nbr, deg, sp, i, j, kinds, params, factors, edge_scale, row)
            design[k] = row
            response[k] = adj[i, j]
            k += 1
    return response, design

