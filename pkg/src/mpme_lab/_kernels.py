"""Compiled hot loops for the event-driven simulator.

Everything here operates on flat numpy arrays so numba can compile it
nogil; trajectory-level parallelism then comes from ordinary threads.

Directed bonds are indexed leaf = (site*d + axis)*2 + dir with dir 0 for
the jump site -> site+e_axis and dir 1 for the reverse. Leaf rates live in
the lower half of a binary partial-sum tree of size 2*P (P the next power
of two >= leaf count); tree[1] is the total rate.

Status codes returned by the advance loop:
    0  reached the requested end time
    1  blocked (total rate zero; clock moved to the horizon)
    2  event budget exhausted (caller rebuilds and resumes)
    3  an occupancy would exceed the g-table cap (the jump is not applied)
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_DONE = 0
STATUS_BLOCKED = 1
STATUS_MAX_EVENTS = 2
STATUS_CAP = 3

OFF0 = 4  # zero-offset column in the (d, 9, nsites) shift tables

_U64 = np.uint64
_MASK = (1 << 64) - 1


# -- xoshiro256++ --------------------------------------------------------------


def seed_rng_state(seed: int) -> np.ndarray:
    """Four-word xoshiro256++ state from an integer seed via splitmix64."""
    state = np.empty(4, dtype=np.uint64)
    z = seed & _MASK
    for i in range(4):
        z = (z + 0x9E3779B97F4A7C15) & _MASK
        w = z
        w = ((w ^ (w >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        w = ((w ^ (w >> 27)) * 0x94D049BB133111EB) & _MASK
        state[i] = w ^ (w >> 31)
    if not state.any():
        state[0] = 1
    return state


@njit(cache=True, nogil=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (_U64(64) - k))


@njit(cache=True, nogil=True, inline="always")
def _next_u64(s):
    result = _rotl(s[0] + s[3], _U64(23)) + s[0]
    t = s[1] << _U64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], _U64(45))
    return result


@njit(cache=True, nogil=True, inline="always")
def _next_double(s):
    return (_next_u64(s) >> _U64(11)) * 1.1102230246251565e-16


def reference_next_u64(state: list[int]) -> int:
    """Pure-Python mirror of _next_u64 for validating the compiled stream."""

    def rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & _MASK

    result = (rotl((state[0] + state[3]) & _MASK, 23) + state[0]) & _MASK
    t = (state[1] << 17) & _MASK
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = rotl(state[3], 45)
    return result


# -- rate table ----------------------------------------------------------------


@njit(cache=True, nogil=True, inline="always")
def _bond_pair_rates(occ, g_tab, shifts, z, a, m):
    """(forward, backward) rates of the undirected bond (z, z+e_a)."""
    if m == 1:
        c = 1.0
    elif m == 2:
        c = g_tab[occ[shifts[a, OFF0 - 1, z]]] + g_tab[occ[shifts[a, OFF0 + 2, z]]]
    else:
        ga = g_tab[occ[shifts[a, OFF0 - 1, z]]]
        gb = g_tab[occ[shifts[a, OFF0 + 2, z]]]
        c = (
            ga * gb
            + g_tab[occ[shifts[a, OFF0 - 2, z]]] * ga
            + gb * g_tab[occ[shifts[a, OFF0 + 3, z]]]
        )
    return c * g_tab[occ[z]], c * g_tab[occ[shifts[a, OFF0 + 1, z]]]


@njit(cache=True, nogil=True, inline="always")
def _write_bond(tree, P, z, a, d, fwd, bwd):
    node = P + (z * d + a) * 2
    tree[node] = fwd
    tree[node + 1] = bwd
    node >>= 1
    while node >= 1:
        tree[node] = tree[2 * node] + tree[2 * node + 1]
        node >>= 1


@njit(cache=True, nogil=True)
def rebuild_tree(occ, g_tab, shifts, d, m, tree, P):
    nsites = occ.size
    tree[:] = 0.0
    for z in range(nsites):
        for a in range(d):
            fwd, bwd = _bond_pair_rates(occ, g_tab, shifts, z, a, m)
            base = P + (z * d + a) * 2
            tree[base] = fwd
            tree[base + 1] = bwd
    for node in range(P - 1, 0, -1):
        tree[node] = tree[2 * node] + tree[2 * node + 1]


@njit(cache=True, nogil=True)
def g_sum(occ, g_tab):
    total = 0.0
    for z in range(occ.size):
        total += g_tab[occ[z]]
    return total


@njit(cache=True, nogil=True, inline="always")
def _pick_leaf(tree, P, n_leaves, r):
    node = 1
    while node < P:
        node <<= 1
        if r >= tree[node]:
            r -= tree[node]
            node += 1
    leaf = node - P
    if leaf >= n_leaves or tree[node] <= 0.0:
        # float round-off pushed the search past the last positive leaf
        for i in range(n_leaves):
            if tree[P + i] > 0.0:
                return i
    return leaf


# -- event loop -----------------------------------------------------------------


@njit(cache=True, nogil=True)
def advance(
    occ,
    g_tab,
    K_max,
    shifts,
    d,
    m,
    tree,
    P,
    n_leaves,
    rng,
    t_start,
    t_end,
    max_events,
    s_g,
):
    """Run the exponential-clock dynamics from t_start toward t_end (micro time).

    Returns (status, n_events, t, g_integral, s_g, last_src, last_dst, last_dt)
    with g_integral the integral of sum_x g(eta(x)) dt over the advanced span.
    """
    t = t_start
    g_int = 0.0
    n_events = 0
    last_src = -1
    last_dst = -1
    last_dt = 0.0
    if m == 1:
        off_lo, off_hi = -1, 0
    elif m == 2:
        off_lo, off_hi = -2, 1
    else:
        off_lo, off_hi = -3, 2
    while True:
        lam = tree[1]
        if lam <= 0.0:
            if t_end < np.inf:
                g_int += s_g * (t_end - t)
                t = t_end
            return STATUS_BLOCKED, n_events, t, g_int, s_g, last_src, last_dst, last_dt
        if n_events >= max_events:
            return STATUS_MAX_EVENTS, n_events, t, g_int, s_g, last_src, last_dst, last_dt
        dt = -math.log1p(-_next_double(rng)) / lam
        if t + dt > t_end:
            g_int += s_g * (t_end - t)
            t = t_end
            return STATUS_DONE, n_events, t, g_int, s_g, last_src, last_dst, last_dt
        leaf = _pick_leaf(tree, P, n_leaves, _next_double(rng) * lam)
        bond = leaf >> 1
        z = bond // d
        a = bond % d
        if leaf & 1 == 0:
            src, dst = z, shifts[a, OFF0 + 1, z]
        else:
            src, dst = shifts[a, OFF0 + 1, z], z
        if occ[dst] + 1 > K_max:
            return STATUS_CAP, n_events, t, g_int, s_g, src, dst, dt
        g_int += s_g * dt
        t += dt
        occ[src] -= 1
        occ[dst] += 1
        s_g += (
            g_tab[occ[src]]
            - g_tab[occ[src] + 1]
            + g_tab[occ[dst]]
            - g_tab[occ[dst] - 1]
        )
        for w in (src, dst):
            for a2 in range(d):
                for off in range(off_lo, off_hi + 1):
                    z2 = shifts[a2, OFF0 + off, w]
                    fwd, bwd = _bond_pair_rates(occ, g_tab, shifts, z2, a2, m)
                    _write_bond(tree, P, z2, a2, d, fwd, bwd)
        n_events += 1
        last_src = src
        last_dst = dst
        last_dt = dt
