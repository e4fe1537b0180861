"""Event-driven continuous-time dynamics of the constrained lattice gas.

The generator is realized by the standard exponential-clock construction:
wait Exp(total rate), pick a directed bond with probability proportional
to its rate, move one particle, refresh the rates whose stencil touches
the jump. Macroscopic time runs at speed N^2 (diffusive scaling), so
micro_time = N^2 * macro_time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .lattice import Configuration, TorusGeometry, shift_tables
from .measures import EquilibriumFamily
from .pde import GridFunction
from .rates import Kernel

REBUILD_INTERVAL = 1_000_000  # full rate rebuild cadence, bounds float drift
DEFAULT_OBSERVER_STEPS = 50


class BlockedError(RuntimeError):
    """The dynamics sits in an absorbing configuration (total rate zero)."""


class OccupancyCapError(RuntimeError):
    """Some site exceeded the g-table cap K_max during simulation."""


@dataclass
class RateTable:
    """Directed-bond rates in a binary partial-sum tree; tree[1] is the total."""

    tree: np.ndarray
    P: int
    n_leaves: int

    @classmethod
    def build(cls, occ, g_tab, shifts, d, m) -> "RateTable":
        n_leaves = 2 * d * occ.size
        P = 1
        while P < n_leaves:
            P *= 2
        tree = np.zeros(2 * P)
        _kernels.rebuild_tree(occ, g_tab, shifts, d, m, tree, P)
        return cls(tree, P, n_leaves)

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    def leaf_rates(self) -> np.ndarray:
        return self.tree[self.P : self.P + self.n_leaves].copy()

    def directed_rate(self, x: int, j: int, forward: bool, d: int) -> float:
        leaf = (x * d + (j - 1)) * 2 + (0 if forward else 1)
        return float(self.tree[self.P + leaf])


@dataclass
class SimState:
    """One trajectory: configuration, rates, clock, and its private RNG."""

    fam: EquilibriumFamily
    kernel: Kernel
    config: Configuration
    seed: int
    rates: RateTable
    rng_state: np.ndarray
    micro_time: float = 0.0
    event_count: int = 0
    events_since_rebuild: int = 0
    g_integral: float = 0.0  # integral of sum_x g(eta(x)) over micro time
    s_g: float = 0.0
    _shifts: np.ndarray = field(default=None, repr=False)

    @property
    def geometry(self) -> TorusGeometry:
        return self.config.geometry

    @property
    def macro_time(self) -> float:
        return self.micro_time / self.geometry.N**2

    @property
    def total_rate(self) -> float:
        return self.rates.total_rate


@dataclass(frozen=True)
class EventRecord:
    x: int
    y: int
    dt_micro: float


def init_sim(fam: EquilibriumFamily, kernel: Kernel, config: Configuration, seed: int) -> SimState:
    """Build the full rate table for a configuration and seed the trajectory RNG."""
    geo = config.geometry
    if geo.N < kernel.min_side:
        raise ValueError(
            f"torus side {geo.N} too small for the m={kernel.m} stencil (need >= {kernel.min_side})"
        )
    if not fam.gf.condition_G:
        raise ValueError("g family violates the square-growth condition; simulator refuses it")
    K_max = fam.gf.K_max
    if int(config.occupancy.max(initial=0)) > K_max:
        raise OccupancyCapError(f"initial occupancy exceeds the g-table cap {K_max}")
    cfg = config.copy()
    shifts = shift_tables(geo)
    table = RateTable.build(cfg.occupancy, fam.gf.values, shifts, geo.d, kernel.m)
    state = SimState(
        fam=fam,
        kernel=kernel,
        config=cfg,
        seed=seed,
        rates=table,
        rng_state=_kernels.seed_rng_state(seed),
        s_g=float(_kernels.g_sum(cfg.occupancy, fam.gf.values)),
        _shifts=shifts,
    )
    return state


def rebuild_rates(state: SimState) -> float:
    """Recompute every rate from scratch; returns the max leaf discrepancy."""
    before = state.rates.leaf_rates()
    _kernels.rebuild_tree(
        state.config.occupancy,
        state.fam.gf.values,
        state._shifts,
        state.geometry.d,
        state.kernel.m,
        state.rates.tree,
        state.rates.P,
    )
    state.s_g = float(_kernels.g_sum(state.config.occupancy, state.fam.gf.values))
    state.events_since_rebuild = 0
    return float(np.max(np.abs(before - state.rates.leaf_rates()), initial=0.0))


def _advance(state: SimState, t_end_micro: float, max_events: int):
    status, n_ev, t, g_int, s_g, src, dst, dt = _kernels.advance(
        state.config.occupancy,
        state.fam.gf.values,
        state.fam.gf.K_max,
        state._shifts,
        state.geometry.d,
        state.kernel.m,
        state.rates.tree,
        state.rates.P,
        state.rates.n_leaves,
        state.rng_state,
        state.micro_time,
        t_end_micro,
        max_events,
        state.s_g,
    )
    state.micro_time = t
    state.event_count += n_ev
    state.events_since_rebuild += n_ev
    state.g_integral += g_int
    state.s_g = s_g
    if status == _kernels.STATUS_CAP:
        raise OccupancyCapError(
            f"occupancy at site {dst} would exceed the cap {state.fam.gf.K_max}"
        )
    return status, src, dst, dt


def step(state: SimState) -> EventRecord:
    """Execute exactly one jump; raises BlockedError in an absorbing state."""
    status, src, dst, dt = _advance(state, math.inf, max_events=1)
    if status == _kernels.STATUS_BLOCKED:
        raise BlockedError("configuration is blocked: no move has positive rate")
    return EventRecord(x=src, y=dst, dt_micro=dt)


def run_until_macro(state: SimState, t: float, observers=(), grid_step: float | None = None) -> SimState:
    """Advance to absolute macro time t, firing observers on a uniform grid.

    Observers fire at macro times t0, t0+step, ..., t (default step (t-t0)/50).
    A blocked state stops event generation but not the clock: remaining grid
    times still fire on the frozen configuration.
    """
    t0 = state.macro_time
    if t < t0 - 1e-15:
        raise ValueError(f"target macro time {t} is in the past (now {t0})")
    micro_scale = state.geometry.N**2
    if not observers:
        if t > t0:
            _advance_to_micro(state, t * micro_scale)
        return state
    for obs in observers:
        obs(state)
    if t <= t0:
        return state
    if grid_step is None:
        grid_step = (t - t0) / DEFAULT_OBSERVER_STEPS
    n_steps = max(1, math.ceil((t - t0) / grid_step - 1e-9))
    for i in range(1, n_steps + 1):
        target = t if i == n_steps else t0 + i * grid_step
        _advance_to_micro(state, target * micro_scale)
        for obs in observers:
            obs(state)
    return state


def _advance_to_micro(state: SimState, micro_target: float):
    while True:
        budget = REBUILD_INTERVAL - state.events_since_rebuild
        if budget <= 0:
            rebuild_rates(state)
            continue
        status, *_ = _advance(state, micro_target, max_events=budget)
        if status == _kernels.STATUS_MAX_EVENTS:
            rebuild_rates(state)
            continue
        return


def is_blocked(state: SimState) -> bool:
    """True iff the total rate vanishes; cross-checked combinatorially in d=1."""
    blocked = state.total_rate == 0.0
    if state.geometry.d == 1:
        pattern = blocked_by_pattern_1d(state.config, state.kernel.m)
        if pattern != blocked:
            raise RuntimeError(
                "rate table and combinatorial blockedness criterion disagree "
                f"(rates say {blocked}, pattern says {pattern})"
            )
    return blocked


def blocked_by_pattern_1d(config: Configuration, m: int) -> bool:
    """Occupancy-pattern blockedness test on the 1-d torus.

    m=2: blocked iff no two nonempty sites sit at distance one or two,
    i.e. no window of 3 consecutive sites holds 2 nonempty ones.
    m=3: blocked iff no window of 4 consecutive sites holds 3 nonempty ones
    (the three-site patterns that light up some product in the constraint).
    m=1 (zero range): blocked iff empty.
    """
    if config.geometry.d != 1:
        raise ValueError("pattern criterion is defined for d=1")
    mask = (config.occupancy > 0).astype(np.int64)
    if m == 1:
        return not bool(mask.any())
    window, need = (3, 2) if m == 2 else (4, 3)
    counts = sum(np.roll(mask, -s) for s in range(window))
    return not bool(np.any(counts >= need))


def find_mobile_cluster(config: Configuration):
    """A site x whose 2-hypercube {x, x+e} (all axes) is fully occupied, or None."""
    geo = config.geometry
    mask = (config.occupancy > 0).reshape(geo.shape)
    # AND of the mask over all 2^d corner shifts of the size-2 hypercube
    full = np.ones(geo.shape, dtype=bool)
    for corner in range(2**geo.d):
        shifted = mask
        for axis in range(geo.d):
            if (corner >> axis) & 1:
                shifted = np.roll(shifted, -1, axis=axis)
        full &= shifted
    hits = np.flatnonzero(full.ravel())
    return int(hits[0]) if hits.size else None


# -- mollified empirical profiles -----------------------------------------------


@lru_cache(maxsize=32)
def _deposition_matrix(N: int, M: int, w: float) -> np.ndarray:
    """B[c, i] = M * |[c/N - w, c/N + w] ∩ cell_i| / (2w) on the unit circle.

    Row sums are exactly M, which makes the deposited mass exact.
    """
    edges_lo = np.arange(M) / M
    edges_hi = edges_lo + 1.0 / M
    out = np.empty((N, M))
    for c in range(N):
        a, b = c / N - w, c / N + w
        length = np.zeros(M)
        for shift in (-1.0, 0.0, 1.0):
            length += np.maximum(
                0.0, np.minimum(b, edges_hi + shift) - np.maximum(a, edges_lo + shift)
            )
        out[c] = length * M / (2.0 * w)
    return out


def mollified_profile(config: Configuration, w: float, M: int) -> GridFunction:
    """Empirical density smoothed by a periodic box kernel of half-width w.

    Grid values are exact cell averages of the convolution, so the discrete
    integral equals the particle density N^-d * total exactly.
    """
    geo = config.geometry
    if w < 1.0 / geo.N:
        raise ValueError(f"mollifier width {w} below the lattice spacing 1/{geo.N}")
    if w > 0.5:
        raise ValueError("mollifier half-width cannot exceed 1/2 on the unit torus")
    B = _deposition_matrix(geo.N, M, float(w))
    grid = config.grid().astype(np.float64)
    scale = geo.N ** (-geo.d)
    if geo.d == 1:
        values = scale * (grid @ B)
    elif geo.d == 2:
        values = scale * (B.T @ grid @ B)
    elif geo.d == 3:
        values = scale * np.einsum("xi,yj,zk,xyz->ijk", B, B, B, grid)
    else:
        raise ValueError("mollified profiles support d <= 3")
    return GridFunction(d=geo.d, M=M, values=values)


def default_mollifier_width(N: int) -> float:
    """Vanishing-but-coarse default width 2/sqrt(N), clamped to the valid range."""
    return min(0.5, max(1.0 / N, 2.0 / math.sqrt(N)))


def write_observer_csv(path, rows) -> None:
    """Trajectory observer output: rows of (seed, t_macro, site_or_gridpoint, value)."""
    with open(path, "w") as fh:
        fh.write("seed,t_macro,site_or_gridpoint,value\n")
        for seed, t_macro, loc, value in rows:
            fh.write(f"{seed},{t_macro!r},{loc},{value!r}\n")
