"""Exact finite-state analysis of the fixed-particle-number hyperplanes.

Configurations with k particles on n sites are weak compositions of k;
they are ranked lexicographically (first site major) through the stars
and bars bijection, enumerated exhaustively, and the allowed-move graph
is decomposed into connected components with union-find. Small tori only:
the hyperplane size C(k+n-1, n-1) is capped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration, TorusGeometry, shift_site
from .rates import GFunction, Kernel, bond_rate, constraint
from .simulator import blocked_by_pattern_1d, find_mobile_cluster

MAX_HYPERPLANE = 10_000_000


def hyperplane_size(geometry: TorusGeometry, k: int) -> int:
    n = geometry.site_count
    return math.comb(k + n - 1, n - 1)


def _check_enumerable(geometry: TorusGeometry, k: int) -> int:
    if k < 0:
        raise ValueError("particle count must be non-negative")
    size = hyperplane_size(geometry, k)
    if size > MAX_HYPERPLANE:
        raise ValueError(f"hyperplane has {size} configurations, cap is {MAX_HYPERPLANE}")
    return size


def rank_configuration(occ, k: int) -> int:
    """Lexicographic rank of a weak composition of k (first entry major, descending)."""
    n = len(occ)
    rem = k
    r = 0
    for i in range(n - 1):
        a = occ[i]
        # compositions with entry i strictly greater than a come first
        for v in range(a + 1, rem + 1):
            r += math.comb(rem - v + n - i - 2, n - i - 2)
        rem -= a
    return r


def unrank_configuration(r: int, n: int, k: int) -> np.ndarray:
    """Inverse of rank_configuration."""
    occ = np.zeros(n, dtype=np.int64)
    rem = k
    for i in range(n - 1):
        for v in range(rem, -1, -1):
            block = math.comb(rem - v + n - i - 2, n - i - 2)
            if r < block:
                occ[i] = v
                rem -= v
                break
            r -= block
    occ[n - 1] = rem
    return occ


def enumerate_hyperplane(geometry: TorusGeometry, k: int):
    """Yield every occupancy vector with total k, in rank order."""
    size = _check_enumerable(geometry, k)
    n = geometry.site_count
    occ = np.zeros(n, dtype=np.int64)
    occ[0] = k
    yield occ.copy()
    for _ in range(size - 1):
        # next composition in descending-first-entry lexicographic order:
        # move one particle from the rightmost positive non-final entry
        # rightward, gathering everything beyond it
        j = n - 2
        while occ[j] == 0:
            j -= 1
        tail = occ[j + 1 :].sum()
        occ[j] -= 1
        occ[j + 1 :] = 0
        occ[j + 1] = tail + 1
        yield occ.copy()


def _allowed_moves(gf: GFunction, kernel: Kernel, config: Configuration):
    """(target occupancy, x, y, rate) for every positive-rate directed move."""
    geo = config.geometry
    occ = config.occupancy
    for x in range(geo.site_count):
        if occ[x] == 0:
            continue
        for j in range(1, geo.d + 1):
            for sign in (+1, -1):
                y = shift_site(geo, x, j, sign)
                rate = _directed_rate(gf, kernel, config, x, j, sign)
                if rate > 0.0:
                    nxt = occ.copy()
                    nxt[x] -= 1
                    nxt[y] += 1
                    yield nxt, x, y, rate


def _directed_rate(gf: GFunction, kernel: Kernel, config: Configuration, x: int, j: int, sign: int) -> float:
    """Rate of the jump x -> x + sign*e_j."""
    if sign == +1:
        return bond_rate(gf, kernel, config, x, j)
    return _reverse_bond_rate(gf, kernel, config, x, j)


def _reverse_bond_rate(gf: GFunction, kernel: Kernel, config: Configuration, x: int, j: int) -> float:
    """Rate of the jump x -> x-e_j: constraint of the bond (x-e_j, x), g at x."""
    geo = config.geometry
    z = shift_site(geo, x, j, -1)
    k = config.occupancy[x]
    if k == 0:
        return 0.0
    return constraint(gf, kernel, config, z, j) * float(gf.values[k])


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


@dataclass
class HyperplaneDecomposition:
    geometry: TorusGeometry
    k: int
    m: int
    g_label: str
    size: int
    components: list  # list of sorted rank lists
    blocked: list  # ranks with zero total exit rate

    @property
    def component_count(self) -> int:
        return len(self.components)

    @property
    def blocked_count(self) -> int:
        return len(self.blocked)

    def component_of(self, rank: int) -> int:
        for i, comp in enumerate(self.components):
            if rank in comp:
                return i
        raise KeyError(rank)

    def partition_signature(self):
        """Frozen set-of-frozensets form, for comparing across g families."""
        return frozenset(frozenset(c) for c in self.components)


def decompose_components(
    geometry: TorusGeometry, k: int, fam_or_gf, kernel: Kernel
) -> HyperplaneDecomposition:
    """Connected components of the allowed-move graph on the k-particle hyperplane."""
    gf = _as_gf(fam_or_gf)
    size = _check_enumerable(geometry, k)
    uf = _UnionFind(size)
    blocked = []
    for rank, occ in enumerate(enumerate_hyperplane(geometry, k)):
        config = Configuration(geometry, occ)
        exit_rate = 0.0
        for nxt, _x, _y, rate in _allowed_moves(gf, kernel, config):
            exit_rate += rate
            uf.union(rank, rank_configuration(nxt, k))
        if exit_rate == 0.0:
            blocked.append(rank)
    groups: dict[int, list[int]] = {}
    for r in range(size):
        groups.setdefault(uf.find(r), []).append(r)
    components = sorted((sorted(g) for g in groups.values()), key=lambda c: c[0])
    return HyperplaneDecomposition(
        geometry=geometry,
        k=k,
        m=kernel.m,
        g_label=gf.label(),
        size=size,
        components=components,
        blocked=blocked,
    )


def verify_sigma_star(geometry: TorusGeometry, k: int, fam_or_gf, kernel: Kernel) -> bool:
    """True iff every configuration holding an occupied 2-hypercube lies in one component."""
    decomp = decompose_components(geometry, k, fam_or_gf, kernel)
    return sigma_star_single_component(decomp)


def sigma_star_single_component(decomp: HyperplaneDecomposition) -> bool:
    star_ranks = [
        rank
        for rank, occ in enumerate(enumerate_hyperplane(decomp.geometry, decomp.k))
        if find_mobile_cluster(Configuration(decomp.geometry, occ)) is not None
    ]
    if not star_ranks:
        return True
    rank_to_comp = {}
    for ci, comp in enumerate(decomp.components):
        for r in comp:
            rank_to_comp[r] = ci
    return len({rank_to_comp[r] for r in star_ranks}) == 1


def count_blocked(geometry: TorusGeometry, k: int, fam_or_gf, kernel: Kernel) -> int:
    """Configurations with zero total exit rate; cross-checked combinatorially in d=1."""
    gf = _as_gf(fam_or_gf)
    _check_enumerable(geometry, k)
    count = 0
    pattern_count = 0
    for occ in enumerate_hyperplane(geometry, k):
        config = Configuration(geometry, occ)
        exit_rate = sum(rate for *_ignored, rate in _allowed_moves(gf, kernel, config))
        if exit_rate == 0.0:
            count += 1
        if geometry.d == 1 and blocked_by_pattern_1d(config, kernel.m):
            pattern_count += 1
    if geometry.d == 1 and pattern_count != count:
        raise RuntimeError(
            f"blocked counts disagree: rates say {count}, pattern criterion says {pattern_count}"
        )
    return count


def check_detailed_balance(
    geometry: TorusGeometry, k: int, fam_or_gf, kernel: Kernel, psi: float
) -> float:
    """Max |w(eta) rate(eta->eta') - w(eta') rate(eta'->eta)| over all transitions.

    w is the unnormalized product weight psi^eta(x)/g(eta(x))!.
    """
    gf = _as_gf(fam_or_gf)
    if not 0.0 < psi < gf.psi_star:
        raise ValueError(f"fugacity must lie in (0, {gf.psi_star})")
    _check_enumerable(geometry, k)
    logpsi = math.log(psi)

    def weight(occ):
        return math.exp(sum(occ[x] * logpsi - gf.log_factorials[occ[x]] for x in range(len(occ))))

    worst = 0.0
    for occ in enumerate_hyperplane(geometry, k):
        config = Configuration(geometry, occ)
        w_here = weight(occ)
        for nxt, x, y, rate in _allowed_moves(gf, kernel, config):
            back_config = Configuration(geometry, nxt)
            back_rate = _rate_between(gf, kernel, back_config, y, x)
            if back_rate == 0.0:
                raise RuntimeError("one-way transition found; reversibility broken")
            flow = w_here * rate
            back_flow = weight(nxt) * back_rate
            worst = max(worst, abs(flow - back_flow))
    return worst


def _rate_between(gf: GFunction, kernel: Kernel, config: Configuration, x: int, y: int) -> float:
    """Rate of the specific jump x -> y (nearest neighbors)."""
    geo = config.geometry
    for j in range(1, geo.d + 1):
        if shift_site(geo, x, j, +1) == y:
            return bond_rate(gf, kernel, config, x, j)
        if shift_site(geo, x, j, -1) == y:
            return _reverse_bond_rate(gf, kernel, config, x, j)
    raise ValueError(f"sites {x} and {y} are not neighbors")


def hyperplane_report(
    geometry: TorusGeometry, k: int, fam_or_gf, kernel: Kernel, psi: float = 0.5
) -> dict:
    """JSON-ready summary of the hyperplane structure."""
    gf = _as_gf(fam_or_gf)
    decomp = decompose_components(geometry, k, gf, kernel)
    return {
        "N": geometry.N,
        "d": geometry.d,
        "k": k,
        "m": kernel.m,
        "g_family": gf.label(),
        "hyperplane_size": decomp.size,
        "component_count": decomp.component_count,
        "blocked_count": decomp.blocked_count,
        "sigma_star_single_component": sigma_star_single_component(decomp),
        "max_detailed_balance_violation": check_detailed_balance(geometry, k, gf, kernel, psi),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def _as_gf(fam_or_gf) -> GFunction:
    return fam_or_gf.gf if hasattr(fam_or_gf, "gf") else fam_or_gf
