"""Jump-intensity functions g, the constrained rate kernels, and bond diagnostics.

Three built-in g families are supported together with user-supplied tables:

* example1(q):  g(k) = k/(q+k-1)
* example2(beta): g(1) = 1, g(k) = (k/(k-1))**beta
* example3(gamma): g(k) = k**gamma

All satisfy g(0) = 0, g(k) > 0 for k >= 1, and the square-growth bound
g(k)^2 <= b*k for a finite b. A particle at x jumps to x+e_j at rate
c(x, x+e_j, eta) * g(eta(x)) where the constraint factor c depends on the
occupancies around the bond and vanishes on blocked neighborhoods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration, shift_site

DEFAULT_K_MAX = 4096


class GFunction:
    """A jump-intensity sequence g with cached values and log-factorials."""

    def __init__(self, kind, params, values, K_max, condition_G, psi_star):
        self.kind = kind
        self.params = dict(params)
        self.K_max = int(K_max)
        self.condition_G = bool(condition_G)
        self.psi_star = float(psi_star)
        v = np.asarray(values, dtype=np.float64)
        if v[0] != 0.0:
            raise ValueError("g(0) must be 0")
        if np.any(v[1:] <= 0.0):
            raise ValueError("g(k) must be positive for all k >= 1")
        self.values = v
        # log g(k)! = sum_{j<=k} log g(j), with g(0)! = 1
        self.log_factorials = np.concatenate([[0.0], np.cumsum(np.log(v[1:]))])

    # -- constructors ------------------------------------------------------

    @classmethod
    def example1(cls, q: float, K_max: int = DEFAULT_K_MAX) -> "GFunction":
        """g(k) = k/(q+k-1); partition function (1-psi)^(-q), psi* = 1."""
        if q <= 0:
            raise ValueError(f"example1 requires q > 0, got {q}")
        k = np.arange(K_max + 1, dtype=np.float64)
        v = np.zeros(K_max + 1)
        v[1:] = k[1:] / (q + k[1:] - 1.0)
        return cls("example1", {"q": q}, v, K_max, condition_G=True, psi_star=1.0)

    @classmethod
    def example2(cls, beta: float, K_max: int = DEFAULT_K_MAX) -> "GFunction":
        """g(1)=1, g(k)=(k/(k-1))**beta; g(k)! = k**beta, psi* = 1."""
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"example2 requires beta in [0,1], got {beta}")
        k = np.arange(K_max + 1, dtype=np.float64)
        v = np.zeros(K_max + 1)
        v[1] = 1.0
        v[2:] = (k[2:] / (k[2:] - 1.0)) ** beta
        return cls("example2", {"beta": beta}, v, K_max, condition_G=True, psi_star=1.0)

    @classmethod
    def example3(cls, gamma: float, K_max: int = DEFAULT_K_MAX) -> "GFunction":
        """g(k) = k**gamma with 0 < gamma <= 1/2; psi* = infinity."""
        if not 0.0 < gamma <= 0.5:
            raise ValueError(f"example3 requires gamma in (0, 1/2], got {gamma}")
        k = np.arange(K_max + 1, dtype=np.float64)
        v = np.zeros(K_max + 1)
        v[1:] = k[1:] ** gamma
        return cls("example3", {"gamma": gamma}, v, K_max, condition_G=True, psi_star=math.inf)

    @classmethod
    def tabulated(cls, values, psi_star: float = math.inf, condition_G: bool | None = None) -> "GFunction":
        """g given as an explicit table g(0..K); g(0)=0 must be supplied.

        condition_G=None applies a growth heuristic: the table is flagged as
        violating the square-growth condition when max g(k)^2/k over the top
        half of the table exceeds the bottom-half maximum (still growing).
        """
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("tabulated g needs at least g(0) and g(1)")
        K_max = v.size - 1
        if condition_G is None:
            k = np.arange(1, K_max + 1, dtype=np.float64)
            ratio = v[1:] ** 2 / k
            half = max(1, K_max // 2)
            condition_G = ratio[half:].max(initial=0.0) <= ratio[:half].max() * (1 + 1e-9)
        return cls("tabulated", {}, v, K_max, condition_G=condition_G, psi_star=psi_star)

    @classmethod
    def from_file(cls, path, **kwargs) -> "GFunction":
        """Load a tabulated g from a two-column `k g(k)` file, ascending from 0."""
        data = np.loadtxt(path, ndmin=2)
        ks = data[:, 0].astype(int)
        if not np.array_equal(ks, np.arange(len(ks))):
            raise ValueError("g table must list k = 0, 1, 2, ... in order")
        return cls.tabulated(data[:, 1], **kwargs)

    # -- evaluation --------------------------------------------------------

    def __call__(self, k: int) -> float:
        return g_value(self, k)

    def extended_values(self, K: int) -> np.ndarray:
        """g(k) for k = 0..K, evaluating the formula past the cached cap."""
        if K <= self.K_max:
            return self.values[: K + 1]
        if self.kind == "tabulated":
            raise ValueError(f"tabulated g has no values beyond k = {self.K_max}")
        return np.array([g_value(self, k) for k in range(K + 1)])

    def extended_log_factorials(self, K: int) -> np.ndarray:
        """log g(k)! for k = 0..K, recomputed from the formula when K > K_max.

        Pure function of the family; tabulated g cannot extend beyond its table.
        """
        if K <= self.K_max:
            return self.log_factorials[: K + 1]
        if self.kind == "tabulated":
            raise ValueError(f"tabulated g has no values beyond k = {self.K_max}")
        k = np.arange(K + 1, dtype=np.float64)
        if self.kind == "example1":
            q = self.params["q"]
            logg = np.log(k[1:]) - np.log(q + k[1:] - 1.0)
        elif self.kind == "example2":
            beta = self.params["beta"]
            logg = np.zeros(K)
            logg[1:] = beta * (np.log(k[2:]) - np.log(k[2:] - 1.0))
        else:
            logg = self.params["gamma"] * np.log(k[1:])
        return np.concatenate([[0.0], np.cumsum(logg)])

    def label(self) -> str:
        parts = [self.kind] + [f"{k}={v:g}" for k, v in self.params.items()]
        return " ".join(parts)


def g_value(gf: GFunction, k: int) -> float:
    """g(k); beyond the cached cap the analytic families evaluate the formula."""
    if k < 0:
        raise ValueError("occupancy must be non-negative")
    if k <= gf.K_max:
        return float(gf.values[k])
    if gf.kind == "example1":
        return k / (gf.params["q"] + k - 1.0)
    if gf.kind == "example2":
        return (k / (k - 1.0)) ** gf.params["beta"]
    if gf.kind == "example3":
        return float(k) ** gf.params["gamma"]
    raise ValueError(f"tabulated g has no value beyond k = {gf.K_max}")


def condition_G_constant(gf: GFunction, K_max: int | None = None) -> float:
    """Empirical square-growth constant b = max_{1<=k<=K_max} g(k)^2 / k."""
    K = gf.K_max if K_max is None else min(K_max, gf.K_max)
    if K < 1:
        raise ValueError("need K_max >= 1")
    k = np.arange(1, K + 1, dtype=np.float64)
    return float(np.max(gf.values[1 : K + 1] ** 2 / k))


@dataclass(frozen=True)
class Kernel:
    """Constraint kernel selecting the hydrodynamic nonlinearity exponent m.

    m=2 and m=3 are the degenerate constrained kernels; m=1 is the
    unconstrained zero-range baseline (c == 1).
    """

    m: int

    def __post_init__(self):
        if self.m not in (1, 2, 3):
            raise ValueError(f"kernel exponent m must be 1, 2 or 3, got {self.m}")

    @classmethod
    def zero_range(cls) -> "Kernel":
        return cls(m=1)

    @property
    def stencil_radius(self) -> int:
        return {1: 1, 2: 2, 3: 3}[self.m]

    @property
    def min_side(self) -> int:
        """Smallest torus side on which the stencil has no self-overlap."""
        return {1: 3, 2: 5, 3: 7}[self.m]


def constraint(gf: GFunction, kernel: Kernel, config: Configuration, x, j: int) -> float:
    """c(x, x+e_j, eta): the symmetric constraint factor of the bond."""
    geo = config.geometry
    xi = geo.as_index(x)
    occ = config.occupancy
    g = gf.values

    def at(off):
        return g[occ[shift_site(geo, xi, j, off)]]

    if kernel.m == 1:
        return 1.0
    if kernel.m == 2:
        return float(at(-1) + at(+2))
    a, b = at(-1), at(+2)
    return float(a * b + at(-2) * a + b * at(+3))


def bond_rate(gf: GFunction, kernel: Kernel, config: Configuration, x, j: int) -> float:
    """Rate at which one particle jumps x -> x+e_j."""
    geo = config.geometry
    xi = geo.as_index(x)
    k = config.occupancy[xi]
    if k > gf.K_max:
        raise ValueError(f"occupancy {k} exceeds the g-table cap {gf.K_max}")
    if k == 0:
        return 0.0
    return constraint(gf, kernel, config, xi, j) * float(gf.values[k])


def p_j(gf: GFunction, config: Configuration, x, j: int, kernel: Kernel | None = None) -> float:
    """Cylinder diagnostic p centered at x (m=2 dynamics only)."""
    _require_m2(kernel)
    geo = config.geometry
    xi = geo.as_index(x)
    occ, g = config.occupancy, gf.values
    g0 = g[occ[xi]]
    gp = g[occ[shift_site(geo, xi, j, +1)]]
    gm = g[occ[shift_site(geo, xi, j, -1)]]
    return float(g0 * gp + g0 * gm - gp * gm)


def q_j(gf: GFunction, config: Configuration, x, j: int, kernel: Kernel | None = None) -> float:
    """Cylinder diagnostic q centered at x: c(x, x+e_j) * (g(eta(x)) + g(eta(x+e_j)))."""
    _require_m2(kernel)
    geo = config.geometry
    xi = geo.as_index(x)
    occ, g = config.occupancy, gf.values
    c = constraint(gf, Kernel(2), config, xi, j)
    return float(c * (g[occ[xi]] + g[occ[shift_site(geo, xi, j, +1)]]))


def _require_m2(kernel: Kernel | None):
    if kernel is not None and kernel.m != 2:
        raise ValueError("p_j/q_j diagnostics are defined for the m=2 kernel only")


def gradient_mismatch(gf: GFunction, config: Configuration, x, j: int) -> float:
    """|W(x) - (p(x) - p(x+e_j))| for the m=2 gradient decomposition.

    W(x) = c(x, x+e_j, eta) * (g(eta(x)) - g(eta(x+e_j))).
    """
    geo = config.geometry
    xi = geo.as_index(x)
    occ, g = config.occupancy, gf.values
    c = constraint(gf, Kernel(2), config, xi, j)
    w = c * (g[occ[xi]] - g[occ[shift_site(geo, xi, j, +1)]])
    diff = p_j(gf, config, xi, j) - p_j(gf, config, shift_site(geo, xi, j, +1), j)
    return abs(float(w) - diff)


def check_gradient_identity(gf: GFunction, config: Configuration, x, j: int, tol: float = 1e-12) -> bool:
    """True iff the m=2 gradient identity holds at (x, j) within tol."""
    return gradient_mismatch(gf, config, x, j) <= tol
