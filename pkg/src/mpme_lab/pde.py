"""Explicit finite-difference solver for the degenerate diffusion limit.

The density solves d_t rho = Laplacian(Phi(rho)^m) on the unit torus. The
scheme is forward Euler on w = Phi(rho)^m with the standard second-order
periodic Laplacian; under the CFL bound dt <= h^2/(2 d D_max) it is
monotone, so discrete mass is conserved exactly (telescoping) and the
solution stays inside the initial bounds [delta0, delta1].

Phi is evaluated through a monotone piecewise-cubic table so the inner
loop never root-finds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

from .measures import DensityProfile, EquilibriumFamily

PHI_TABLE_KNOTS = 4096
CFL_SAFETY = 0.4


@dataclass
class GridFunction:
    """Real-valued periodic field on an M^d grid (row-major values)."""

    d: int
    M: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.M,) * self.d:
            self.values = self.values.reshape((self.M,) * self.d)

    @property
    def h(self) -> float:
        return 1.0 / self.M

    def integral(self) -> float:
        """Discrete integral M^-d sum of values."""
        return float(self.values.mean())

    def copy(self) -> "GridFunction":
        return GridFunction(self.d, self.M, self.values.copy())

    def l1_distance(self, other: "GridFunction") -> float:
        if (self.d, self.M) != (other.d, other.M):
            raise ValueError("grids do not match")
        return float(np.abs(self.values - other.values).mean())


def periodic_laplacian(values: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(values)
    for axis in range(values.ndim):
        out += np.roll(values, -1, axis) - 2.0 * values + np.roll(values, 1, axis)
    return out / h**2


class MpmeProblem:
    """Degenerate diffusion problem: family, exponent m, bounded initial data."""

    def __init__(self, fam: EquilibriumFamily, m: int, initial: DensityProfile, horizon: float = 1.0):
        if m not in (2, 3):
            raise ValueError(f"nonlinearity exponent must be 2 or 3, got {m}")
        if initial.delta0 <= 0:
            raise ValueError("initial profile must be bounded away from zero")
        self.fam = fam
        self.m = m
        self.initial = initial
        self.horizon = float(horizon)
        self.delta0 = initial.delta0
        self.delta1 = initial.delta1

    @cached_property
    def _phi_table(self) -> PchipInterpolator:
        lo, hi = 0.5 * self.delta0, 2.0 * self.delta1
        rho = np.linspace(lo, hi, PHI_TABLE_KNOTS)
        psi = self.fam.phi_grid(rho)
        return PchipInterpolator(rho, psi)

    @cached_property
    def _phi_derivative(self):
        return self._phi_table.derivative()

    def phi_of(self, rho: np.ndarray) -> np.ndarray:
        table = self._phi_table
        lo, hi = table.x[0], table.x[-1]
        if np.any(rho < lo - 1e-12) or np.any(rho > hi + 1e-12):
            raise ValueError(
                f"density left the tabulated range [{lo}, {hi}]; bounds were violated"
            )
        return table(rho)

    def diffusion_of(self, rho: np.ndarray, m: int | None = None) -> np.ndarray:
        """D(rho) = m Phi^(m-1) Phi' on the grid, via the interpolation table."""
        m = self.m if m is None else m
        phi = self.phi_of(rho)
        return m * phi ** (m - 1) * self._phi_derivative(rho)

    def cfl_dt(self, rho: np.ndarray, h: float, m: int | None = None) -> float:
        d_max = float(np.max(self.diffusion_of(rho, m)))
        if d_max <= 0:
            return self.horizon
        return h**2 / (2.0 * rho.ndim * d_max)

    def initial_grid(self, M: int, d: int | None = None) -> GridFunction:
        d = self.initial.d if d is None else d
        return GridFunction(d, M, self.initial.on_grid(M, d))


def mpme_step(problem: MpmeProblem, rho: GridFunction, dt: float, m: int | None = None) -> GridFunction:
    """One explicit step rho += dt * Laplacian(Phi(rho)^m); checks the CFL bound."""
    m = problem.m if m is None else m
    bound = problem.cfl_dt(rho.values, rho.h, m)
    if dt > bound * (1.0 + 1e-12):
        raise ValueError(f"time step {dt} violates the CFL bound {bound}")
    w = problem.phi_of(rho.values) ** m
    values = rho.values + dt * periodic_laplacian(w, rho.h)
    return GridFunction(rho.d, rho.M, values)


def _solve(problem: MpmeProblem, M: int, times, d: int, m: int):
    times = sorted(float(t) for t in times)
    if times and times[-1] > problem.horizon + 1e-12:
        raise ValueError(f"requested time {times[-1]} beyond the horizon {problem.horizon}")
    rho = problem.initial_grid(M, d)
    out = {}
    t = 0.0
    for target in times:
        while t < target - 1e-14:
            dt = min(CFL_SAFETY * problem.cfl_dt(rho.values, rho.h, m), target - t)
            rho = mpme_step(problem, rho, dt, m)
            t += dt
        out[target] = rho.copy()
    return out


def solve(problem: MpmeProblem, M: int, t: float, d: int | None = None) -> GridFunction:
    """rho(t, .) on an M-point grid by repeated explicit steps."""
    if M < 16:
        raise ValueError("grid must have at least 16 points per dimension")
    d = problem.initial.d if d is None else d
    return _solve(problem, M, [t], d, problem.m)[float(t)]


def solve_times(problem: MpmeProblem, M: int, times, d: int | None = None) -> dict:
    """Solutions at several times from a single sweep."""
    d = problem.initial.d if d is None else d
    return _solve(problem, M, times, d, problem.m)


def zero_range_reference(problem: MpmeProblem, M: int, t: float, d: int | None = None) -> GridFunction:
    """Same scheme with flux Phi(rho) (m=1): the unconstrained baseline."""
    d = problem.initial.d if d is None else d
    return _solve(problem, M, [t], d, 1)[float(t)]


def zero_range_reference_times(problem: MpmeProblem, M: int, times, d: int | None = None) -> dict:
    d = problem.initial.d if d is None else d
    return _solve(problem, M, times, d, 1)


def cosine_decay_rate(fam: EquilibriumFamily, a0: float, wavevector: int = 1) -> float:
    """Linearized decay rate 4 pi^2 k^2 Phi'(a0) of the zero-range cosine mode."""
    h = 1e-6 * (1.0 + a0)
    dphi = (fam.phi(a0 + h) - fam.phi(a0 - h)) / (2.0 * h)
    return 4.0 * math.pi**2 * wavevector**2 * dphi


def write_grid_csv(path, grid: GridFunction, header_lines=()) -> None:
    """CSV `u1[,u2],rho` in row-major order, with optional comment header."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        cols = [f"u{i + 1}" for i in range(grid.d)] + ["rho"]
        fh.write(",".join(cols) + "\n")
        coords = np.stack([g.ravel() for g in np.indices(grid.values.shape)], axis=1) / grid.M
        for pt, v in zip(coords, grid.values.ravel()):
            fh.write(",".join(repr(float(c)) for c in pt) + f",{float(v)!r}\n")
