import math

import numpy as np
import pytest

from mpme_lab.measures import DensityProfile, EquilibriumFamily
from mpme_lab.pde import (
    GridFunction,
    MpmeProblem,
    cosine_decay_rate,
    mpme_step,
    periodic_laplacian,
    solve,
    solve_times,
    zero_range_reference,
)
from mpme_lab.rates import GFunction


@pytest.fixture(scope="module")
def fam1():
    return EquilibriumFamily(GFunction.example1(q=1.0))


@pytest.fixture(scope="module")
def problem(fam1):
    return MpmeProblem(fam1, m=2, initial=DensityProfile.cosine(1.0, 0.2, 1), horizon=0.25)


def test_laplacian_of_constant_is_zero():
    v = np.full((8, 8), 3.0)
    assert np.max(np.abs(periodic_laplacian(v, 0.125))) == 0.0


def test_laplacian_of_cosine_eigenvalue():
    M = 256
    u = np.arange(M) / M
    v = np.cos(2 * np.pi * u)
    lap = periodic_laplacian(v, 1.0 / M)
    # discrete eigenvalue -(2-2cos(2 pi /M)) M^2 ~ -4 pi^2
    expected = -(2.0 - 2.0 * math.cos(2 * math.pi / M)) * M**2
    assert lap == pytest.approx(expected * v, abs=1e-6)


def test_constant_profile_is_fixed_point(fam1):
    prob = MpmeProblem(fam1, m=2, initial=DensityProfile.constant(1.0), horizon=1.0)
    rho = solve(prob, M=32, t=0.1)
    assert rho.values == pytest.approx(np.full(32, 1.0), abs=1e-13)


def test_step_conserves_mass(problem):
    rho = problem.initial_grid(M=64)
    mass0 = rho.integral()
    for _ in range(50):
        dt = 0.4 * problem.cfl_dt(rho.values, rho.h)
        new = mpme_step(problem, rho, dt)
        assert new.integral() == pytest.approx(rho.integral(), rel=1e-12)
        rho = new
    assert rho.integral() == pytest.approx(mass0, rel=1e-12)


def test_step_maximum_principle(problem):
    rho = problem.initial_grid(M=128)
    dt = 0.4 * problem.cfl_dt(rho.values, rho.h)
    new = mpme_step(problem, rho, dt)
    assert new.values.max() < rho.values.max()
    assert new.values.min() > rho.values.min()


def test_cfl_violation_raises(problem):
    rho = problem.initial_grid(M=64)
    bound = problem.cfl_dt(rho.values, rho.h)
    with pytest.raises(ValueError, match="CFL"):
        mpme_step(problem, rho, 2.5 * bound)


def test_solve_at_zero_returns_initial(problem):
    rho = solve(problem, M=64, t=0.0)
    assert rho.values == pytest.approx(problem.initial_grid(64).values)


def test_solve_preserves_bounds(problem):
    for t in (0.01, 0.05, 0.1):
        rho = solve(problem, M=64, t=t)
        assert rho.values.min() >= problem.delta0 - 1e-12
        assert rho.values.max() <= problem.delta1 + 1e-12


def test_solve_times_consistent_with_solve(problem):
    # landing exactly on the intermediate time alters the step sequence by
    # O(dt), so agreement is to discretization accuracy, not bitwise
    out = solve_times(problem, M=64, times=[0.01, 0.03])
    direct = solve(problem, M=64, t=0.03)
    assert out[0.03].values == pytest.approx(direct.values, rel=1e-6)
    single = solve_times(problem, M=64, times=[0.03])
    assert single[0.03].values == pytest.approx(direct.values, rel=1e-14)


def test_flux_table_monotone(problem):
    rho = np.linspace(problem.delta0, problem.delta1, 300)
    w = problem.phi_of(rho) ** problem.m
    assert np.all(np.diff(w) > 0)


def test_table_range_guard(problem):
    with pytest.raises(ValueError, match="range"):
        problem.phi_of(np.array([10.0]))


def test_self_convergence_order(problem):
    t = 0.02
    sols = {M: solve(problem, M=M, t=t) for M in (64, 128, 256)}
    # restrict finer grids to the coarse one by subsampling shared points
    def l1(a, b):
        step = b.M // a.M
        return np.abs(a.values - b.values[::step]).mean()

    e1 = l1(sols[64], sols[128])
    e2 = l1(sols[128], sols[256])
    order = math.log2(e1 / e2)
    assert order >= 1.8


def test_zero_range_constant_fixed_point(fam1):
    prob = MpmeProblem(fam1, m=2, initial=DensityProfile.constant(0.8), horizon=1.0)
    rho = zero_range_reference(prob, M=32, t=0.05)
    assert rho.values == pytest.approx(np.full(32, 0.8), abs=1e-13)


def test_zero_range_mass_conservation(fam1):
    prob = MpmeProblem(fam1, m=2, initial=DensityProfile.cosine(1.0, 0.3, 1), horizon=1.0)
    rho = zero_range_reference(prob, M=64, t=0.05)
    assert rho.integral() == pytest.approx(prob.initial_grid(64).integral(), rel=1e-12)


def test_zero_range_linearized_cosine_decay(fam1):
    # small-amplitude cosine decays like exp(-4 pi^2 Phi'(a0) t)
    a0, a1, t = 1.0, 0.05, 0.05
    prob = MpmeProblem(fam1, m=2, initial=DensityProfile.cosine(a0, a1, 1), horizon=1.0)
    M = 256
    rho = zero_range_reference(prob, M=M, t=t)
    u = np.arange(M) / M
    amp = 2.0 * np.mean((rho.values - a0) * np.cos(2 * np.pi * u))
    expected = a1 * math.exp(-cosine_decay_rate(fam1, a0) * t)
    assert amp == pytest.approx(expected, rel=0.05)


def test_problem_validation(fam1):
    with pytest.raises(ValueError):
        MpmeProblem(fam1, m=4, initial=DensityProfile.constant(1.0))
    with pytest.raises(ValueError):
        solve(MpmeProblem(fam1, m=2, initial=DensityProfile.constant(1.0)), M=8, t=0.1)


def test_horizon_guard(fam1):
    prob = MpmeProblem(fam1, m=2, initial=DensityProfile.constant(1.0), horizon=0.1)
    with pytest.raises(ValueError, match="horizon"):
        solve(prob, M=32, t=0.2)


def test_grid_function_l1():
    a = GridFunction(1, 4, np.array([1.0, 2.0, 3.0, 4.0]))
    b = GridFunction(1, 4, np.array([1.0, 2.0, 3.0, 0.0]))
    assert a.l1_distance(b) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        a.l1_distance(GridFunction(1, 8, np.zeros(8)))


def test_2d_solve_conserves_and_bounds(fam1):
    prof = DensityProfile.cosine(1.0, 0.2, (1, 1))
    prob = MpmeProblem(fam1, m=2, initial=prof, horizon=1.0)
    rho = solve(prob, M=24, t=0.005)
    assert rho.values.shape == (24, 24)
    assert rho.integral() == pytest.approx(prob.initial_grid(24).integral(), rel=1e-12)
    assert rho.values.min() >= prob.delta0 - 1e-12
    assert rho.values.max() <= prob.delta1 + 1e-12
