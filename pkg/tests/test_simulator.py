import math

import numpy as np
import pytest

from mpme_lab import _kernels
from mpme_lab.lattice import Configuration, TorusGeometry
from mpme_lab.measures import EquilibriumFamily
from mpme_lab.rates import GFunction, Kernel, bond_rate
from mpme_lab.simulator import (
    BlockedError,
    OccupancyCapError,
    blocked_by_pattern_1d,
    default_mollifier_width,
    find_mobile_cluster,
    init_sim,
    is_blocked,
    mollified_profile,
    rebuild_rates,
    run_until_macro,
    step,
)


@pytest.fixture(scope="module")
def fam1():
    return EquilibriumFamily(GFunction.example1(q=1.0))


# -- RNG ------------------------------------------------------------------------


def test_xoshiro_matches_pure_python_reference():
    state = _kernels.seed_rng_state(12345)
    ref_state = [int(v) for v in state]
    compiled = []
    s = state.copy()
    for _ in range(64):
        compiled.append(int(_kernels._next_u64(s)))
    reference = [_kernels.reference_next_u64(ref_state) for _ in range(64)]
    assert compiled == reference


def test_seeding_is_deterministic_and_seed_sensitive():
    assert np.array_equal(_kernels.seed_rng_state(7), _kernels.seed_rng_state(7))
    assert not np.array_equal(_kernels.seed_rng_state(7), _kernels.seed_rng_state(8))


# -- init ------------------------------------------------------------------------


def test_init_empty_lambda_zero(fam1):
    geo = TorusGeometry(d=1, N=8)
    st = init_sim(fam1, Kernel(2), Configuration.empty(geo), seed=0)
    assert st.total_rate == 0.0
    assert is_blocked(st)


def test_init_single_occupied_site_blocked(fam1):
    geo = TorusGeometry(d=1, N=8)
    st = init_sim(fam1, Kernel(2), Configuration(geo, [5, 0, 0, 0, 0, 0, 0, 0]), seed=0)
    assert st.total_rate == 0.0
    assert is_blocked(st)


def test_init_uniform_rates(fam1):
    geo = TorusGeometry(d=1, N=8)
    st = init_sim(fam1, Kernel(2), Configuration(geo, np.ones(8, dtype=int)), seed=0)
    assert st.total_rate == pytest.approx(32.0)
    assert np.all(st.rates.leaf_rates() == pytest.approx(2.0))
    assert st.rates.directed_rate(3, 1, forward=True, d=1) == pytest.approx(2.0)


def test_init_rejects_small_torus(fam1):
    geo = TorusGeometry(d=1, N=4)
    with pytest.raises(ValueError, match="stencil"):
        init_sim(fam1, Kernel(2), Configuration.empty(geo), seed=0)
    geo6 = TorusGeometry(d=1, N=6)
    with pytest.raises(ValueError, match="stencil"):
        init_sim(fam1, Kernel(3), Configuration.empty(geo6), seed=0)


def test_init_rejects_condition_G_violation():
    gf = GFunction.tabulated(np.arange(0, 64, dtype=float))
    fam = EquilibriumFamily(gf)
    geo = TorusGeometry(d=1, N=8)
    with pytest.raises(ValueError, match="square-growth"):
        init_sim(fam, Kernel(2), Configuration.empty(geo), seed=0)


def test_init_rejects_occupancy_over_cap():
    gf = GFunction.tabulated([0.0, 1.0, 1.2, 1.3], condition_G=True)
    fam = EquilibriumFamily(gf)
    geo = TorusGeometry(d=1, N=8)
    eta = Configuration(geo, [4, 0, 0, 0, 1, 0, 0, 0])
    with pytest.raises(OccupancyCapError):
        init_sim(fam, Kernel(2), eta, seed=0)


# -- stepping ---------------------------------------------------------------------


def test_step_conserves_and_records(fam1):
    geo = TorusGeometry(d=1, N=16)
    rng = np.random.default_rng(1)
    eta = Configuration(geo, rng.integers(0, 3, 16))
    st = init_sim(fam1, Kernel(2), eta, seed=5)
    for _ in range(200):
        if st.total_rate == 0:
            break
        before = st.config.occupancy.copy()
        ev = step(st)
        assert ev.dt_micro > 0
        assert st.config.occupancy[ev.x] == before[ev.x] - 1
        assert st.config.occupancy[ev.y] == before[ev.y] + 1
        assert st.config.occupancy.sum() == eta.total


def test_step_blocked_raises(fam1):
    geo = TorusGeometry(d=1, N=8)
    st = init_sim(fam1, Kernel(2), Configuration(geo, [2, 0, 0, 0, 1, 0, 0, 0]), seed=0)
    assert is_blocked(st)
    with pytest.raises(BlockedError):
        step(st)


def test_step_occupancy_cap_raises():
    gf = GFunction.tabulated([0.0, 1.0, 1.2], condition_G=True)
    fam = EquilibriumFamily(gf)
    geo = TorusGeometry(d=1, N=8)
    eta = Configuration(geo, [2, 2, 2, 2, 2, 2, 2, 2])
    st = init_sim(fam, Kernel(2), eta, seed=3)
    with pytest.raises(OccupancyCapError):
        for _ in range(100):
            step(st)


def test_same_seed_same_trajectory(fam1):
    geo = TorusGeometry(d=1, N=32)
    rng = np.random.default_rng(2)
    eta = Configuration(geo, rng.integers(0, 3, 32))

    def run():
        st = init_sim(fam1, Kernel(2), eta, seed=77)
        events = [step(st) for _ in range(500)]
        return events, st.config.occupancy.copy(), st.micro_time

    ev_a, occ_a, t_a = run()
    ev_b, occ_b, t_b = run()
    assert ev_a == ev_b
    assert np.array_equal(occ_a, occ_b)
    assert t_a == t_b


def test_incremental_rates_match_rebuild(fam1):
    geo = TorusGeometry(d=1, N=64)
    rng = np.random.default_rng(3)
    eta = Configuration(geo, rng.integers(0, 4, 64))
    for m in (1, 2, 3):
        st = init_sim(fam1, Kernel(m), eta, seed=11)
        for _ in range(10_000):
            step(st)
        lam_before = st.total_rate
        drift = rebuild_rates(st)
        assert drift <= 1e-9
        assert abs(lam_before - st.total_rate) <= 1e-9 * (1.0 + st.total_rate)


def test_incremental_rates_match_rebuild_2d(fam1):
    geo = TorusGeometry(d=2, N=8)
    rng = np.random.default_rng(4)
    eta = Configuration(geo, rng.integers(0, 3, geo.site_count))
    st = init_sim(fam1, Kernel(2), eta, seed=13)
    for _ in range(5_000):
        step(st)
    assert rebuild_rates(st) <= 1e-9


def test_leaf_rates_match_reference_bond_rate(fam1):
    geo = TorusGeometry(d=2, N=7)
    rng = np.random.default_rng(5)
    eta = Configuration(geo, rng.integers(0, 4, geo.site_count))
    for m in (2, 3):
        st = init_sim(fam1, Kernel(m), eta, seed=1)
        kern = Kernel(m)
        for x in range(0, geo.site_count, 5):
            for j in (1, 2):
                assert st.rates.directed_rate(x, j, True, geo.d) == pytest.approx(
                    bond_rate(fam1.gf, kern, eta, x, j)
                )


# -- run_until_macro -----------------------------------------------------------------


def test_run_to_current_time_no_events(fam1):
    geo = TorusGeometry(d=1, N=8)
    st = init_sim(fam1, Kernel(2), Configuration(geo, np.ones(8, dtype=int)), seed=0)
    run_until_macro(st, 0.0)
    assert st.event_count == 0
    assert st.micro_time == 0.0


def test_uniform_config_evolves(fam1):
    geo = TorusGeometry(d=1, N=8)
    st = init_sim(fam1, Kernel(2), Configuration(geo, np.ones(8, dtype=int)), seed=21)
    run_until_macro(st, 0.05)
    assert st.event_count > 0
    assert st.macro_time == pytest.approx(0.05)


def test_blocked_run_advances_clock(fam1):
    geo = TorusGeometry(d=1, N=9)
    st = init_sim(fam1, Kernel(2), Configuration(geo, [1, 0, 0, 1, 0, 0, 1, 0, 0]), seed=0)
    assert is_blocked(st)
    run_until_macro(st, 0.3)
    assert st.event_count == 0
    assert st.macro_time == pytest.approx(0.3)


def test_observers_fire_on_grid(fam1):
    geo = TorusGeometry(d=1, N=16)
    st = init_sim(fam1, Kernel(2), Configuration(geo, np.ones(16, dtype=int)), seed=9)
    seen = []
    run_until_macro(st, 0.02, observers=[lambda s: seen.append(s.macro_time)], grid_step=0.005)
    assert len(seen) == 5
    assert seen[0] == 0.0
    assert seen[-1] == pytest.approx(0.02)
    assert all(b >= a for a, b in zip(seen, seen[1:]))


def test_zero_range_kernel_runs(fam1):
    geo = TorusGeometry(d=1, N=16)
    eta = Configuration(geo, [3, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0, 1])
    st = init_sim(fam1, Kernel.zero_range(), eta, seed=2)
    assert not is_blocked(st)
    run_until_macro(st, 0.05)
    assert st.event_count > 0
    assert st.config.occupancy.sum() == 6


# -- blockedness ----------------------------------------------------------------------


def test_is_blocked_examples(fam1):
    geo = TorusGeometry(d=1, N=8)
    far = Configuration(geo, [1, 0, 0, 0, 1, 0, 0, 0])
    assert is_blocked(init_sim(fam1, Kernel(2), far, seed=0))
    near = Configuration(geo, [1, 0, 1, 0, 0, 0, 0, 0])
    assert not is_blocked(init_sim(fam1, Kernel(2), near, seed=0))
    assert is_blocked(init_sim(fam1, Kernel(2), Configuration.empty(geo), seed=0))


def test_m3_blockedness_needs_richer_patterns(fam1):
    geo = TorusGeometry(d=1, N=8)
    # two adjacent occupied sites move under m=2 but are blocked under m=3
    pair = Configuration(geo, [1, 1, 0, 0, 0, 0, 0, 0])
    assert not is_blocked(init_sim(fam1, Kernel(2), pair, seed=0))
    assert is_blocked(init_sim(fam1, Kernel(3), pair, seed=0))
    triple = Configuration(geo, [1, 1, 1, 0, 0, 0, 0, 0])
    assert not is_blocked(init_sim(fam1, Kernel(3), triple, seed=0))


def test_pattern_criterion_agrees_with_rates_randomly(fam1):
    # is_blocked internally cross-checks rates vs the occupancy pattern in d=1
    rng = np.random.default_rng(6)
    geo = TorusGeometry(d=1, N=12)
    for m in (2, 3):
        for _ in range(300):
            occ = (rng.random(12) < 0.25) * rng.integers(1, 3, 12)
            st = init_sim(fam1, Kernel(m), Configuration(geo, occ), seed=0)
            is_blocked(st)  # raises if the two routes disagree


def test_blocked_pattern_validates_dimension(fam1):
    geo = TorusGeometry(d=2, N=5)
    with pytest.raises(ValueError):
        blocked_by_pattern_1d(Configuration.empty(geo), 2)


# -- mobile clusters ---------------------------------------------------------------


def test_find_mobile_cluster_2d():
    geo = TorusGeometry(d=2, N=5)
    occ = np.zeros((5, 5), dtype=int)
    occ[0, 0] = occ[0, 1] = occ[1, 0] = occ[1, 1] = 2
    eta = Configuration(geo, occ.ravel())
    assert find_mobile_cluster(eta) == 0


def test_find_mobile_cluster_none_for_alternating():
    geo = TorusGeometry(d=1, N=8)
    eta = Configuration(geo, [1, 0, 1, 0, 1, 0, 1, 0])
    assert find_mobile_cluster(eta) is None


def test_mobile_cluster_implies_not_blocked(fam1):
    rng = np.random.default_rng(8)
    for d, N in ((1, 8), (2, 6)):
        geo = TorusGeometry(d, N)
        for _ in range(50):
            occ = (rng.random(geo.site_count) < 0.2) * rng.integers(1, 3, geo.site_count)
            eta = Configuration(geo, occ)
            corner = int(rng.integers(geo.site_count))
            grid = eta.grid()
            cc = geo.coords(corner)
            for delta in range(2**d):
                idx = tuple((cc[a] + ((delta >> a) & 1)) % N for a in range(d))
                grid[idx] = max(grid[idx], 1)
            eta = Configuration(geo, grid.ravel())
            assert find_mobile_cluster(eta) is not None
            st = init_sim(fam1, Kernel(2), eta, seed=0)
            assert st.total_rate > 0


# -- mollified profiles ----------------------------------------------------------------


def test_mollified_constant_is_constant():
    geo = TorusGeometry(d=1, N=50)
    eta = Configuration(geo, np.full(50, 3))
    # 2 w N integer: deposition of a constant field is exactly constant
    prof = mollified_profile(eta, w=0.1, M=40)
    assert prof.values == pytest.approx(np.full(40, 3.0), rel=1e-9)


def test_mollified_mass_exact_any_width():
    rng = np.random.default_rng(10)
    for d, N, M in ((1, 37, 53), (2, 11, 17)):
        geo = TorusGeometry(d, N)
        eta = Configuration(geo, rng.integers(0, 5, geo.site_count))
        w = 0.17738  # deliberately unaligned
        prof = mollified_profile(eta, w=w, M=M)
        assert prof.integral() == pytest.approx(eta.total / N**d, rel=1e-11)


def test_mollified_single_particle_box():
    geo = TorusGeometry(d=1, N=20)
    occ = np.zeros(20, dtype=int)
    occ[0] = 1
    eta = Configuration(geo, occ)
    prof = mollified_profile(eta, w=0.1, M=10)
    # box [-0.1, 0.1] covers cells 0 and 9 exactly; value N^-1/(2w)
    expected = np.zeros(10)
    expected[0] = expected[9] = (1 / 20) / 0.2
    assert prof.values == pytest.approx(expected, abs=1e-12)


def test_mollifier_width_validation():
    geo = TorusGeometry(d=1, N=16)
    eta = Configuration.empty(geo)
    with pytest.raises(ValueError, match="lattice spacing"):
        mollified_profile(eta, w=1.0 / 32, M=16)
    with pytest.raises(ValueError, match="exceed"):
        mollified_profile(eta, w=0.6, M=16)
    assert 1.0 / 16 <= default_mollifier_width(16) <= 0.5


# -- stationarity (scaled-down; the acceptance suite runs the full version) -------------


def test_stationary_time_average_of_g(fam1):
    # Each trajectory conserves its sampled particle count, so its time
    # average sits at Phi(K/N); only the ensemble over initial draws
    # recovers Phi(alpha).
    alpha = 1.0
    geo = TorusGeometry(d=1, N=64)
    psi = fam1.phi(alpha)
    rng = np.random.default_rng(123)
    averages = []
    for seed in range(20):
        eta = Configuration(geo, fam1.sample_marginal(psi, rng, size=64))
        st = init_sim(fam1, Kernel(2), eta, seed=seed)
        run_until_macro(st, 0.1)
        tavg = st.g_integral / (st.micro_time * geo.site_count)
        averages.append(tavg)
        # canonical value at the realized density, up to O(1/N) and time noise
        assert abs(tavg - fam1.phi(eta.total / 64)) < 0.05
    averages = np.array(averages)
    se = averages.std(ddof=1) / math.sqrt(averages.size)
    assert abs(averages.mean() - psi) < 3 * se
