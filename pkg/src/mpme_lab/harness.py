"""Hydrodynamic-limit experiments: ensembles of trajectories vs the PDE.

For each lattice size the pipeline samples initial configurations from the
product measure of the initial profile, runs them to the observation times
under diffusive scaling, mollifies the empirical density onto the PDE grid,
ensemble-averages, and reports L1 distances against both the degenerate
diffusion solution and the unconstrained heat baseline, with jackknife
standard errors. Local-equilibrium checks reuse the same raw snapshots.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lattice import TorusGeometry
from .measures import DensityProfile, EquilibriumFamily, ProductMeasureSampler
from .pde import MpmeProblem, solve_times, zero_range_reference_times
from .rates import Kernel
from .simulator import default_mollifier_width, init_sim, mollified_profile, run_until_macro


@dataclass
class ExperimentPlan:
    """Everything needed to reproduce one convergence study."""

    fam: EquilibriumFamily
    kernel: Kernel
    d: int
    N_list: list
    profile: DensityProfile
    obs_times: list
    n_seeds: int = 200
    base_seed: int = 0
    # None: 2/sqrt(N) per lattice size; float: fixed; callable: width(N)
    mollifier_width: object = None
    grid_M: int = 256
    threads: int | None = None

    def __post_init__(self):
        if self.kernel.m not in (2, 3):
            raise ValueError("plans are built around a constrained kernel (m=2 or 3)")
        if self.profile.delta0 <= 0:
            raise ValueError("initial profile must be bounded away from zero")
        self.obs_times = sorted(float(t) for t in self.obs_times)
        if self.obs_times and self.obs_times[0] < 0:
            raise ValueError("observation times must be non-negative")
        self.N_list = [int(n) for n in self.N_list]

    def width_for(self, N: int) -> float:
        if self.mollifier_width is None:
            return default_mollifier_width(N)
        if callable(self.mollifier_width):
            return float(self.mollifier_width(N))
        return float(self.mollifier_width)

    def thread_count(self) -> int:
        if self.threads:
            return self.threads
        env = os.environ.get("MPME_LAB_THREADS")
        return int(env) if env else (os.cpu_count() or 1)

    def summary(self) -> dict:
        return {
            "g_family": self.fam.label(),
            "m": self.kernel.m,
            "d": self.d,
            "N_list": self.N_list,
            "profile": _profile_summary(self.profile),
            "obs_times": self.obs_times,
            "n_seeds": self.n_seeds,
            "base_seed": self.base_seed,
            "mollifier_width": {str(N): self.width_for(N) for N in self.N_list},
            "grid_M": self.grid_M,
        }


def _profile_summary(profile: DensityProfile) -> str:
    if profile.kind == "constant":
        return f"const:{profile.params[0]:g}"
    if profile.kind == "cosine":
        a0, a1, *k = profile.params
        return f"cosine:{a0:g},{a1:g},{','.join(str(v) for v in k)}"
    return f"tabulated[{profile.table.size}]"


@dataclass
class EnsembleResult:
    """Raw per-seed output of one lattice size: snapshots and mollified profiles."""

    N: int
    obs_times: list
    snapshots: dict  # t -> int64 array (n_seeds, site_count)
    profiles: dict  # t -> float array (n_seeds, M^d)
    blocked: np.ndarray  # bool per seed (blocked at the final time)
    initial_totals: np.ndarray


def run_ensemble(plan: ExperimentPlan, N: int, dynamics: Kernel | None = None) -> EnsembleResult:
    """Simulate the full ensemble at one lattice size (seed-indexed, thread-parallel)."""
    dynamics = dynamics or plan.kernel
    geo = TorusGeometry(plan.d, N)
    sampler = ProductMeasureSampler(plan.fam, plan.profile, geo)
    w = plan.width_for(N)
    times = plan.obs_times
    n = plan.n_seeds
    snapshots = {t: np.empty((n, geo.site_count), dtype=np.int64) for t in times}
    profiles = {t: np.empty((n, plan.grid_M**plan.d)) for t in times}
    blocked = np.zeros(n, dtype=bool)
    totals = np.zeros(n, dtype=np.int64)

    def one_trajectory(i: int):
        seed = plan.base_seed + i
        rng = np.random.default_rng(seed)
        eta = sampler.sample(rng)
        totals[i] = eta.total
        state = init_sim(plan.fam, dynamics, eta, seed=seed)
        for t in times:
            run_until_macro(state, t)
            if state.config.occupancy.sum() != eta.total:
                raise RuntimeError(f"particle conservation violated at seed {seed}")
            snapshots[t][i] = state.config.occupancy
            profiles[t][i] = mollified_profile(state.config, w, plan.grid_M).values.ravel()
        blocked[i] = state.total_rate == 0.0

    workers = plan.thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one_trajectory, range(n)))
    else:
        for i in range(n):
            one_trajectory(i)
    return EnsembleResult(
        N=N, obs_times=times, snapshots=snapshots, profiles=profiles,
        blocked=blocked, initial_totals=totals,
    )


def _l1_and_jackknife(profiles: np.ndarray, reference: np.ndarray, alternate: np.ndarray):
    """L1 errors of the ensemble mean against two references, with jackknife SEs.

    Returns (l1_ref, se_ref, l1_alt, se_alt, diff, se_diff); diff = l1_ref - l1_alt.
    """
    n = profiles.shape[0]
    total = profiles.sum(axis=0)
    mean = total / n
    l1_ref = float(np.abs(mean - reference).mean())
    l1_alt = float(np.abs(mean - alternate).mean())
    loo = (total[None, :] - profiles) / (n - 1)
    loo_ref = np.abs(loo - reference[None, :]).mean(axis=1)
    loo_alt = np.abs(loo - alternate[None, :]).mean(axis=1)

    def jack_se(values):
        return float(math.sqrt((n - 1) / n * np.sum((values - values.mean()) ** 2)))

    return (
        l1_ref,
        jack_se(loo_ref),
        l1_alt,
        jack_se(loo_alt),
        l1_ref - l1_alt,
        jack_se(loo_ref - loo_alt),
    )


@dataclass
class ConvergenceReport:
    """Per-(N, t) L1 errors of the empirical profile against the PDE solutions."""

    plan_summary: dict
    dynamics: str  # "constrained" or "zero-range"
    entries: list = field(default_factory=list)
    mean_profiles: dict = field(default_factory=dict)  # (N, t) -> list
    pde_profiles: dict = field(default_factory=dict)  # ("mpme"|"heat", t) -> list

    def entry(self, N: int, t: float) -> dict:
        for e in self.entries:
            if e["N"] == N and e["t"] == t:
                return e
        raise KeyError((N, t))

    def errors_vs_N(self, t: float, key: str = "l1_primary"):
        return [(e["N"], e[key]) for e in sorted(self.entries, key=lambda e: e["N"]) if e["t"] == t]

    def to_json_dict(self) -> dict:
        return {
            "plan": self.plan_summary,
            "dynamics": self.dynamics,
            "entries": self.entries,
            "mean_profiles": {f"{N}:{t!r}": v for (N, t), v in self.mean_profiles.items()},
            "pde_profiles": {f"{which}:{t!r}": v for (which, t), v in self.pde_profiles.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        cols = [
            "N", "t", "l1_primary", "se_primary", "l1_alternate", "se_alternate",
            "l1_diff", "se_diff", "blocked_count", "n_seeds",
        ]
        with open(path, "w") as fh:
            for key, value in sorted(self.plan_summary.items()):
                fh.write(f"# {key} = {value}\n")
            fh.write(f"# dynamics = {self.dynamics}\n")
            fh.write(",".join(cols) + "\n")
            for e in sorted(self.entries, key=lambda e: (e["t"], e["N"])):
                fh.write(",".join(repr(e[c]) if isinstance(e[c], float) else str(e[c]) for c in cols) + "\n")


def reference_solutions(plan: ExperimentPlan):
    """PDE targets on the plan grid: the constrained limit and the heat baseline."""
    horizon = max(plan.obs_times) if plan.obs_times else 0.0
    problem = MpmeProblem(plan.fam, plan.kernel.m, plan.profile, horizon=horizon + 1e-9)
    mpme = solve_times(problem, plan.grid_M, plan.obs_times, d=plan.d)
    heat = zero_range_reference_times(problem, plan.grid_M, plan.obs_times, d=plan.d)
    return mpme, heat


def run_hydro_experiment(
    plan: ExperimentPlan,
    dynamics: Kernel | None = None,
    store: dict | None = None,
) -> ConvergenceReport:
    """The convergence study: ensemble vs PDE across lattice sizes.

    `store` (optional dict) receives the EnsembleResult per N for reuse by
    local-equilibrium checks.
    """
    dynamics = dynamics or plan.kernel
    mpme, heat = reference_solutions(plan)
    primary, alternate = (heat, mpme) if dynamics.m == 1 else (mpme, heat)
    report = ConvergenceReport(
        plan_summary=plan.summary(),
        dynamics="zero-range" if dynamics.m == 1 else "constrained",
    )
    for t in plan.obs_times:
        report.pde_profiles[("mpme", t)] = mpme[t].values.ravel().tolist()
        report.pde_profiles[("heat", t)] = heat[t].values.ravel().tolist()
    for N in plan.N_list:
        result = run_ensemble(plan, N, dynamics)
        if store is not None:
            store[N] = result
        for t in plan.obs_times:
            profs = result.profiles[t]
            l1p, sep, l1a, sea, diff, sed = _l1_and_jackknife(
                profs, primary[t].values.ravel(), alternate[t].values.ravel()
            )
            report.entries.append(
                {
                    "N": N,
                    "t": t,
                    "l1_primary": l1p,
                    "se_primary": sep,
                    "l1_alternate": l1a,
                    "se_alternate": sea,
                    "l1_diff": diff,
                    "se_diff": sed,
                    "blocked_count": int(result.blocked.sum()),
                    "n_seeds": plan.n_seeds,
                }
            )
            report.mean_profiles[(N, t)] = profs.mean(axis=0).tolist()
    return report


def zero_range_baseline(plan: ExperimentPlan, store: dict | None = None) -> ConvergenceReport:
    """Same pipeline with the constraint replaced by c == 1 (known-good control)."""
    return run_hydro_experiment(plan, dynamics=Kernel.zero_range(), store=store)


# -- local equilibrium ------------------------------------------------------------


CYLINDER_FIELDS = ("eta0", "g", "p", "q")


def _cylinder_field(name: str, occ_grid: np.ndarray, g_tab: np.ndarray, axis: int = 0) -> np.ndarray:
    """tau_x Psi(eta) for every x, vectorized on the occupancy grid."""
    if name == "eta0":
        return occ_grid.astype(np.float64)
    g = g_tab[occ_grid]
    if name == "g":
        return g
    gp = np.roll(g, -1, axis=axis)
    gm = np.roll(g, +1, axis=axis)
    if name == "p":
        return g * gp + g * gm - gp * gm
    if name == "q":
        g2 = np.roll(g, -2, axis=axis)
        return (gm + g2) * (g + gp)
    raise ValueError(f"unknown cylinder field {name!r}; choose from {CYLINDER_FIELDS}")


def _target_values(name: str, rho: np.ndarray, fam: EquilibriumFamily, phi_table) -> np.ndarray:
    if name == "eta0":
        return rho
    phi = phi_table(rho)
    if name == "g":
        return phi
    if name == "p":
        return phi**2
    if name == "q":
        return 4.0 * phi**2
    raise ValueError(f"unknown cylinder field {name!r}")


def local_equilibrium_check(
    plan: ExperimentPlan,
    psi_name: str,
    H=None,
    store: dict | None = None,
) -> list:
    """Weak local-equilibrium discrepancy per (N, t).

    Computes E| N^-d sum_x H(x/N) tau_x Psi(eta_t) - integral H(u) target(rho(t,u)) du |
    over the ensemble, with the integral taken on the PDE grid.
    """
    if psi_name not in CYLINDER_FIELDS:
        raise ValueError(f"unknown cylinder field {psi_name!r}; choose from {CYLINDER_FIELDS}")
    if psi_name in ("p", "q") and plan.kernel.m != 2:
        raise ValueError("p/q diagnostics are defined for the m=2 kernel only")
    horizon = max(plan.obs_times) if plan.obs_times else 0.0
    problem = MpmeProblem(plan.fam, plan.kernel.m, plan.profile, horizon=horizon + 1e-9)
    pde = solve_times(problem, plan.grid_M, plan.obs_times, d=plan.d)
    grid_pts = _grid_points(plan.grid_M, plan.d)
    h_grid = np.ones(plan.grid_M**plan.d) if H is None else np.asarray(H(grid_pts), dtype=float)
    g_tab = plan.fam.gf.values
    out = []
    for N in plan.N_list:
        geo = TorusGeometry(plan.d, N)
        result = (store or {}).get(N) or run_ensemble(plan, N)
        site_pts = _grid_points(N, plan.d)
        h_sites = np.ones(geo.site_count) if H is None else np.asarray(H(site_pts), dtype=float)
        for t in plan.obs_times:
            target = _target_values(psi_name, pde[t].values.ravel(), plan.fam, problem._phi_table)
            integral = float((h_grid * target).mean())
            occ = result.snapshots[t].reshape((plan.n_seeds,) + geo.shape)
            fields = _cylinder_field(psi_name, occ, g_tab, axis=1)
            lattice_avg = (fields.reshape(plan.n_seeds, -1) * h_sites[None, :]).mean(axis=1)
            gaps = np.abs(lattice_avg - integral)
            out.append(
                {
                    "N": N,
                    "t": t,
                    "psi": psi_name,
                    "discrepancy": float(gaps.mean()),
                    "se": float(gaps.std(ddof=1) / math.sqrt(plan.n_seeds)),
                }
            )
    return out


def _grid_points(M: int, d: int) -> np.ndarray:
    return np.stack([g.ravel() for g in np.indices((M,) * d)], axis=1) / M


def write_overlay_svg(report: ConvergenceReport, path, t: float | None = None) -> None:
    """Overlay of the ensemble-mean empirical profiles and the PDE target (d=1)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    times = sorted({tt for (_N, tt) in report.mean_profiles})
    if t is None:
        t = times[-1]
    fig, ax = plt.subplots(figsize=(7, 4))
    which = "heat" if report.dynamics == "zero-range" else "mpme"
    pde_vals = np.asarray(report.pde_profiles[(which, t)])
    u = np.arange(pde_vals.size) / pde_vals.size
    for (N, tt), vals in sorted(report.mean_profiles.items()):
        if tt == t:
            ax.plot(u, vals, lw=0.8, label=f"N={N}")
    ax.plot(u, pde_vals, "k--", lw=1.5, label="PDE")
    ax.set_xlabel("u")
    ax.set_ylabel("density")
    ax.set_title(f"{report.dynamics} dynamics vs PDE at t={t:g}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
