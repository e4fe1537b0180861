"""Batch command-line front end.

Subcommands: simulate, pde, hydro, localeq, ergodicity, measures, sample.
A flat `key = value` config file can seed any flag; explicit flags win.
Exit codes: 0 success, 2 invalid input, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ergodicity import hyperplane_report, report_to_json
from .harness import (
    ExperimentPlan,
    local_equilibrium_check,
    run_hydro_experiment,
    write_overlay_svg,
    zero_range_baseline,
)
from .lattice import TorusGeometry, write_snapshot
from .measures import (
    DensityProfile,
    EquilibriumFamily,
    ProductMeasureSampler,
    SeriesError,
    product_relative_entropy,
)
from .pde import MpmeProblem, solve, write_grid_csv, zero_range_reference
from .rates import GFunction, Kernel
from .simulator import init_sim, run_until_macro, write_observer_csv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except SystemExit as exc:  # argparse reports its own message
        return 0 if exc.code in (0, None) else 2
    try:
        return args.handler(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, SeriesError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def _parse(argv):
    parser = argparse.ArgumentParser(prog="mpme-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--g", default="example1", help="example1|example2|example3|file:PATH")
        p.add_argument("--q", type=float, default=1.0, help="example1 parameter q > 0")
        p.add_argument("--beta", type=float, default=0.5, help="example2 parameter in [0,1]")
        p.add_argument("--gamma", type=float, default=0.5, help="example3 parameter in (0,1/2]")
        p.add_argument("--m", type=int, default=2, choices=(2, 3))
        p.add_argument("--d", type=int, default=1)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="base RNG seed")
        p.add_argument("--threads", type=int, default=None)

    p_sim = sub.add_parser("simulate", help="run one trajectory, write snapshots + observer CSV")
    common(p_sim)
    p_sim.add_argument("--N", type=int, default=64)
    p_sim.add_argument("--profile", default="const:1.0")
    p_sim.add_argument("--t", type=float, default=0.05)
    p_sim.add_argument("--times", default=None, help="comma list of snapshot macro times")
    p_sim.add_argument("--M", type=int, default=256)
    p_sim.add_argument("--w", type=float, default=None)
    p_sim.set_defaults(handler=_cmd_simulate)

    p_pde = sub.add_parser("pde", help="solve the limit PDE on a periodic grid")
    common(p_pde)
    p_pde.add_argument("--profile", default="cosine:1.0,0.2,1")
    p_pde.add_argument("--t", type=float, default=0.05)
    p_pde.add_argument("--M", type=int, default=256)
    p_pde.add_argument("--reference", action="store_true", help="solve the zero-range heat baseline instead")
    p_pde.set_defaults(handler=_cmd_pde)

    p_hyd = sub.add_parser("hydro", help="hydrodynamic convergence study across lattice sizes")
    common(p_hyd)
    p_hyd.add_argument("--N", default="64,128,256,512", help="comma list of lattice sides")
    p_hyd.add_argument("--profile", default="cosine:1.0,0.2,1")
    p_hyd.add_argument("--t", type=float, default=0.05)
    p_hyd.add_argument("--times", default=None)
    p_hyd.add_argument("--seeds", type=int, default=200)
    p_hyd.add_argument("--M", type=int, default=256)
    p_hyd.add_argument("--w", type=float, default=None)
    p_hyd.add_argument("--baseline", action="store_true", help="also run the zero-range control")
    p_hyd.add_argument("--plot", action="store_true", help="write SVG overlays")
    p_hyd.set_defaults(handler=_cmd_hydro)

    p_leq = sub.add_parser("localeq", help="weak local-equilibrium discrepancies")
    common(p_leq)
    p_leq.add_argument("--N", default="32,64")
    p_leq.add_argument("--profile", default="cosine:1.0,0.2,1")
    p_leq.add_argument("--t", type=float, default=0.05)
    p_leq.add_argument("--times", default=None)
    p_leq.add_argument("--seeds", type=int, default=100)
    p_leq.add_argument("--M", type=int, default=256)
    p_leq.add_argument("--w", type=float, default=None)
    p_leq.add_argument("--field", default="g", choices=("eta0", "g", "p", "q"))
    p_leq.set_defaults(handler=_cmd_localeq)

    p_erg = sub.add_parser("ergodicity", help="exact hyperplane decomposition report")
    common(p_erg)
    p_erg.add_argument("--N", type=int, default=5)
    p_erg.add_argument("--k", type=int, required=True, help="particle count")
    p_erg.add_argument("--psi", type=float, default=0.5, help="fugacity for detailed balance")
    p_erg.set_defaults(handler=_cmd_ergodicity)

    p_meas = sub.add_parser("measures", help="tabulate Z, R, Phi, D; optional profile entropy")
    common(p_meas)
    p_meas.add_argument("--rho-grid", default="0.1:2.0:20", help="start:stop:count or comma list")
    p_meas.add_argument("--profile", default=None)
    p_meas.add_argument("--profile2", default=None)
    p_meas.add_argument("--N", type=int, default=64)
    p_meas.set_defaults(handler=_cmd_measures)

    p_samp = sub.add_parser("sample", help="emit one product-measure configuration snapshot")
    common(p_samp)
    p_samp.add_argument("--N", type=int, default=64)
    p_samp.add_argument("--profile", default="const:1.0")
    p_samp.set_defaults(handler=_cmd_sample)

    # config file pass: inject file entries before the explicit flags
    if argv and "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 >= len(argv):
            parser.error("--config needs a path")
        injected = _config_tokens(argv[idx + 1])
        argv = [argv[0]] + injected + argv[1:]
    return parser.parse_args(argv)


def _config_tokens(path) -> list:
    tokens = []
    text = Path(path).read_text()
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"{path}:{line_no}: empty key or value")
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                tokens.append(f"--{key}")
        else:
            tokens.extend([f"--{key}", value])
    return tokens


# -- shared builders ---------------------------------------------------------------


def build_gfunction(args) -> GFunction:
    spec = args.g
    if spec == "example1":
        return GFunction.example1(args.q)
    if spec == "example2":
        return GFunction.example2(args.beta)
    if spec == "example3":
        return GFunction.example3(args.gamma)
    if spec.startswith("file:"):
        return GFunction.from_file(spec[5:])
    raise ValueError(f"unknown g family {spec!r}")


def parse_profile(spec: str, d: int) -> DensityProfile:
    kind, _, rest = spec.partition(":")
    if kind == "const":
        return DensityProfile.constant(float(rest))
    if kind == "cosine":
        parts = rest.split(",")
        if len(parts) < 3:
            raise ValueError(f"cosine profile needs a0,a1,k: got {spec!r}")
        a0, a1 = float(parts[0]), float(parts[1])
        wave = tuple(int(v) for v in parts[2:])
        if len(wave) not in (1, d):
            raise ValueError(f"wavevector length {len(wave)} does not match d={d}")
        return DensityProfile.cosine(a0, a1, wave)
    if kind == "file":
        return DensityProfile.from_file(rest, d=d)
    raise ValueError(f"unknown profile spec {spec!r} (const:/cosine:/file:)")


def _parse_times(args) -> list:
    if getattr(args, "times", None):
        return [float(v) for v in args.times.split(",")]
    return [args.t]


def _parse_N_list(value) -> list:
    return [int(v) for v in str(value).split(",")]


def resolved_config(args) -> dict:
    skip = {"handler", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_threads(args):
    if args.threads:
        os.environ["MPME_LAB_THREADS"] = str(args.threads)


# -- subcommand handlers --------------------------------------------------------------


def _cmd_simulate(args) -> int:
    fam = EquilibriumFamily(build_gfunction(args))
    profile = parse_profile(args.profile, args.d)
    geo = TorusGeometry(args.d, args.N)
    times = sorted(set(_parse_times(args)) | {args.t})
    rng = np.random.default_rng(args.seed)
    eta = ProductMeasureSampler(fam, profile, geo).sample(rng)
    state = init_sim(fam, Kernel(args.m), eta, seed=args.seed)
    out = _outdir(args)
    rows = []
    for t in times:
        run_until_macro(state, t)
        write_snapshot(out / f"snapshot_t{t:g}.txt", state.config, args.m, args.seed, t)
        for x, v in enumerate(state.config.occupancy):
            rows.append((args.seed, t, x, int(v)))
    write_observer_csv(out / "trajectory.csv", rows)
    (out / "simulate_config.json").write_text(json.dumps(resolved_config(args), indent=2, sort_keys=True))
    print(f"wrote {len(times)} snapshots to {out} (events: {state.event_count})")
    return 0


def _cmd_pde(args) -> int:
    fam = EquilibriumFamily(build_gfunction(args))
    profile = parse_profile(args.profile, args.d)
    problem = MpmeProblem(fam, args.m, profile, horizon=args.t + 1e-9)
    grid = (
        zero_range_reference(problem, args.M, args.t, d=args.d)
        if args.reference
        else solve(problem, args.M, args.t, d=args.d)
    )
    out = _outdir(args)
    header = [f"{k} = {v}" for k, v in resolved_config(args).items()]
    name = "pde_reference.csv" if args.reference else "pde.csv"
    write_grid_csv(out / name, grid, header_lines=header)
    print(f"wrote {out / name}; mass = {grid.integral()!r}")
    return 0


def _build_plan(args) -> ExperimentPlan:
    fam = EquilibriumFamily(build_gfunction(args))
    return ExperimentPlan(
        fam=fam,
        kernel=Kernel(args.m),
        d=args.d,
        N_list=_parse_N_list(args.N),
        profile=parse_profile(args.profile, args.d),
        obs_times=_parse_times(args),
        n_seeds=args.seeds,
        base_seed=args.seed,
        mollifier_width=args.w,
        grid_M=args.M,
        threads=args.threads,
    )


def _cmd_hydro(args) -> int:
    _apply_threads(args)
    plan = _build_plan(args)
    out = _outdir(args)
    report = run_hydro_experiment(plan)
    blob = report.to_json_dict()
    blob["config"] = resolved_config(args)
    (out / "hydro_report.json").write_text(json.dumps(blob, indent=2, sort_keys=True))
    report.write_csv(out / "hydro_report.csv")
    if args.plot:
        for t in plan.obs_times:
            write_overlay_svg(report, out / f"hydro_overlay_t{t:g}.svg", t=t)
    if args.baseline:
        base = zero_range_baseline(plan)
        bb = base.to_json_dict()
        bb["config"] = resolved_config(args)
        (out / "baseline_report.json").write_text(json.dumps(bb, indent=2, sort_keys=True))
        base.write_csv(out / "baseline_report.csv")
        if args.plot:
            for t in plan.obs_times:
                write_overlay_svg(base, out / f"baseline_overlay_t{t:g}.svg", t=t)
    for t in plan.obs_times:
        trend = ", ".join(f"N={n}: {e:.5f}" for n, e in report.errors_vs_N(t))
        print(f"t={t:g}  L1(sim, PDE): {trend}")
    return 0


def _cmd_localeq(args) -> int:
    _apply_threads(args)
    plan = _build_plan(args)
    rows = local_equilibrium_check(plan, args.field)
    out = _outdir(args)
    blob = {"config": resolved_config(args), "rows": rows}
    (out / "localeq_report.json").write_text(json.dumps(blob, indent=2, sort_keys=True))
    for r in rows:
        print(f"N={r['N']} t={r['t']:g} psi={r['psi']}: discrepancy {r['discrepancy']:.6f} +- {r['se']:.6f}")
    return 0


def _cmd_ergodicity(args) -> int:
    gf = build_gfunction(args)
    geo = TorusGeometry(args.d, args.N)
    report = hyperplane_report(geo, args.k, gf, Kernel(args.m), psi=args.psi)
    report["config"] = resolved_config(args)
    text = report_to_json(report)
    out = _outdir(args)
    (out / f"ergodicity_N{args.N}_k{args.k}_m{args.m}.json").write_text(text)
    print(text)
    return 0


def _parse_grid(spec: str) -> np.ndarray:
    if ":" in spec:
        start, stop, count = spec.split(":")
        return np.linspace(float(start), float(stop), int(count))
    return np.array([float(v) for v in spec.split(",")])


def _cmd_measures(args) -> int:
    fam = EquilibriumFamily(build_gfunction(args))
    rhos = _parse_grid(args.rho_grid)
    out = _outdir(args)
    path = out / "measures.csv"
    with open(path, "w") as fh:
        for k, v in resolved_config(args).items():
            fh.write(f"# {k} = {v}\n")
        fh.write("rho,psi,Z,R,D\n")
        for rho in rhos:
            psi = fam.phi(float(rho))
            fh.write(
                f"{float(rho)!r},{psi!r},{fam.partition_Z(psi)!r},"
                f"{fam.density_R(psi)!r},{fam.diffusion_D(float(rho), args.m)!r}\n"
            )
    msg = f"wrote {path}"
    if args.profile and args.profile2:
        geo = TorusGeometry(args.d, args.N)
        h = product_relative_entropy(
            fam,
            parse_profile(args.profile, args.d),
            parse_profile(args.profile2, args.d),
            geo,
        )
        blob = {"config": resolved_config(args), "relative_entropy": h}
        (out / "entropy.json").write_text(json.dumps(blob, indent=2, sort_keys=True))
        msg += f"; H(mu|nu) = {h!r}"
    print(msg)
    return 0


def _cmd_sample(args) -> int:
    fam = EquilibriumFamily(build_gfunction(args))
    profile = parse_profile(args.profile, args.d)
    geo = TorusGeometry(args.d, args.N)
    rng = np.random.default_rng(args.seed)
    eta = ProductMeasureSampler(fam, profile, geo).sample(rng)
    out = _outdir(args)
    path = out / f"sample_N{args.N}_seed{args.seed}.txt"
    write_snapshot(path, eta, args.m, args.seed, 0.0)
    print(f"wrote {path} (total particles: {eta.total})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
