"""Command-line interface.

Subcommands: ``check`` (invariant suite), ``reduce`` (minimize the reduced
energy), ``full3d`` (minimize the tube energy), ``rod`` (integrate the rod
frame system), ``gamma`` (thickness sweep).  Exit codes: 0 success, 2
validation failure (bad config/arguments or failed checks), 1 runtime
error.

Determinism: given the same scenario file, flags and seed, every file
written under ``--out`` is byte-identical across runs; timing information
goes to stderr only.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import geometry as geo
from . import harness, scenarios
from .geometry import ConfigurationError, DomainError, GeometryError
from .optimize import (OptimizeOptions, default_bulk_init, default_reduced_init,
                       minimize_bulk, minimize_reduced)
from .reduced import eval_Elim
from .rodsolver import RodScenario, integrate_frame


def _build_parser():
    p = argparse.ArgumentParser(prog="thinlimit",
                                description="thin-body elastic energies and their reduced limits")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required,
                        help="scenario TOML file")
        sp.add_argument("--seed", type=int, default=harness.DEFAULT_SEED)
        sp.add_argument("--resolution", type=int, default=16)
        sp.add_argument("--normal-resolution", type=int, default=5)
        sp.add_argument("--max-iter", type=int, default=None)
        sp.add_argument("--tol", type=float, default=None, help="gradient tolerance")
        sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("check", help="run the invariant suite")
    sp.add_argument("--seed", type=int, default=harness.DEFAULT_SEED)

    sp = sub.add_parser("reduce", help="minimize the reduced energy")
    common(sp)

    sp = sub.add_parser("full3d", help="minimize the tube energy")
    common(sp)
    sp.add_argument("--h", type=float, default=0.1)

    sp = sub.add_parser("rod", help="integrate the rod frame system")
    common(sp)
    sp.add_argument("--steps", type=int, default=1024)

    sp = sub.add_parser("gamma", help="thickness sweep")
    common(sp)
    sp.add_argument("--h", default="0.2,0.1,0.05",
                    help="comma-separated decreasing thickness list")
    sp.add_argument("--base-resolution", type=int, default=12)
    sp.add_argument("--reduced-resolution", type=int, default=24)
    sp.add_argument("--bulk-max-iter", type=int, default=None)
    return p


def _options(args, file_options):
    raw = dict(file_options)
    opts = OptimizeOptions.from_dict(raw)
    if getattr(args, "max_iter", None) is not None:
        opts.max_iter = args.max_iter
    if getattr(args, "tol", None) is not None:
        opts.grad_tol = args.tol
    return opts


def _outdir(args):
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_report(report, path):
    lines = [f"value={harness.fmt(report.value)}"]
    for key in sorted(report.terms):
        lines.append(f"term.{key}={harness.fmt(report.terms[key])}")
    if report.violation_mean is not None:
        lines.append(f"violation_mean={harness.fmt(report.violation_mean)}")
        lines.append(f"violation_max={harness.fmt(report.violation_max)}")
    if report.grad_norm is not None:
        lines.append(f"grad_norm={harness.fmt(report.grad_norm)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_check(args):
    results = harness.run_check(seed=args.seed)
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 2
    print(f"all {len(results)} checks passed")
    return 0


def cmd_reduce(args):
    scenario, file_opts = scenarios.load_scenario(args.scenario)
    opts = _options(args, file_opts)
    rng = np.random.default_rng(args.seed)
    mesh = geo.build_surface_mesh(scenario, args.resolution)
    init = default_reduced_init(scenario, mesh, rng, noise=opts.init_noise)
    t0 = time.perf_counter()
    state, report = minimize_reduced(scenario, mesh, init, opts)
    print(f"reduced energy: {harness.fmt(report.value)}")
    print(f"constraint violation (max): {harness.fmt(report.violation_max)}")
    print(f"status: {report.meta['status']}", file=sys.stderr)
    print(f"runtime: {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    out = _outdir(args)
    if out:
        _write_report(report, os.path.join(out, "reduced_report.txt"))
        harness.write_trace(report.trace, os.path.join(out, "reduced_trace.csv"))
        harness.write_mesh_dump(state, os.path.join(out, "reduced_mesh.txt"))
    return 0


def cmd_full3d(args):
    scenario, file_opts = scenarios.load_scenario(args.scenario)
    opts = _options(args, file_opts)
    rng = np.random.default_rng(args.seed)
    mesh = geo.build_surface_mesh(scenario, args.resolution)
    grid = geo.build_tubular_grid(mesh, args.h, args.normal_resolution)
    init = default_bulk_init(scenario, grid, rng=rng, noise=opts.init_noise)
    t0 = time.perf_counter()
    state, report = minimize_bulk(scenario, grid, init, opts)
    print(f"tube energy (h={harness.fmt(args.h)}): {harness.fmt(report.value)}")
    print(f"status: {report.meta['status']}", file=sys.stderr)
    print(f"runtime: {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    out = _outdir(args)
    if out:
        _write_report(report, os.path.join(out, "full3d_report.txt"))
        harness.write_trace(report.trace, os.path.join(out, "full3d_trace.csv"))
    return 0


def cmd_rod(args):
    scenario, file_opts = scenarios.load_scenario(args.scenario)
    if scenario.name != "rod":
        raise ConfigurationError("the rod command needs a rod-family scenario")
    params = scenario.params
    rod = RodScenario(length=params["length"], curvature_fn=np.array(params["curvature"]),
                      torsion_fn=params["torsion"])
    state = integrate_frame(rod, args.steps)
    report = eval_Elim(state, scenario, mode="penalized")
    energy = report.terms["bending"] + report.terms["perp"]
    print(f"rod limit energy: {harness.fmt(energy)}")
    print(f"endpoint: {' '.join(harness.fmt(c) for c in state.F[-1])}")
    out = _outdir(args)
    if out:
        harness.write_mesh_dump(state, os.path.join(out, "rod_polyline.txt"))
        with open(os.path.join(out, "rod_frames.txt"), "w", newline="\n") as fh:
            for i in range(state.mesh.n_nodes):
                row = list(state.tangents[i]) + list(state.qperp[i].ravel())
                fh.write(" ".join(harness.fmt(v) for v in row) + "\n")
    return 0


def cmd_gamma(args):
    scenario, file_opts = scenarios.load_scenario(args.scenario)
    opts = _options(args, file_opts)
    h_list = [float(tok) for tok in str(args.h).split(",") if tok]
    t0 = time.perf_counter()
    rows, red_state, red_report = harness.gamma_sweep(
        scenario, h_list, opts,
        base_resolution=args.base_resolution,
        normal_resolution=args.normal_resolution,
        reduced_resolution=args.reduced_resolution,
        seed=args.seed,
        bulk_max_iter=args.bulk_max_iter,
    )
    print("h,resolution,min_Eh,Elim_star,gap,recovery_Eh")
    for r in rows:
        print(",".join([harness.fmt(r.h), str(r.resolution), harness.fmt(r.min_Eh),
                        harness.fmt(r.Elim_star), harness.fmt(r.gap),
                        harness.fmt(r.recovery_Eh)]))
    print(f"relative gap: {harness.fmt(harness.relative_gap(rows))}")
    print(f"runtime: {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    out = _outdir(args)
    if out:
        harness.write_gamma_csv(rows, os.path.join(out, "gamma.csv"))
        harness.write_trace(red_report.trace, os.path.join(out, "reduced_trace.csv"))
        harness.write_mesh_dump(red_state, os.path.join(out, "reduced_mesh.txt"))
    return 0


_COMMANDS = {
    "check": cmd_check,
    "reduce": cmd_reduce,
    "full3d": cmd_full3d,
    "rod": cmd_rod,
    "gamma": cmd_gamma,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, DomainError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - geometry/solver failures exit 1
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
