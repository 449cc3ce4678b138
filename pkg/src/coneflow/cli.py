"""Command line entry point: ``coneflow {simulate,expander,validate,diagnose}``.

Exit codes: 0 success, 2 validation or verdict failure, 3 non-convergence,
64 config error, 65 data error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_VERDICT = 2
EXIT_TIMEOUT = 3
EXIT_CONFIG = 64
EXIT_DATA = 65

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _setup(cfg_path):
    from .flow import make_initial_data
    from .io import build_domain, build_flow_config, read_config
    from .mesh import build_mesh

    cfg = read_config(cfg_path)
    domain = build_domain(cfg)
    mesh = build_mesh(domain, cfg["mesh.nr"], cfg["mesh.ns"])
    fcfg = build_flow_config(cfg)
    return cfg, domain, mesh, fcfg, make_initial_data


def _initial(cfg, domain, mesh, make_initial_data):
    return make_initial_data(
        mesh,
        domain,
        cfg["flow.alpha"],
        cfg["init.family"],
        epsilon=cfg["init.epsilon"],
        asym=cfg["init.asym"],
        path=cfg["init.file"],
        bc_tol=cfg["flow.bc_tol"],
    )


def _dt_for_monitors(mesh, fcfg, state):
    from .flow import FlowStepper

    return FlowStepper(mesh, fcfg, 1).step_size(state) if fcfg.scheme != "imex" else fcfg.dt


def cmd_simulate(args):
    from .io import output_dir, write_csv, write_meta, write_snapshot
    from .monitors import MonitorSeries
    from .flow import run

    cfg, domain, mesh, fcfg, make = _setup(args.config)
    initial, _ = _initial(cfg, domain, mesh, make)
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    series = MonitorSeries.from_initial(mesh, domain, fcfg.alpha, initial, _dt_for_monitors(mesh, fcfg, initial))
    files = []

    def snap(state):
        files.append(str(write_snapshot(out / f"snapshot_{state.step_count:06d}.txt", mesh, state.rho_tilde, state.tau)))

    snap(initial)
    res = run(mesh, domain, fcfg, initial, series=series, on_snapshot=snap if fcfg.snapshot_every else None)
    if not fcfg.snapshot_every or Path(files[-1]).name != f"snapshot_{res.state.step_count:06d}.txt":
        snap(res.state)
    files = sorted(set(files))
    write_csv(out / "monitors.csv", series.records)
    write_meta(out / "run_meta.json", cfg, series, Path(files[0]).name)
    hard = series.hard_failures()
    sr = series.support_ratio_ok()
    summary = {
        "termination_reason": res.reason,
        "final_tau": res.state.tau,
        "steps": res.steps,
        "final_speed_sup": res.residual,
        "final_phi_sup": series.records[-1].phiSup,
        "final_bc_residual": series.records[-1].bcResidual,
        "hard_failures": hard,
        "verdicts": series.verdict_table(),
        "files": [str(out / "monitors.csv"), str(out / "run_meta.json"), *files],
    }
    if res.failure is not None:
        summary["failure"] = str(res.failure)
        bad = res.failure.report.get("nodes")
        if bad is not None:
            summary["failure_nodes"] = [int(i) for i in bad]
        write_snapshot(out / "failure_state.txt", mesh, res.failure.report["rho_tilde"], res.failure.report["tau"])
        summary["files"].append(str(out / "failure_state.txt"))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"termination: {res.reason} at tau = {res.state.tau:.6g} after {res.steps} steps")
    print(f"hard monitor failures: {hard}; support-ratio check: {sr}")
    if res.failure is not None:
        print(f"step failure: {res.failure}", file=sys.stderr)
    ok = res.reason != "step-failure" and hard == 0 and sr is not False
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_expander(args):
    from .expander import compare_oracle, radial_expander_ode, relax_to_expander, ShootingFailure
    from .io import output_dir, write_snapshot

    cfg, domain, mesh, fcfg, make = _setup(args.config)
    initial, _ = _initial(cfg, domain, mesh, make)
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    prof = relax_to_expander(mesh, domain, fcfg, initial, cfg["expander.tau_max"], cfg["expander.tol"])
    write_snapshot(out / "expander.txt", mesh, prof.rho_tilde_inf, 0.0)
    summary = {
        "alpha": prof.alpha,
        "sigma": prof.sigma,
        "domain": {"R": domain.radius} if domain.is_round else {"profile": cfg["domain.profile_file"]},
        "residual_sup": prof.residual_sup,
        "bc_residual_sup": prof.bc_residual_sup,
        "tau": prof.tau,
        "steps": prof.steps,
    }
    if domain.is_round:
        try:
            ode = radial_expander_ode(domain.radius, prof.alpha, domain.sigma)
            diff, asym = compare_oracle(prof.rho_tilde_inf, ode, mesh)
            summary.update(f0=ode.f0, oracle_sup_diff=diff, asymmetry=asym)
        except ShootingFailure as exc:
            summary["oracle"] = f"unavailable: {exc}"
    (out / "expander_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK if prof.residual_sup < cfg["expander.tol"] else EXIT_TIMEOUT


def cmd_validate(args):
    from .flow import validate_state

    cfg, domain, mesh, fcfg, make = _setup(args.config)
    state, rep = _initial(cfg, domain, mesh, make)
    rep = validate_state(mesh, domain, state.rho_tilde, fcfg.alpha, fcfg.bc_tol)
    print(f"sigma = {domain.sigma:+d}, degeneracy margin = {domain.degeneracy_margin:.6g}")
    print(rep.summary())
    return EXIT_OK if rep.ok else EXIT_VERDICT


def cmd_diagnose(args):
    import numpy as np

    from .io import build_domain, read_csv_rows, read_meta, read_snapshot
    from .mesh import build_mesh
    from .monitors import COLUMNS, MonitorSeries
    from .flow import GraphField

    snap_path = Path(args.snapshot)
    meta_path = Path(args.meta) if args.meta else snap_path.parent / "run_meta.json"
    meta = read_meta(meta_path)
    cfg = meta["config"]
    domain = build_domain(cfg)
    mesh = build_mesh(domain, cfg["mesh.nr"], cfg["mesh.ns"])
    snap = read_snapshot(snap_path, mesh)
    init = read_snapshot(meta_path.parent / meta["initial_snapshot"], mesh)
    series = MonitorSeries.from_dict(mesh, meta["monitor"], init.rho_tilde)
    rec = series.evaluate(GraphField(snap.rho_tilde, snap.tau))
    row = rec.row()
    print(",".join(COLUMNS))
    print(",".join(row))
    csv_path = snap_path.parent / "monitors.csv"
    if csv_path.exists():
        head, rows = read_csv_rows(csv_path)
        match = [r for r in rows if r and r[0] == row[0]]
        if not match:
            print(f"no monitors.csv row with tau = {row[0]}")
        elif match[0] == row:
            print("matches monitors.csv")
        else:
            diff = [c for c, a, b in zip(COLUMNS, match[0], row) if a != b]
            print(f"differs from monitors.csv in: {', '.join(diff)}")
            return EXIT_VERDICT
    failed = rec.failed
    if failed:
        print("failed checks: " + ", ".join(failed))
    return EXIT_VERDICT if failed or not np.isfinite(rec.minH) else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="coneflow", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads (default: library default)")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (
        ("simulate", cmd_simulate, "run the flow and write monitors.csv, snapshots and summary.json"),
        ("expander", cmd_expander, "relax to the self-similar expander and compare with the radial oracle"),
        ("validate", cmd_validate, "build and check the initial data only"),
    ):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("config")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("diagnose", help="recompute the monitor record of a stored snapshot")
    sp.add_argument("snapshot")
    sp.add_argument("--meta", default=None, help="run_meta.json (default: next to the snapshot)")
    sp.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    from .errors import (
        ConfigError,
        ConvergenceTimeout,
        DataError,
        DomainError,
        InitialDataRejected,
        MeshError,
        ObliquenessError,
    )

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InitialDataRejected as exc:
        print(str(exc), file=sys.stderr)
        if exc.report is not None and hasattr(exc.report, "summary"):
            print(exc.report.summary(), file=sys.stderr)
        return EXIT_VERDICT
    except ObliquenessError as exc:
        print(f"obliqueness: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except DomainError as exc:
        print(f"domain rejected: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceTimeout as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
