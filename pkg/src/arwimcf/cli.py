"""Command-line entry point ``arwimcf``.

Exit codes: 0 all enabled checks pass, 1 some check fails, 2 bad
configuration or arguments, 3 numerical failure (the trajectory computed so
far is kept on disk).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .analysis import CLAIM_NAMES, check_convergence_claims
from .background import certify_arw
from .cosmology import FluidConfig, solve_friedmann
from .errors import ArwError, ConfigurationError, FlowError
from .flow import FlowTrajectory, diagnostics, run
from .transition import advect_markers, build_transition_series, check_c3_matching

log = logging.getLogger("arwimcf")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
CONSTRAINT_TOL = 1e-8


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="run configuration (TOML)")
    p.add_argument("--out", help="output directory (default: [output].dir of the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arwimcf", description="Inverse mean curvature flow numerical lab.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    bg = sub.add_parser("background").add_subparsers(dest="action", required=True)
    p = bg.add_parser("check", help="certify the configured scale factor")
    _common(p)
    p.add_argument("--tol", type=float, default=1e-6, help="certifier tolerance")

    cos = sub.add_parser("cosmology").add_subparsers(dest="action", required=True)
    p = cos.add_parser("solve", help="solve the Friedmann constraint and export the scale factor")
    _common(p)
    p.add_argument("--tol", type=float, default=1e-4, help="certifier tolerance")

    fl = sub.add_parser("flow").add_subparsers(dest="action", required=True)
    for name in ("run", "resume"):
        p = fl.add_parser(name, help=f"{name} a flow")
        _common(p)
        p.add_argument("--t-end", type=float, help="override [flow].t_end")
        p.add_argument("--tol", type=float, help="override [flow].rel_tol")
        p.add_argument("--claims", help="all | none | comma-separated claim names")
        p.add_argument("--resume", required=name == "resume", help="snapshot file to continue from")

    p = sub.add_parser("analyze", help="evaluate the convergence claims of a saved run")
    _common(p)
    p.add_argument("--claims", help="all | none | comma-separated claim names")
    p.add_argument("--resume", help="snapshot file (default: OUT/snapshots.bin)")

    p = sub.add_parser("transition", help="check the mirrored-branch limit table of a saved run")
    _common(p)
    p.add_argument("--resume", help="snapshot file (default: OUT/snapshots.bin)")

    p = sub.add_parser("report", help="re-emit plots and summarize a saved report")
    _common(p, config_required=False)
    return parser


def _load(args):
    cfg = io.load_config(args.config)
    if getattr(args, "t_end", None) is not None:
        cfg.flow.t_end = float(args.t_end)
    if getattr(args, "tol", None) is not None and args.command == "flow":
        cfg.flow.rel_tol = float(args.tol)
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _enabled_claims(cfg, arg):
    spec = arg if arg is not None else ",".join(cfg.analysis.claims)
    spec = spec.strip()
    if spec == "all":
        return None
    if spec in ("none", ""):
        return []
    names = [s.strip() for s in spec.split(",") if s.strip()]
    unknown = sorted(set(names) - set(CLAIM_NAMES))
    if unknown:
        raise ConfigurationError(f"unknown claims {unknown}; known: {', '.join(CLAIM_NAMES)}")
    return names


def _report_base(cfg):
    return {"schema_version": io.SCHEMA_VERSION, "config": asdict(cfg), "hash": io.config_hash(cfg)}


def _all_pass(section: dict) -> bool:
    return all(bool(v.get("pass")) for v in section.values())


def _print_verdicts(title, section):
    for name, v in section.items():
        print(f"{'PASS' if v.get('pass') else 'FAIL'} {title}.{name}: measured={v.get('measured')!r} "
              f"predicted={v.get('predicted')!r} tolerance={v.get('tolerance')!r}")


def _trajectory(cfg, flow_cfg, snaps):
    """Rebuild a trajectory (with recomputed diagnostics) from saved snapshots."""
    if not snaps:
        raise ConfigurationError("snapshot file contains no complete records")
    traj = FlowTrajectory(flow_cfg)
    for s in snaps:
        traj.snapshots.append(s)
        traj.diagnostics.append(diagnostics(s.t, s.u, flow_cfg))
    last = snaps[-1]
    if last.index >= flow_cfg.n_records:
        traj.termination = "t_end"
    elif np.max(last.u) > -flow_cfg.u_floor:
        traj.termination = "u_floor"
    else:
        traj.termination = "incomplete"
    return traj


def _analyze(cfg, traj, enabled, out, report, timing):
    t0 = time.perf_counter()
    window = tuple(cfg.analysis.window) if cfg.analysis.window else None
    claims = {} if enabled == [] else check_convergence_claims(traj, window, enabled)
    report["claims"] = claims
    timing["analysis"] = time.perf_counter() - t0
    ok = _all_pass(claims)
    if cfg.transition.enabled:
        ok = _transition(cfg, traj, out, report, timing) and ok
    return ok


def _transition(cfg, traj, out, report, timing):
    t0 = time.perf_counter()
    seeds = cfg.transition.seeds or None
    markers = advect_markers(traj, seeds)
    series = build_transition_series(traj, markers)
    verdict = check_c3_matching(series)
    io.write_series_csv(series, out / "transition.csv")
    report["transition"] = verdict
    timing["transition"] = time.perf_counter() - t0
    return _all_pass(verdict)


def _finish(report, out, started, timing):
    timing["total"] = time.perf_counter() - started
    report["timing"] = timing
    io.write_report(report, out / "report.json")
    io.emit_plots(io.to_jsonable(report), out)


def cmd_background_check(args):
    cfg, out = _load(args)
    sf = io.build_scale_factor(cfg, Path(args.config).parent)
    cert = certify_arw(sf, tol=args.tol)
    report = _report_base(cfg)
    report["arw_certificate"] = cert.to_dict()
    io.write_report(report, out / "report.json")
    for name, c in cert.checks.items():
        print(f"{'PASS' if c.passed else 'FAIL'} arw_certificate.{name}: value={c.value!r} residual={c.residual!r}")
    return EXIT_OK if cert.passed else EXIT_FAIL


def cmd_cosmology_solve(args):
    cfg, out = _load(args)
    sfc = cfg.scale_factor
    if sfc.kind != "ode_derived" or sfc.fluid is None:
        raise ConfigurationError("config field 'scale_factor': cosmology solve needs kind = \"ode_derived\" "
                                 "and a [scale_factor.fluid] table")
    p, fl = cfg.params, sfc.fluid
    sol = solve_friedmann(FluidConfig(p.n, p.omega, fl.kappa, fl.rho0, fl.R_bar, fl.tau0, fl.f0))
    io.export_scale_factor(sol.sf, out / "scale_factor.json")
    cert = certify_arw(sol.sf, tol=args.tol)
    report = _report_base(cfg)
    report["arw_certificate"] = cert.to_dict()
    report["friedmann"] = sol.to_report()
    io.write_report(report, out / "report.json")
    ok = cert.passed and sol.constraint_residual <= CONSTRAINT_TOL
    print(f"{'PASS' if sol.constraint_residual <= CONSTRAINT_TOL else 'FAIL'} friedmann.constraint_residual: "
          f"{sol.constraint_residual:.3e} (tolerance {CONSTRAINT_TOL:g})")
    print(f"m = {sol.m!r}, phi limit = {sol.phi_limit_predicted!r}")
    for name, c in cert.checks.items():
        print(f"{'PASS' if c.passed else 'FAIL'} arw_certificate.{name}: value={c.value!r}")
    return EXIT_OK if ok else EXIT_FAIL


def _flow(args, resume):
    started = time.perf_counter()
    cfg, out = _load(args)
    enabled = _enabled_claims(cfg, args.claims)
    sf = io.build_scale_factor(cfg, Path(args.config).parent)
    flow_cfg = io.build_flow_config(cfg, sf)
    prefix = []
    if resume:
        prefix = io.read_snapshots(args.resume, flow_cfg.params, flow_cfg.domain.shape)
        if not prefix:
            raise ConfigurationError(f"{args.resume}: no complete snapshot records to resume from")
    (out / "config.toml").write_text(io.dump_config(cfg))
    report = _report_base(cfg)
    report["arw_certificate"] = certify_arw(sf).to_dict()
    timing = {}
    snaps = io.SnapshotWriter(out / "snapshots.bin", flow_cfg.params)
    diags = io.DiagnosticsWriter(out / "diagnostics.csv")

    def on_record(snap, rec):
        snaps.write(snap)
        diags.write(rec)

    t0 = time.perf_counter()
    try:
        for s in prefix:
            on_record(s, diagnostics(s.t, s.u, flow_cfg))
        traj = run(flow_cfg, resume=prefix or None, on_record=on_record)
    except FlowError as exc:
        if not exc.trajectory.snapshots:
            # the initial data itself violates the spacelike / F > 0 requirement
            raise ConfigurationError(f"config field 'initial': {exc}") from exc
        timing["flow"] = time.perf_counter() - t0
        report["termination"] = "error"
        report["error"] = str(exc)
        _finish(report, out, started, timing)
        print(f"numerical failure: {exc}; {len(exc.trajectory.snapshots)} snapshots kept in {out}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        snaps.close()
        diags.close()
    timing["flow"] = time.perf_counter() - t0
    report["termination"] = traj.termination
    report["steps"] = {"accepted": traj.steps, "rejected": traj.rejected}
    ok = _analyze(cfg, traj, enabled, out, report, timing)
    _finish(report, out, started, timing)
    _print_verdicts("claims", report["claims"])
    if "transition" in report:
        _print_verdicts("transition", report["transition"])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_flow_run(args):
    return _flow(args, resume=bool(args.resume))


def cmd_flow_resume(args):
    return _flow(args, resume=True)


def _saved(args):
    cfg, out = _load(args)
    sf = io.build_scale_factor(cfg, Path(args.config).parent)
    flow_cfg = io.build_flow_config(cfg, sf)
    path = args.resume or out / "snapshots.bin"
    snaps = io.read_snapshots(path, flow_cfg.params, flow_cfg.domain.shape)
    return cfg, out, _trajectory(cfg, flow_cfg, snaps)


def _merge_report(out, cfg):
    path = out / "report.json"
    report = io.read_report(path) if path.exists() else {}
    report.update(_report_base(cfg))
    return report


def cmd_analyze(args):
    started = time.perf_counter()
    cfg, out, traj = _saved(args)
    enabled = _enabled_claims(cfg, args.claims)
    report = _merge_report(out, cfg)
    report["termination"] = traj.termination
    timing = {}
    cfg.transition.enabled = False
    ok = _analyze(cfg, traj, enabled, out, report, timing)
    _finish(report, out, started, timing)
    _print_verdicts("claims", report["claims"])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_transition(args):
    started = time.perf_counter()
    cfg, out, traj = _saved(args)
    report = _merge_report(out, cfg)
    timing = {}
    ok = _transition(cfg, traj, out, report, timing)
    _finish(report, out, started, timing)
    _print_verdicts("transition", report["transition"])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_report(args):
    if args.config:
        _, out = _load(args)
    else:
        out = Path(args.out or "out")
    report = io.read_report(out / "report.json")
    written = io.emit_plots(report, out)
    ok = True
    for key in ("claims", "transition"):
        if key in report:
            _print_verdicts(key, report[key])
            ok = ok and _all_pass(report[key])
    if "arw_certificate" in report:
        ok = ok and bool(report["arw_certificate"].get("pass", True))
    print(f"{len(written)} plots written to {out / 'plots'}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    ("background", "check"): cmd_background_check,
    ("cosmology", "solve"): cmd_cosmology_solve,
    ("flow", "run"): cmd_flow_run,
    ("flow", "resume"): cmd_flow_resume,
    ("analyze", None): cmd_analyze,
    ("transition", None): cmd_transition,
    ("report", None): cmd_report,
}


def _thread_limit():
    raw = os.environ.get("ARWIMCF_THREADS")
    if raw is None or raw == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"ARWIMCF_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError(f"ARWIMCF_THREADS must be a positive integer, got {raw!r}")
    return value


def cli_main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ArgumentError as exc:
        print(f"arwimcf: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        limit = _thread_limit()
        if limit is None:
            return handler(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=limit):
            return handler(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArwError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(cli_main())
