"""Command-line front door: groundstate, evolve, diagnose, sweep, report.

Exit codes: 0 success (including informative verdicts), 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .grid import GridError, GridSpec, PhysParams
from .groundstate import GroundStateError, Kind, pohozaev_residual, sharp_gn_constant, solve_ground_state
from .io import read_json, write_json, write_snapshot

log = logging.getLogger("nlsblowup")


class UsageError(Exception):
    pass


def _parse_values(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    return [float(v) for v in text.split(",") if v.strip()]


def _overrides(args) -> dict:
    """Flag overrides in the nested config layout; unset flags are omitted."""
    out: dict = {}

    def put(section, key, value):
        if value is not None:
            out.setdefault(section, {})[key] = value

    for key in ("lambda1", "lambda2", "p1", "p2", "dim"):
        put("params", key, getattr(args, key, None))
    if getattr(args, "dim", None) is not None:
        put("grid", "dim", args.dim)
    put("grid", "extent", getattr(args, "extent", None))
    put("grid", "points", getattr(args, "points", None))
    for key in ("dt_init", "snapshot_stride", "grad_blowup_factor"):
        put("stepper", key, getattr(args, key, None))
    for key in ("c", "rho"):
        put("initial", key, getattr(args, key, None))
    if getattr(args, "horizon", None) is not None:
        out["horizon"] = args.horizon
    if getattr(args, "delta", None) is not None:
        put("diag", "delta", args.delta)
    return out


def _config(args) -> ex.ExperimentConfig:
    over = _overrides(args)
    if getattr(args, "preset", None):
        over["preset"] = args.preset
    try:
        if getattr(args, "config", None):
            return ex.load_config(args.config, over)
        return ex.ExperimentConfig.from_dict(over)
    except (ValueError, TypeError, KeyError) as e:
        raise UsageError(str(e)) from e


def cmd_groundstate(args) -> int:
    N = args.dim or 1
    p1 = args.p1 if args.p1 is not None else 4 / N
    p2 = args.p2 if args.p2 is not None else p1 / 2
    try:
        params = PhysParams(-1.0, args.lambda2 or 0.0, p1, p2, N)
        grid = GridSpec(N, args.extent or (64.0 if args.kind != "critical" else 48.0),
                        args.points or (2048 if args.kind != "critical" else 1024))
        kind = Kind(args.kind)
    except (ValueError, GridError) as e:
        raise UsageError(str(e)) from e
    out = ex.resolve_output(args.out) / f"groundstate_{kind.value}"
    out.mkdir(parents=True, exist_ok=True)
    try:
        gs = solve_ground_state(kind, params, grid)
    except ValueError as e:
        raise UsageError(str(e)) from e
    cert = dict(kind=kind.value, params=params.as_dict(), grid=dict(dim=N, extent=grid.extent,
                points=grid.points), exponent=gs.exponent, residual_Linf=gs.residual_Linf,
                relative_residual=gs.relative_residual, iterations=gs.iterations, mass=gs.mass)
    if kind == Kind.CRITICAL:
        cert["sharp_gn_constant"] = sharp_gn_constant(gs)
        cert["pohozaev_residual"] = pohozaev_residual(gs)
    write_snapshot(out / "Q.bin", gs.field)
    write_json(out / "certificate.json", cert)
    print(f"{kind.value}: mass={gs.mass:.10g} residual={gs.residual_Linf:.3g} -> {out}")
    return 0


def cmd_evolve(args) -> int:
    cfg = _config(args)
    run_dir = Path(args.out) if args.out else None
    res = ex.run_experiment(cfg, run_dir)
    r = res.report
    print(f"{res.run_dir}: blew_up={r.blew_up} reason={r.reason.value} "
          f"final_grad={r.final_grad_norm:.6g} steps={len(res.trace) - 1}")
    return 0


def cmd_diagnose(args) -> int:
    which = args.which.split(",") if args.which else list(ex.DIAGNOSTICS)
    for w in which:
        if w not in ex.DIAGNOSTICS:
            raise UsageError(f"unknown diagnostic {w!r}; choose from {', '.join(ex.DIAGNOSTICS)}")
    verdicts = ex.diagnose_run(args.run_dir, which)
    for name, v in verdicts.items():
        print(f"{name}: {v['verdict']}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = _parse_values(args.values)
    out = ex.resolve_output(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ex.sweep(cfg, args.axis, values, out / "sweep.csv", args.workers)
    for r in rows:
        print(f"{args.axis}={r['value']}: blew_up={r['blew_up']} {r['error']}".rstrip())
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = read_json(run_dir / "manifest.json")
    from .io import verify_manifest

    bad = verify_manifest(run_dir)
    print(f"run {run_dir}  config {manifest['config_hash'][:12]}")
    rep = read_json(run_dir / "report.json")
    print(f"  blew_up={rep['blew_up']} reason={rep['reason']} t*={rep['t_star_estimate']}")
    for name, v in manifest.get("verdicts", {}).items():
        print(f"  {name}: {v}")
    if bad:
        print(f"  checksum mismatch: {', '.join(bad)}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlsblowup", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def physics(p):
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
        p.add_argument("--p1", type=float)
        p.add_argument("--p2", type=float)
        p.add_argument("--dim", type=int, choices=(1, 2))
        p.add_argument("--extent", type=float)
        p.add_argument("--points", type=int)

    def run_opts(p):
        p.add_argument("--config", help="YAML experiment file; flags override its values")
        p.add_argument("--preset", choices=[q.value for q in ex.Preset])
        physics(p)
        p.add_argument("--dt-init", dest="dt_init", type=float)
        p.add_argument("--snapshot-stride", dest="snapshot_stride", type=int)
        p.add_argument("--grad-blowup-factor", dest="grad_blowup_factor", type=float)
        p.add_argument("--c", type=float)
        p.add_argument("--rho", type=float)
        p.add_argument("--horizon", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--out")

    g = sub.add_parser("groundstate", help="solve and certify a ground state")
    g.add_argument("--kind", choices=[k.value for k in Kind], default="critical")
    physics(g)
    g.add_argument("--out")
    g.set_defaults(func=cmd_groundstate)

    e = sub.add_parser("evolve", help="evolve initial data and store the run")
    run_opts(e)
    e.set_defaults(func=cmd_evolve)

    d = sub.add_parser("diagnose", help="compute verdicts on a stored run")
    d.add_argument("run_dir")
    d.add_argument("--which", help=f"comma-separated subset of {','.join(ex.DIAGNOSTICS)}")
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("sweep", help="run a parameter sweep on a worker pool")
    run_opts(s)
    s.add_argument("--axis", default="initial.c", help="dotted config key, e.g. initial.c")
    s.add_argument("--values", default="", help="comma-separated values")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarise a stored run and verify checksums")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except GroundStateError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.history:
            print("residual history: " + " ".join(f"{r:.3g}" for r in e.history[-20:]),
                  file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
