"""Sweep the mass ratio c = ||u0||/||Q|| of c rho^{1/2} Q(rho x) across the threshold.

Writes one CSV row per ratio and reports where the runs switch from global to blow-up.

    python scripts/threshold_sweep.py --rho 3 --values 0.8,0.9,0.95,1.0,1.05,1.1,1.15,1.2
"""

import argparse

from nlsblowup import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho", type=float, default=3.0)
    ap.add_argument("--values", default="0.8,0.9,0.95,1.0,1.05,1.1,1.15,1.2")
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--points", type=int, default=2048)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = ex.ExperimentConfig.from_dict(dict(
        preset="Threshold31", grid=dict(dim=1, extent=16.0, points=args.points),
        initial=dict(kind="threshold", rho=args.rho), horizon=args.horizon))
    values = [float(v) for v in args.values.split(",") if v.strip()]
    out = ex.resolve_output(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ex.sweep(cfg, "initial.c", values, out / "threshold_sweep.csv", args.workers)
    for r in rows:
        print(f"c={r['value']:<5} blew_up={r['blew_up']!s:<5} reason={r['reason']:<14} "
              f"E0={r['E0']} {r['error']}")
    flags = [r["blew_up"] is True for r in rows]
    if True in flags:
        first = flags.index(True)
        monotone = all(flags[first:]) and not any(flags[:first])
        lo = rows[first - 1]["value"] if first else None
        print(f"transition between c={lo} and c={rows[first]['value']} (monotone: {monotone})")
    else:
        print("no blow-up in the sweep")


if __name__ == "__main__":
    main()
