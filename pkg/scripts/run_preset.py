"""Run one preset end to end: evolve, store the run, diagnose, print verdicts.

    python scripts/run_preset.py Threshold31 --out runs
    python scripts/run_preset.py Profile43 --which concentration,profile,rate
"""

import argparse
import logging

from nlsblowup import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("preset", choices=[p.value for p in ex.Preset if p != ex.Preset.CUSTOM])
    ap.add_argument("--out", default=None, help="output root (default $NLSBLOWUP_OUTPUT_DIR or runs)")
    ap.add_argument("--which", default=None, help="comma-separated diagnostics (default: all)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = ex.preset_config(args.preset)
    run_dir = ex.resolve_output(args.out) / cfg.preset.value
    res = ex.run_experiment(cfg, run_dir)
    r = res.report
    print(f"{run_dir}: blew_up={r.blew_up} reason={r.reason.value} t*={r.t_star_estimate}")
    which = args.which.split(",") if args.which else list(ex.DIAGNOSTICS)
    for name in which:
        try:
            v = ex.diagnose_run(run_dir, [name])[name]
        except ex.MissingSnapshotsError as e:
            print(f"  {name}: skipped ({e})")
            continue
        extra = {k: v[k] for k in v if k != "verdict" and not isinstance(v[k], (list, dict))}
        print(f"  {name}: {v['verdict']} {extra}")


if __name__ == "__main__":
    main()
