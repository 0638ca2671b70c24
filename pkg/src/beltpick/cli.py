"""Command-line front end.

Verbs: ``calibrate`` fits and dumps the camera-to-gantry map,
``learn`` runs the learning-curve protocol, ``clean`` runs the
pick-the-belt-clean protocol, ``report`` digests an output directory.

Exit codes: 0 success, 2 bad usage or config, 3 runtime failure.
"""

import argparse
import json
import sys

from .harness import ConfigError, fast_preset, load_config, \
    run_calibration_only, run_clean_experiment, \
    run_learning_experiment, summarize_run


def _add_common(p, needs_seed=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int,
                   required=False, help="experiment seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--fast", action="store_true",
                   help="apply the small fast preset before the config")
    del needs_seed


def build_parser():
    ap = argparse.ArgumentParser(
        prog="beltpick",
        description="conveyor pick-learning experiments")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("calibrate", help="fit the projective map")
    _add_common(p)

    p = sub.add_parser("learn", help="run the learning experiment")
    _add_common(p)
    p.add_argument("--attempts", type=int, help="attempt budget")

    p = sub.add_parser("clean", help="pick the belt clean")
    _add_common(p)
    p.add_argument("--model", help="pre-trained model bundle (.zrpk); "
                   "omitted: warm up first")

    p = sub.add_parser("report", help="summarize an output directory")
    p.add_argument("--out", required=True, help="directory to digest")
    return ap


def _config_from_args(args):
    overrides = {}
    if args.fast:
        overrides = fast_preset()
    if args.seed is not None:
        overrides = dict(overrides, seed=args.seed)
    if getattr(args, "attempts", None) is not None:
        overrides = dict(overrides, attempts=args.attempts)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "report":
            report = summarize_run(args.out)
            print(json.dumps(report, indent=2, sort_keys=True))
            return 0
        cfg = _config_from_args(args)
        if args.verb == "calibrate":
            model, path = run_calibration_only(cfg, args.out)
            print(f"calibration written to {path} "
                  f"(rmse {model.residual_rmse:.2e} m)")
        elif args.verb == "learn":
            res = run_learning_experiment(cfg, args.out)
            wins = sum(r.label for r in res.records)
            print(f"{len(res.records)} attempts, {wins} successes, "
                  f"{len(res.model_paths)} models -> {args.out}")
        elif args.verb == "clean":
            report = run_clean_experiment(cfg, args.out,
                                          model_path=args.model)
            print(f"deposited {report['deposited']}"
                  f"/{report['object_count']} "
                  f"in {report['attempts_used']} attempts "
                  f"(lost {report['lost_off_belt']})")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
