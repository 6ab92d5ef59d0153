"""Command-line interface: run scenes, extract metrics, run oracle cases.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, NumericalAbort


def _cmd_run(args) -> int:
    from . import scene
    cfg = scene.load(args.scene)
    summary = scene.run(cfg, args.out, t_end=args.t_end,
                        snapshot_interval=args.snapshot_every)
    for key, value in summary.rows():
        print(f"{key} = {value}")
    return 0


def _cmd_metrics(args) -> int:
    from . import scene
    out = scene.metrics_from_run(args.run, out_file=args.out)
    print(f"wrote {out}")
    return 0


def _cmd_validate(args) -> int:
    from . import validate
    if args.list or args.case is None:
        for name, doc in validate.list_cases():
            print(f"{name:28s} {doc}")
        return 0
    ok, detail = validate.run_case(args.case)
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {args.case}: {detail}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srwsim",
                                description="SPH retaining-wall collapse simulator")
    p.add_argument("--threads", type=int, default=None,
                   help="numba thread count (results are identical for any value)")
    p.add_argument("-v", "--verbose", action="store_true",
                   help="progress logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a scene file")
    pr.add_argument("--scene", required=True, help="scene file path")
    pr.add_argument("--out", required=True, help="output directory")
    pr.add_argument("--t-end", type=float, default=None,
                    help="override the scene's end time (s)")
    pr.add_argument("--snapshot-every", type=float, default=None,
                    help="override the snapshot interval (s)")
    pr.set_defaults(func=_cmd_run)

    pm = sub.add_parser("metrics", help="summarize a finished run directory")
    pm.add_argument("--run", required=True, help="run directory")
    pm.add_argument("--out", default=None, help="output CSV (default 'metrics.csv' in the run dir)")
    pm.set_defaults(func=_cmd_metrics)

    pv = sub.add_parser("validate", help="run a named analytic-oracle case")
    pv.add_argument("--case", default=None, help="case name (see --list)")
    pv.add_argument("--list", action="store_true", help="list available cases")
    pv.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        import numba
        numba.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
