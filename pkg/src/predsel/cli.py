"""Command line entry point: ``predsel run|truth-qoi|report|selftest|defaults``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import PredselError


def _common(parser):
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    parser.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    parser.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predsel", description=__doc__)
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a selection case end to end")
    _common(run)
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--case", choices=["1", "2", "3"])
    src.add_argument("--config", help="JSON scenario config")
    run.add_argument("--n-pop", type=int, help="TMCMC population size")

    tq = sub.add_parser("truth-qoi", help="print the truth max-velocity QoI")
    _common(tq)
    tq.add_argument("--config", help="JSON scenario config")

    rep = sub.add_parser("report", help="re-emit reports from a persisted run directory")
    _common(rep)
    rep.add_argument("run_dir")
    rep.add_argument("--format", nargs="+", choices=["json", "table", "plot"], default=["json", "table", "plot"])

    st = sub.add_parser("selftest", help="run the quick oracle checks")
    _common(st)

    dflt = sub.add_parser("defaults", help="dump the embedded default config for a case")
    _common(dflt)
    dflt.add_argument("--case", choices=["1", "2", "3"], default="1")
    return parser


def _config(args):
    from .scenario import ScenarioConfig

    if getattr(args, "config", None):
        cfg = ScenarioConfig.from_file(args.config)
    else:
        cfg = ScenarioConfig.for_case(getattr(args, "case", None) or "1")
    changes = {k: getattr(args, k) for k in ("seed", "out", "threads") if hasattr(args, k)}
    if getattr(args, "n_pop", None):
        changes["tmcmc"] = {**cfg.tmcmc, "n_pop": args.n_pop}
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * getattr(args, "verbose", 0)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            from .report import format_table
            from .scenario import run_scenario

            art = run_scenario(_config(args))
            sys.stdout.write(format_table(art))
            print(f"artifacts: {art.run_dir}")
        elif args.command == "truth-qoi":
            from .scenario import truth_qoi

            print(repr(truth_qoi(_config(args))))
        elif args.command == "report":
            from .report import emit_report
            from .scenario import load_artifacts

            art = load_artifacts(args.run_dir)
            out = getattr(args, "out", None) or args.run_dir
            for path in emit_report(art, args.format, out):
                print(path)
        elif args.command == "selftest":
            from .selftest import run_selftest

            return 0 if run_selftest() else 1
        elif args.command == "defaults":
            from .scenario import default_config

            print(json.dumps(default_config(args.case), indent=2, sort_keys=True))
    except PredselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
