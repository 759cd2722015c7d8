"""``hamlearn`` command line: generate | learn | scaling | landscape | selftest."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import HamlearnError
from . import experiments as ex

COMMANDS = ("generate", "learn", "scaling", "landscape", "selftest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamlearn", description="Learn spin-chain Hamiltonians from "
                                     "simulated Pauli measurements.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry, e.g. protocol.M=200 (repeatable)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="data seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "learn":
            p.add_argument("--dataset", type=Path, default=None, help="dataset file to fit")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = args.out or Path("hamlearn-out") / args.command
    try:
        cfg = ex.resolve_config(args.config, args.overrides, args.seed)
        if args.command == "generate":
            path = ex.cmd_generate(cfg, out)
            print(f"wrote {path}")
        elif args.command == "learn":
            def progress(r, res):
                print(f"run {r}: loss {res.final_loss:.6f} after {res.adam_steps} ADAM steps and "
                      f"{res.bfgs_iterations} BFGS iterations ({res.message})", file=sys.stderr)

            summary = ex.cmd_learn(cfg, out, args.dataset, progress=progress)
            print(f"best loss {summary['best_loss']:.6f}; results in {out}")
            if "best_epsilon" in summary:
                print(f"best epsilon {summary['best_epsilon']:.4g}; runs with epsilon < 0.1: "
                      f"{summary['successes_eps_below_0_1']}/{summary['runs']}; separation: {summary['separation']}")
        elif args.command == "scaling":
            summary = ex.cmd_scaling(cfg, out, progress=lambda msg: print(msg, file=sys.stderr))
            print(f"slope {summary['slope']:.4f} from {summary['points']} points; results in {out}")
        elif args.command == "landscape":
            summary = ex.cmd_landscape(cfg, out)
            print(f"argmin cell {summary['argmin_cell']}, target cell {summary['target_cell']}; results in {out}")
        else:
            rows = ex.cmd_selftest(cfg, out)
            print("suite,metric,tolerance,pass")
            for name, metric, tol, ok in rows:
                print(f"{name},{metric:.3e},{tol:.1e},{'PASS' if ok else 'FAIL'}")
            failed = [r[0] for r in rows if not r[3]]
            if failed:
                print(f"failed suites: {', '.join(failed)}", file=sys.stderr)
                return 1
    except (HamlearnError, OSError) as exc:
        print(f"hamlearn {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
