"""qnk command line: scenario runner and oracle selftest.

Subcommands:
  qnk run <config> [--out DIR] [--parallel]   run every scenario
  qnk penrose <config> [--out DIR]            run the penrose_check scenarios
  qnk bgk <config> [--out DIR]                run the BGK-wave scenarios
  qnk selftest                                quadrature and oracle battery

Exit status: 0 on success, 1 when a declared assertion fails or a
numerical error is recorded, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from qnk.config import validate_config
from qnk.errors import ConfigError
from qnk.runner import run_all, run_selftest

_KIND_FILTERS = {
    "run": None,
    "penrose": ("penrose_check",),
    "bgk": ("bgk_build", "ion_variant"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnk",
        description="scenario runner for the quasineutral Vlasov-Poisson "
                    "laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    for command, blurb in (("run", "run every scenario in a config"),
                           ("penrose", "run only penrose_check scenarios"),
                           ("bgk", "run only bgk_build/ion_variant "
                                   "scenarios")):
        p = sub.add_parser(command, help=blurb)
        p.add_argument("config", help="path to the scenario config file")
        p.add_argument("--out", default=None,
                       help="output root (default: <config>.out next to "
                            "the config)")
        if command == "run":
            p.add_argument("--parallel", action="store_true",
                           help="run scenarios concurrently (they share "
                                "nothing); QNK_THREADS caps workers")

    sub.add_parser("selftest", help="run the quadrature identity and "
                                    "oracle suites")
    return parser


def _run_config(args, kinds) -> int:
    config = Path(args.config)
    outroot = Path(args.out) if args.out else \
        config.with_name(config.stem + ".out")
    try:
        scenarios = validate_config(config, echo_dir=outroot)
        if kinds is not None:
            scenarios = [s for s in scenarios if s.kind in kinds]
            if not scenarios:
                raise ConfigError(
                    f"{config}: no scenarios of kind {list(kinds)}")
        results = run_all(scenarios, outroot,
                          parallel=getattr(args, "parallel", False))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    worst = 0
    for r in results:
        if r.error:
            verdict = "ERROR"
            worst = max(worst, 1)
        elif r.passed:
            verdict = "PASS"
        else:
            verdict = "FAIL"
            worst = max(worst, 1)
        print(f"{r.name}: {verdict} ({r.outdir})")
        if r.error:
            print(f"  {r.error}")
        for o in r.assertions:
            if not o.passed:
                print(f"  assert {o.name} failed: value = {o.value}, "
                      f"threshold = {o.threshold}")
    return worst


def _run_selftest() -> int:
    failures = 0
    for name, ok, detail in run_selftest():
        print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "selftest":
        return _run_selftest()
    return _run_config(args, _KIND_FILTERS[args.command])


if __name__ == "__main__":
    raise SystemExit(main())
