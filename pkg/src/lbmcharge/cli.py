"""Command line entry point.

``lbmcharge run <config> [--workers N] [--output DIR] [--steps N] [--seed S]``
``lbmcharge validate <suite>``

Exit codes: 0 success, 1 failed validation check, 2 configuration error,
3 numeric divergence (including unstable particle motion). Without
``--output`` files go to ``$LBMCHARGE_OUTPUT`` if set, otherwise nothing is
written.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import ConfigurationError, NumericDivergenceError, SolverError, StabilityError

OUTPUT_ENV = "LBMCHARGE_OUTPUT"

log = logging.getLogger("lbmcharge")


def _parser():
    p = argparse.ArgumentParser(prog="lbmcharge", description="Charged particles in LBM flow.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("config")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--output", default=None)
    run.add_argument("--steps", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)

    from .driver.validation import SUITES

    val = sub.add_parser("validate", help="run an acceptance scenario")
    val.add_argument("suite", choices=sorted(SUITES))
    return p


def _run(args):
    from .driver.config import load_config, validate
    from .driver.simulation import Simulation

    cfg = load_config(args.config)
    validate(cfg)
    if args.workers < 1:
        raise ConfigurationError("--workers must be at least 1")
    output = args.output or os.environ.get(OUTPUT_ENV)
    sim = Simulation(cfg, workers=args.workers, seed=args.seed)
    every = max(1, (args.steps or cfg.steps) // 20)

    def progress(s):
        if s.step_count % every == 0:
            log.info("step %d particles %d residual %.3e", s.step_count, len(s.particles), s.residual)

    summary = sim.run(args.steps, output, progress)
    for k, v in summary.items():
        print(f"{k} {v}")
    return 0


def _validate(args):
    from .driver.validation import SUITES

    checks = SUITES[args.suite]()
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 1


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _run(args) if args.command == "run" else _validate(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericDivergenceError, SolverError, StabilityError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
