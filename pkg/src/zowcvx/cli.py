"""``zowcvx`` command line: run sweeps, diagnose stationarity, generate instances."""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import ExperimentSpec, configure_logging, diagnose_run, run_experiment
from .core import RngStream
from .errors import ConfigError, ZowcvxError
from .problems import generate_instance, write_instance

log = logging.getLogger("zowcvx")


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zowcvx", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment spec")
    run.add_argument("--spec", required=True, help="JSON experiment spec")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--seed", type=_nonneg_int, help="master seed (overrides seed)")
    run.add_argument("--parallel", type=_nonneg_int, default=1, help="worker processes")
    run.add_argument("--snapshot-stride", type=_nonneg_int,
                     help="store iterates every k steps (0 disables)")
    run.add_argument("--diagnose", action="store_true",
                     help="write stationarity.csv for each best run afterwards")

    diag = sub.add_parser("diagnose", help="Moreau-envelope stationarity of a finished run")
    diag.add_argument("run_dir")
    diag.add_argument("--rho-bar", type=float, help="envelope parameter (default: manifest value)")
    diag.add_argument("--stride", type=int, default=1, help="use every k-th snapshot step")
    diag.add_argument("--unsmoothed", action="store_true",
                      help="evaluate the envelope of the unsmoothed objective")

    gen = sub.add_parser("generate", help="write a planted instance to CSV")
    gen.add_argument("kind", choices=["phase", "blind"])
    gen.add_argument("d", type=int)
    gen.add_argument("m", type=int)
    gen.add_argument("--seed", type=_nonneg_int, default=0)
    gen.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            spec = ExperimentSpec.from_json(args.spec)
            if args.seed is not None:
                spec.seed = args.seed
            if args.snapshot_stride is not None:
                spec.snapshot_stride = args.snapshot_stride
            status, rows = run_experiment(spec, out_dir=args.out, parallel=max(args.parallel, 1),
                                          diagnose=args.diagnose)
            for r in rows:
                print(f"{r['problem']} d={r['d']} m={r['m']} {r['solver']}: "
                      f"best replica {r['best_replica']} final {r['final_objective']:.6g} "
                      f"(initial {r['initial_objective']:.6g})")
            return status
        if args.command == "diagnose":
            if args.stride < 1:
                raise ConfigError("stride must be >= 1", "stride")
            for path in diagnose_run(args.run_dir, rho_bar=args.rho_bar, stride=args.stride,
                                     smoothed=not args.unsmoothed):
                print(path)
            return 0
        inst = generate_instance(args.kind, args.d, args.m, RngStream(args.seed))
        write_instance(inst, args.out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ZowcvxError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
