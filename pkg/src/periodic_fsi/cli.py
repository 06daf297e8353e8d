"""Command line front end ``periodic-fsi``.

Usage::

    periodic-fsi <command> --config run.yaml [--out DIR] [--seed N]
                 [--threads N] [--strict] [--resume]

Environment overrides: ``PERIODIC_FSI_OUT`` (output directory) and
``PERIODIC_FSI_THREADS`` (thread count); explicit flags win.

Exit codes: 0 success, 2 configuration error, 3 solver error,
4 admissibility error (domain degeneration, leaving the admissible set,
forcing budget exceeded).
"""

import argparse
import logging
import os
import sys

COMMANDS = (
    "verify-geometry",
    "shell-spectrum",
    "verify-extension",
    "dump-basis",
    "assemble-only",
    "solve-periodic",
    "solve-cauchy",
    "solve-coupled",
    "report",
)

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser():
    p = argparse.ArgumentParser(prog="periodic-fsi", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (1 = serial)")
    p.add_argument("--strict", action="store_true",
                   help="reject unknown config keys (default: warn and ignore)")
    p.add_argument("--resume", action="store_true",
                   help="solve-coupled: continue from the checkpoint in the output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None:
        try:
            threads = int(os.environ.get("PERIODIC_FSI_THREADS", "1"))
        except ValueError:
            threads = 0
    if threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    # thread limits must be in place before numpy loads its BLAS
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)

    from .config import parse_config
    from .errors import FSIError, SchemaError
    from .io import to_jsonable
    from .runner import run

    try:
        cfg = parse_config(args.config, strict=args.strict)
    except SchemaError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return exc.exit_code
    if args.seed is not None:
        if args.seed < 0:
            print("config error: seed: must be a non-negative integer", file=sys.stderr)
            return 2
        cfg = cfg.replace(seed=args.seed)
    out = args.out or os.environ.get("PERIODIC_FSI_OUT") or cfg.output
    try:
        result = run(cfg, args.command, out, threads=threads, resume=args.resume)
    except FSIError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.command == "report":
        for chk in result["checks"]:
            status = "PASS" if chk["passed"] else "FAIL"
            print(f"[{status}] {chk['name']} ({chk['anchor']}): margin {to_jsonable(chk['margin'])}")
    print(f"{args.command}: outputs in {out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
