"""Command-line orchestration.

Subcommands: synth | train | attack | explain | defend | evaluate |
compare | pipeline. Every subcommand takes --config PATH (JSON, see
configs/) and writes its artifacts plus a JSON manifest under the
configured output directory.

Exit codes: 0 success, 1 usage/config error, 2 data error (missing or
corrupt artifacts, provenance mismatch), 3 numerical failure.

AMCGUARD_THREADS caps the BLAS thread pool (set before numpy loads).
"""

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _apply_thread_env():
    n = os.environ.get("AMCGUARD_THREADS")
    if n:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="amcguard", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, eps=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="run configuration JSON")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config's master seed")
        if eps:
            sp.add_argument("--epsilon", type=float, default=None,
                            help="attack level (default: every configured level)")
        return sp

    add("synth", "generate the tiny_train/tiny_test/adv_data splits")
    add("train", "train the classifier on tiny_train")
    sp = add("attack", "FGSM-attack tiny_test and adv_data", eps=True)
    sp.add_argument("--split", choices=["tiny_test", "adv_data", "both"], default="both")
    add("explain", "attribution tensor for the attacked tiny_test", eps=True)
    add("defend", "negative-point pruning + fine-tuning", eps=True)
    sp = sub.add_parser("evaluate", help="accuracy + confusion of a model on a dataset")
    sp.add_argument("--config", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    add("compare", "all four baseline arms at every attack level")
    add("pipeline", "synth -> train -> attack -> explain -> defend -> compare + figures")
    return p


def main(argv=None) -> int:
    _apply_thread_env()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits on usage errors and --help
        return int(exc.code or 0)

    from filelock import FileLock

    from . import commands
    from .errors import (
        AmcGuardError,
        ConfigError,
        DataFormatError,
        NumericalError,
        ProvenanceError,
    )

    try:
        cfg = commands.load_config(args.config)
        os.makedirs(cfg.output_dir, exist_ok=True)
        lock = FileLock(os.path.join(cfg.output_dir, ".amcguard.lock"))
        with lock:
            handler = getattr(commands, f"cmd_{args.command}")
            handler(cfg, args)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ProvenanceError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AmcGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
