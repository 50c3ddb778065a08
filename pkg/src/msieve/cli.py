"""Command line entry point: ``msieve <command> --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
4 audit failure.  On failure a JSON error record goes to stderr and, when
the output directory is known, to error.json.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import __version__
from .errors import ConfigError, MsieveError
from .experiments import COMMANDS, atomic_write, dump_json, load_config, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msieve", description=(
        "Gaussian-mixture sieve experiments: model selection, clustering, risk "
        "rates, approximation decay and lower-bound audits."))
    p.add_argument("--version", action="version", version=f"msieve {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the root seed")
    p.add_argument("--out", help="override the output directory")
    return p


def _fail(exc: MsieveError, out_dir) -> int:
    record = exc.to_dict()
    record["exit_code"] = exc.exit_code
    if out_dir is not None:
        try:
            atomic_write(out_dir / "error.json", dump_json(record))
        except OSError:
            pass
    print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)
    return exc.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = None
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if cfg.command != args.command:
            raise ConfigError(f"config is for {cfg.command!r}, not {args.command!r}")
        out_dir = cfg.output_dir
        manifest = run(cfg)
    except MsieveError as exc:
        return _fail(exc, out_dir)
    print(str(manifest))
    return 0


if __name__ == "__main__":
    sys.exit(main())
