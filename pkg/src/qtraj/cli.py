"""Command line entry point: ``qtraj <mode> --config run.cfg [--out DIR] ...``."""

from __future__ import annotations

import argparse
import sys

from .config import FORMATS, MODES, ConfigError, load_config
from .run import run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

HELP = {
    "generate": "simulate trajectories and write their records and omniscient states",
    "reconstruct": "filter records (from records_file, or freshly generated) into trajectories",
    "average": "raw-average tomography with master-equation reference curves",
    "validate": "binned comparison of filter coordinates with ideal projective readouts",
    "histogram": "Bloch-plane histograms of reconstructed states",
    "sweep": "score a grid of filter efficiencies against validation data",
    "grid": "raw averages over the bundled (or given) drive x dephasing grid",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtraj", description="Monitored-qubit trajectory simulator.")
    sub = parser.add_subparsers(dest="mode", required=True, metavar="MODE")
    for mode in MODES:
        p = sub.add_parser(mode, help=HELP[mode], description=HELP[mode])
        p.add_argument("--config", required=True, metavar="PATH", help="flat key = value config file")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, metavar="N", help="master seed (overrides master_seed)")
        p.add_argument("--workers", type=int, metavar="N", help="worker processes")
        p.add_argument("--format", choices=FORMATS, help="output format")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"mode": args.mode, "out_dir": args.out, "master_seed": args.seed,
                 "workers": args.workers, "format": args.format}
    try:
        cfg = load_config(args.config, overrides=overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run(cfg)
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # any failure inside a run maps to one exit code
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for o in manifest.outputs:
        print(o["path"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
