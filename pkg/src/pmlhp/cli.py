"""Command-line entry point: ``pmlhp <study> --config FILE --out DIR --seed N``.

Exit status is 0 when the study ran and all its checks hold, 2 when it ran
but a checked property failed, and 1 on any runtime or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import STUDIES, load_config

log = logging.getLogger("pmlhp")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmlhp", description="PML Helmholtz hp-FEM studies")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STUDIES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        result = STUDIES[args.command](cfg, out=cfg.out)
    except Exception as exc:  # every runtime failure maps to exit status 1
        log.error("error: %s: %s", type(exc).__name__, exc)
        return 1
    for name, chk in result.checks.items():
        log.info("%s %s", "ok  " if chk["ok"] else "FAIL", name)
    log.info("wrote %d files to %s", len(result.files), cfg.out)
    return 0 if result.ok else 2


if __name__ == "__main__":
    sys.exit(main())
