# cli.py — command-line entry: spectrum / run / analyze / reproduce / sweep
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from typing import List, Optional

from src.errors import RotorsError
from src.service.commands import Workspace, cmd_analyze, cmd_run, cmd_spectrum, cmd_sweep, passed
from src.service.config import ExperimentConfig, Settings, load_config
from src.service.figures import FIGURES, cmd_reproduce

logger = logging.getLogger("cli")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value or .json configuration file")
    g = p.add_argument_group("configuration overrides")
    for f in fields(ExperimentConfig):
        # values are coerced by the config layer
        g.add_argument(f"--{f.name}", dest=f.name, default=None, metavar=f.type.replace("Optional[", "").rstrip("]").upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cli.py", description="Single Bohm trajectory of coupled confined rotors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="build/cache the many-body spectrum and its reports")
    _add_config_flags(p)
    p = sub.add_parser("run", help="sample an RPSE state and integrate one trajectory")
    _add_config_flags(p)
    p = sub.add_parser("analyze", help="histogram, G(tau), marginals, Markov and fluctuation checks")
    _add_config_flags(p)
    p.add_argument("--trajectory", help="trajectory CSV (default: <output_dir>/trajectory.csv)")
    p.add_argument("--state", help="state JSON (default: <output_dir>/state.json)")
    p = sub.add_parser("reproduce", help="data bundle for one figure or table")
    p.add_argument("figure", choices=FIGURES)
    _add_config_flags(p)
    p.add_argument("--out", help="bundle directory")
    p = sub.add_parser("sweep", help="run + analyze over several state seeds")
    _add_config_flags(p)
    p.add_argument("--seeds", required=True, help="comma-separated state seeds")
    p.add_argument("--processes", type=int, default=1)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    names = {f.name for f in fields(ExperimentConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def main(argv: Optional[List[str]] = None) -> int:
    settings = Settings.from_env()
    logging.basicConfig(level=getattr(logging, settings.log_level, logging.INFO),
                        format="[%(module)-12s] %(message)s")
    args = build_parser().parse_args(argv)
    try:
        ws = Workspace.open(settings)
        if args.command == "reproduce":
            if args.config:
                logger.info("reproduce uses canned configurations; --config is ignored")
            summary = cmd_reproduce(args.figure, ws, _overrides(args), args.out)
        else:
            config = load_config(args.config).with_overrides(**_overrides(args))
            if args.command == "spectrum":
                summary = cmd_spectrum(config, ws)
            elif args.command == "run":
                summary = cmd_run(config, ws)
            elif args.command == "analyze":
                summary = cmd_analyze(config, ws, args.trajectory, args.state)
            else:
                seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
                summary = cmd_sweep(config, ws, seeds, args.processes)
    except RotorsError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 2
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    if not passed(summary):
        failed = [k for k, v in summary.get("checks", {}).items() if not v]
        logger.warning("invariant checks failed: %s", ", ".join(failed))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
