"""Command line entry point: ``couplearn <command> [--preset NAME | --config PATH] ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .basis import BasisDomainError, NoInformativeSamples
from .config import PRESET_NOTES, PRESETS, ConfigError, ExperimentConfig, preset
from .network import CouplingDomainError
from .simulator import SimulationDiverged
from . import runner

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_SOLVER = 4

log = logging.getLogger("couplearn")


def _add_common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", metavar="NAME", help="built-in preset (see 'presets list')")
    src.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--seed", type=int, action="append",
                   help="run only this seed (repeatable); default: the config's seed list")
    p.add_argument("--out", metavar="DIR", help="output directory (default: runs/<name>)")
    p.add_argument("--threads", type=int, default=1, help="parallel seed jobs")
    p.add_argument("--bins", type=int, help="histogram bins B")
    p.add_argument("--burn-in", type=int, dest="burn_in", help="discarded leading steps")
    p.add_argument("--T", type=int, action="append", dest="T_list", metavar="T",
                   help="trajectory length (repeatable); default: the config's T list")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="couplearn",
                                 description="Simulate networked dynamics and learn coupling functions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in [("simulate", "write trajectories and distance histograms"),
                       ("learn", "fit couplings and write the per-(T, seed) report"),
                       ("figures", "write plot-data CSVs"),
                       ("coercivity", "estimate coercivity constants")]:
        _add_common(sub.add_parser(name, help=text))
    pr = sub.add_parser("presets", help="list or show built-in presets")
    pr.add_argument("action", choices=["list", "show"])
    pr.add_argument("name", nargs="?")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = preset(args.preset) if args.preset else ExperimentConfig.load(args.config)
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.bins is not None:
        cfg.bins = args.bins
    if args.burn_in is not None:
        cfg.burn_in = args.burn_in
    if args.T_list:
        cfg.T_list = list(args.T_list)
    cfg.out = args.out or str(Path("runs") / cfg.name)
    cfg.validate()
    return cfg


def _presets(args) -> int:
    if args.action == "list":
        for name in sorted(PRESETS):
            print(f"{name:20s} {PRESET_NOTES.get(name, '')}")
        return EXIT_OK
    if not args.name:
        raise ConfigError("'presets show' needs a preset name")
    print(json.dumps(preset(args.name).to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _print_rows(rows, keys) -> None:
    print("  ".join(f"{k:>12s}" for k in keys))
    for r in rows:
        print("  ".join(f"{r[k]:>12.5g}" if isinstance(r[k], (float, np.floating))
                        else f"{r[k]!s:>12s}" for k in keys))


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        return _presets(args)
    cfg = resolve_config(args)
    out = Path(cfg.out)
    if args.command == "simulate":
        paths = runner.cmd_simulate(cfg, out, args.threads)
        print(f"wrote {len(paths)} files to {out}")
    elif args.command == "learn":
        _, summary = runner.cmd_learn(cfg, out, args.threads)
        _print_rows(summary, ["T", "E_T", "E_T_excess", "l2_rho_error", "kl", "c_H"])
        print(f"report: {out / 'report.csv'}")
    elif args.command == "coercivity":
        rows = runner.cmd_coercivity(cfg, out, args.threads)
        _print_rows(rows, ["T", "seed", "c_H", "kernel_dim"])
    elif args.command == "figures":
        paths = runner.cmd_figures(cfg, out, args.threads)
        print(f"wrote {len(paths)} files to {out}")
    cfg.save(out / "config.json")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CouplingDomainError, BasisDomainError, SimulationDiverged) as err:
        print(f"domain error: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    except (NoInformativeSamples, np.linalg.LinAlgError) as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
