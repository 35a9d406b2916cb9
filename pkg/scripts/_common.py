"""Shared argument handling for the experiment scripts."""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from couplearn import cli  # noqa: E402


def run(command: str, preset: str, description: str, extra=None) -> int:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--out", default=f"runs/{preset}")
    ap.add_argument("--threads", type=int, default=5)
    ap.add_argument("--T", type=int, action="append", dest="T_list",
                    help="override the trajectory lengths (repeatable)")
    args = ap.parse_args()
    argv = [command, "--preset", preset, "--out", args.out, "--threads", str(args.threads)]
    for T in args.T_list or []:
        argv += ["--T", str(T)]
    return cli.main(argv + list(extra or []))
