#!/usr/bin/env python3
"""Coercivity constants of both presets at increasing T, written to <out>/<preset>/coercivity.csv."""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from _common import cli  # noqa: E402

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/coercivity")
    ap.add_argument("--threads", type=int, default=5)
    args = ap.parse_args()
    code = 0
    for name in ("cucker-smale-a", "formation-b"):
        argv = ["coercivity", "--preset", name, "--out", f"{args.out}/{name}",
                "--threads", str(args.threads)]
        for T in (1000, 10000, 100000):
            argv += ["--T", str(T)]
        code = code or cli.main(argv)
    raise SystemExit(code)
