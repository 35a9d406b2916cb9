#!/usr/bin/env python3
"""Distance-distribution panels under eta, omega, n and T sweeps (one sweep_<param>.csv each)."""
from _common import run

if __name__ == "__main__":
    raise SystemExit(run("simulate", "distribution-sweep", __doc__))
