#!/usr/bin/env python3
"""Learning-error table for the Cucker-Smale network (preset table1, T up to 10^6).

The 10^6 row takes several minutes per seed; pass --T 100 --T 1000 --T 10000 for a quick run.
"""
from _common import run

if __name__ == "__main__":
    raise SystemExit(run("learn", "table1", __doc__))
