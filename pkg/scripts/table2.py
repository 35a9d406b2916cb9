#!/usr/bin/env python3
"""Learning-error table for the formation network with monomials (preset table2)."""
from _common import run

if __name__ == "__main__":
    raise SystemExit(run("learn", "table2", __doc__))
