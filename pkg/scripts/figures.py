#!/usr/bin/env python3
"""Plot-data CSVs (phi, phi_hat, rho, nu per bin) for the Cucker-Smale preset."""
from _common import run

if __name__ == "__main__":
    raise SystemExit(run("figures", "cucker-smale-a", __doc__))
