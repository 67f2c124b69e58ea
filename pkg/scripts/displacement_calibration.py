"""Cavity displacement vs modulation amplitude with Poisson fits.

Accepts the same options as ``boslink displace-cal``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["displace-cal", *sys.argv[1:]]))
