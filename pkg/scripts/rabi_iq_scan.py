"""Qubit excitation over an I/Q modulation grid and Rabi-frequency linearity.

Accepts the same options as ``boslink rabi-scan``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["rabi-scan", *sys.argv[1:]]))
