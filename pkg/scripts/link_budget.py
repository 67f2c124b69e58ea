"""Fiber vs coax loss, heat load and delay from 0 to 15 km.

Accepts the same options as ``boslink link-budget``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["link-budget", *sys.argv[1:]]))
