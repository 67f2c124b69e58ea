"""Rounds benchmark at 0, 5, 10 and 15 km with link recalibration.

Accepts the same options as ``boslink distance-sweep``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["distance-sweep", *sys.argv[1:]]))
