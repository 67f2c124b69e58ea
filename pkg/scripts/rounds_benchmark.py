"""Process fidelity vs rounds of encoding and decoding.

Accepts the same options as ``boslink rounds-bench``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["rounds-bench", *sys.argv[1:]]))
