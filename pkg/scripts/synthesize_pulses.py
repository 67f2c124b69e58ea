"""GRAPE encode/decode pulses for the Fock and binomial bases.

Accepts the same options as ``boslink grape-synth``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["grape-synth", *sys.argv[1:]]))
