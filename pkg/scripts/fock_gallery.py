"""Fock and superposition state preparation with Wigner maps.

Accepts the same options as ``boslink fock-gallery``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["fock-gallery", *sys.argv[1:]]))
