"""Fock |10> and |0> + i|10> preparation, Wigner maps and MLE reconstruction.

Accepts the same options as ``boslink fock10``, e.g. ``--config run.toml --out results``.
"""
import sys

from boslink.cli import main

if __name__ == "__main__":
    sys.exit(main(["fock10", *sys.argv[1:]]))
