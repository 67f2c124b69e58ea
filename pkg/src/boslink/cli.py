"""Command-line entry point: ``boslink <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import ConvergenceError, ValidationError
from .hilbert import HilbertConfig, matrix_to_json
from .tomography import mle_reconstruct, square_grid, wigner

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--decoherence", type=_on_off, metavar="on|off")
    common.add_argument("--length-km", type=float)
    common.add_argument("--threads", type=int)
    common.add_argument("--shots", type=int, help="finite-shot sampling (default: exact)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="boslink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("link-budget", parents=[common], help="fiber and coax loss, heat and delay vs length")
    sub.add_parser("rabi-scan", parents=[common], help="qubit P(e) over an I/Q grid and Rabi linearity")
    p = sub.add_parser("displace-cal", parents=[common], help="cavity displacement vs modulation amplitude")
    p.add_argument("--readout", choices=["ideal", "selective_pulse"], default="ideal")
    p = sub.add_parser("grape-synth", parents=[common], help="synthesize encode/decode pulses")
    p.add_argument("--basis", action="append", help="1..4 or binomial (repeatable)")
    p.add_argument("--strict", action="store_true", help="exit 3 if any pulse misses its target")
    sub.add_parser("fock-gallery", parents=[common], help="Fock and superposition state preparation")
    sub.add_parser("rounds-bench", parents=[common], help="process fidelity vs encode/decode rounds")
    sub.add_parser("distance-sweep", parents=[common], help="rounds benchmark across fiber lengths")
    sub.add_parser("fock10", parents=[common], help="prepare |10> and |0>+i|10>, Wigner maps and MLE")
    p = sub.add_parser("wigner", parents=[common], help="Wigner map of a stored density matrix")
    p.add_argument("rho", type=Path, help="JSON density matrix (rows, cols, flat re/im lists)")
    p.add_argument("--extent", type=float)
    p = sub.add_parser("reconstruct", parents=[common], help="MLE density matrix from displaced-parity CSV")
    p.add_argument("data", type=Path, help="CSV with columns re_alpha,im_alpha,parity")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=5000)
    return parser


def make_spec(args) -> harness.ExperimentSpec:
    overrides = {"out_dir": args.out}
    for name in ("seed", "decoherence", "length_km", "threads", "shots"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.config is not None:
        return harness.ExperimentSpec.load(args.config, **overrides)
    return harness.ExperimentSpec(**overrides)


def _grape_synth(spec, bases, strict) -> int:
    bases = [harness._parse_basis(b) for b in bases] if bases else list(spec.round_bases)
    rows = []
    missed = False
    for basis in bases:
        for decode in (False, True):
            prob = harness.encode_problem(spec, basis, decode)
            res = harness.synthesize(prob, spec.pulse_cache)
            missed |= not res.converged
            checked = harness.verified_fidelity(prob, res.pulse, spec.verify_margin)
            rows.append([prob.label, prob.key(), res.final_fidelity, checked, res.n_iters, res.converged])
            print(f"{prob.label}: F={res.final_fidelity:.6f} verified={checked:.6f} iters={res.n_iters} converged={res.converged}")
    cols = ["problem", "key", "fidelity", "verified_fidelity", "iterations", "converged"]
    text = harness.render_csv(spec, cols, rows, {"verify_margin": spec.verify_margin})
    files = []
    harness._write(spec, "grape_summary.csv", text, files)
    if strict and missed:
        raise ConvergenceError("at least one pulse did not reach its target fidelity")
    return EXIT_OK


def _wigner(spec, path: Path, extent) -> int:
    from .hilbert import matrix_from_json

    rho = matrix_from_json(json.loads(path.read_text()))
    dim = rho.shape[0]
    extent = extent if extent is not None else np.sqrt(max(dim - 6, 1))
    wmap = wigner(rho, square_grid(extent, spec.wigner_points))
    files = []
    harness._write(spec, f"wigner_{path.stem}.csv", harness.with_metadata(spec, wmap.to_csv()), files)
    print(f"W range [{wmap.values.min():.4f}, {wmap.values.max():.4f}], integral {wmap.integral():.6f}")
    return EXIT_OK


def _reconstruct(spec, path: Path, dim: int, max_iters: int) -> int:
    _, rows = harness.read_csv(path.read_text())
    data = [(complex(float(r[0]), float(r[1])), float(r[2])) for r in rows]
    res = mle_reconstruct(data, HilbertConfig(dim).cavity_dim, max_iters=max_iters)
    files = []
    harness._write(spec, f"rho_{path.stem}.json", json.dumps(matrix_to_json(res.rho), sort_keys=True) + "\n", files)
    print(f"iterations={res.iterations} converged={res.converged} loglik={res.log_likelihood[-1]:.8g}")
    if not res.converged:
        raise ConvergenceError(f"MLE did not converge in {max_iters} iterations")
    return EXIT_OK


def run(args) -> int:
    spec = make_spec(args)
    cmd = args.command
    if cmd == "link-budget":
        harness.run_link_budget(spec)
    elif cmd == "rabi-scan":
        r = harness.run_rabi_iq_scan(spec)
        print(f"slope={r.linearity.slope / harness.MHZ:.6f} MHz/unit R2={r.linearity.r_squared:.8f} angular_dev={r.angular_deviation:.2e}")
    elif cmd == "displace-cal":
        r = harness.run_displacement_calibration(spec, args.readout)
        print(f"slope={r.slope:.6f} per unit R2={r.r_squared:.8f}")
    elif cmd == "grape-synth":
        return _grape_synth(spec, args.basis, args.strict)
    elif cmd == "fock-gallery":
        for e in harness.run_fock_gallery(spec).entries:
            print(f"{e.label}: closed={e.closed_fidelity:.5f} open={e.open_fidelity:.5f}")
    elif cmd == "rounds-bench":
        for label, res in harness.run_rounds_benchmark(spec).curves.items():
            print(f"{label}: F1={res[0].fitted_f1:.5f} " + " ".join(f"F({r.rounds})={r.process_fidelity:.5f}" for r in res))
    elif cmd == "distance-sweep":
        for p in harness.run_distance_sweep(spec).points:
            print(f"{p.basis} {p.length_km:g} km: F1={p.fitted_f1:.6f}")
    elif cmd == "fock10":
        for e in harness.run_fock10(spec).entries:
            print(f"{e.kind}: F={e.prep_fidelity:.5f} rings={e.sign_changes} mle={e.mle_fidelity:.5f}")
    elif cmd == "wigner":
        return _wigner(spec, args.rho, args.extent)
    elif cmd == "reconstruct":
        return _reconstruct(spec, args.data, args.dim, args.max_iters)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
