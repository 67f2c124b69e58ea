"""Cavity and qubit tomography.

Wigner maps use the displaced-parity convention ``W(alpha) = (2/pi) <D(alpha) P D(alpha)^dag>``,
so vacuum peaks at ``2/pi``. Displacements are evaluated in a padded Fock space
so grid points near the truncation edge stay accurate.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.optimize

from .errors import DimensionError, FitError, TruncationError, ValidationError
from .hilbert import (
    GUARD_BAND,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    HilbertConfig,
    QuantumState,
    annihilation,
)
from .model import SystemParams, drift_hamiltonian, drive_hamiltonians
from .propagate import LEAKAGE_THRESHOLD, ControlPulse, leakage_metric, propagate_lindblad, total_unitary

WIGNER_NORM = 2 / np.pi
PAULIS = (np.eye(2, dtype=complex), SIGMA_X, SIGMA_Y, SIGMA_Z)


# ---------------------------------------------------------------------------
# Wigner function


@dataclass
class WignerMap:
    grid: np.ndarray
    values: np.ndarray
    convention: float = WIGNER_NORM

    @property
    def step(self) -> float:
        re = np.unique(self.grid.real)
        return float(re[1] - re[0]) if re.size > 1 else 0.0

    def integral(self) -> float:
        return float(np.sum(self.values) * self.step**2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re_alpha", "im_alpha", "W"])
        for a, v in zip(self.grid.reshape(-1), self.values.reshape(-1)):
            w.writerow([repr(float(a.real)), repr(float(a.imag)), repr(float(v))])
        return buf.getvalue()


def square_grid(extent: float, points: int) -> np.ndarray:
    """``points x points`` lattice of complex alpha over ``[-extent, extent]^2``; rows index Im."""
    x = np.linspace(-extent, extent, points)
    re, im = np.meshgrid(x, x, indexing="xy")
    return re + 1j * im


class _Displacer:
    """Fast ``D(alpha)`` in a padded space: ``D(r e^{i t}) = R(t) exp(r (a^dag - a)) R(t)^dag``."""

    def __init__(self, dim: int):
        self.dim = dim
        a = annihilation(dim)
        gen = 1j * (a.conj().T - a)
        self.w, self.v = np.linalg.eigh(gen)
        self.n = np.arange(dim)

    def radial(self, r: float, cols: Optional[int] = None) -> np.ndarray:
        """``exp(r (a^dag - a))``, optionally only its first ``cols`` columns."""
        vh = self.v.conj().T if cols is None else self.v[:cols].conj().T
        return (self.v * np.exp(-1j * r * self.w)) @ vh

    def __call__(self, alpha: complex) -> np.ndarray:
        ph = np.exp(1j * np.angle(alpha) * self.n)
        return (ph[:, None] * self.radial(abs(alpha))) * ph.conj()[None, :]


def _padded_dim(n: int, max_abs_alpha: float) -> int:
    return int(n + 30 + np.ceil(6 * max_abs_alpha**2 + 10 * max_abs_alpha))


def _cavity_matrix(state) -> np.ndarray:
    if isinstance(state, QuantumState):
        return state.density().cavity_reduced()
    if isinstance(state, DensityMatrix):
        return state.cavity_reduced()
    m = np.asarray(state, dtype=complex)
    if m.ndim == 1:
        m = np.outer(m, m.conj())
    return m


def wigner_at(state, alphas, guard: Optional[int] = None) -> np.ndarray:
    """Wigner values at arbitrary points for a state, density matrix or cavity matrix."""
    rho = _cavity_matrix(state)
    n = rho.shape[0]
    alphas = np.asarray(alphas, dtype=complex)
    flat = alphas.reshape(-1)
    if guard is not None and flat.size and np.max(np.abs(flat)) ** 2 > guard:
        raise TruncationError(f"grid extent beyond sqrt(cavity_dim - {GUARD_BAND})")
    amax = float(np.max(np.abs(flat))) if flat.size else 0.0
    m = _padded_dim(n, amax)
    disp = _Displacer(m)
    sign = (-1.0) ** np.arange(m)
    levels = np.arange(n)
    out = np.empty(flat.size)
    radii = np.round(np.abs(flat), 13)
    uniq, inverse = np.unique(radii, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(uniq.size + 1))
    for j, r in enumerate(uniq):
        idx = order[bounds[j] : bounds[j + 1]]
        # D(-alpha) = R(theta) exp(-r (a^dag - a)) R(theta)^dag; the outer
        # rotation commutes with parity, so only the inner one is applied
        e = disp.radial(-r, n)
        ph = np.exp(-1j * np.angle(flat[idx])[:, None] * levels[None, :])
        rot = ph[:, :, None] * rho[None] * ph.conj()[:, None, :]
        shifted = np.einsum("in,pnk,ik->pi", e, rot, e.conj(), optimize=True)
        out[idx] = WIGNER_NORM * np.real(shifted @ sign)
    return out.reshape(alphas.shape)


def wigner(state, grid: np.ndarray) -> WignerMap:
    """Wigner map on ``grid``; the extent must stay within ``sqrt(cavity_dim - 6)``."""
    if isinstance(state, (QuantumState, DensityMatrix)):
        guard = state.config.cavity_dim - GUARD_BAND
    else:
        guard = _cavity_matrix(state).shape[0] - GUARD_BAND
    grid = np.asarray(grid, dtype=complex)
    lim = np.sqrt(max(guard, 0)) * (1 + 1e-12)
    if np.max(np.abs(grid.real)) > lim or np.max(np.abs(grid.imag)) > lim:
        raise TruncationError(f"grid extent beyond sqrt(cavity_dim - {GUARD_BAND}) = {lim:.4g}")
    return WignerMap(grid, wigner_at(state, grid))


def radial_sign_changes(values: np.ndarray, tol: float = 1e-9) -> int:
    """Sign flips along a 1D cut, ignoring points with ``|W| <= tol``."""
    v = np.asarray(values, dtype=float)
    s = np.sign(v[np.abs(v) > tol])
    return int(np.sum(s[1:] != s[:-1]))


def radial_profile(state, radii: Sequence[float], n_angles: int = 64) -> np.ndarray:
    """Angular mean of W on circles of the given radii.

    Only the photon-number populations survive the average, so the profile
    shows the ring structure of a Fock-like state without the direction
    dependence that coherences between neighbouring Fock levels add to a cut.
    """
    r = np.asarray(radii, dtype=float)
    theta = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    return wigner_at(state, r[:, None] * np.exp(1j * theta)[None, :]).mean(axis=1)


def rotational_asymmetry(state, grid: np.ndarray, order: int) -> float:
    """Max ``|W(alpha e^{2 pi i / order}) - W(alpha)|`` over the grid points."""
    grid = np.asarray(grid, dtype=complex)
    a = wigner_at(state, grid)
    b = wigner_at(state, grid * np.exp(2j * np.pi / order))
    return float(np.max(np.abs(a - b)))


# ---------------------------------------------------------------------------
# Photon-number readout


@dataclass
class PhotonDistribution:
    probabilities: np.ndarray
    provenance: str
    shots: Optional[int] = None
    raw_excited: Optional[np.ndarray] = None
    selectivity_ok: bool = True

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.probabilities.size), self.probabilities))


def poisson(nbar: float, size: int) -> np.ndarray:
    """``P(n) = e^{-nbar} nbar^n / n!`` for ``n < size``."""
    from scipy.stats import poisson as _p

    return _p.pmf(np.arange(size), nbar)


def fit_poisson(probabilities: Sequence[float]) -> float:
    """Least-squares mean photon number of a Poisson distribution."""
    p = np.asarray(probabilities, dtype=float)
    if p.size < 2:
        raise FitError("need at least two Fock populations")
    # start at the sample mean; a global bounded search can land on the flat
    # tail where every P(n) underflows
    mean = float(np.sum(np.arange(p.size) * p) / np.sum(p))
    res = scipy.optimize.least_squares(
        lambda nb: poisson(nb[0], p.size) - p, [mean], bounds=([0.0], [float(p.size)]), xtol=1e-15, ftol=1e-15, gtol=1e-15
    )
    return float(res.x[0])


def _selective_pulse(n: int, params: SystemParams, sigma: float, dt: float) -> ControlPulse:
    t = np.arange(-4 * sigma, 4 * sigma, dt) + dt / 2
    env = np.exp(-(t**2) / (2 * sigma**2))
    eps = np.pi / (np.sum(env) * dt)
    # |g,n> <-> |e,n> sits at -n chi in the frame; resonance needs u ~ exp(+i n chi t)
    tt = t - t[0]
    u = eps * env * np.exp(1j * n * params.chi_sq * tt)
    return ControlPulse.from_complex(u, np.zeros_like(u), dt=dt)


def photon_distribution(
    state: Union[QuantumState, DensityMatrix],
    mode: str = "ideal",
    params: Optional[SystemParams] = None,
    shots: Optional[int] = None,
    seed: int = 0,
    sigma: float = 1e-6,
    dt: float = 10e-9,
) -> PhotonDistribution:
    """Fock populations, either projected exactly or read out with selective pi-pulses.

    The selective mode applies a Gaussian qubit pi-pulse at the ``n``-photon
    dispersive line for each ``n``, passes the result through the readout
    assignment channel, inverts that channel, and normalizes.
    """
    rho = state.density() if isinstance(state, QuantumState) else state
    config = rho.config
    if mode == "ideal":
        p = rho.populations().sum(axis=0)
        return PhotonDistribution(np.clip(p, 0, None) / np.sum(p), "ideal")
    if mode != "selective_pulse":
        raise ValidationError(f"unknown mode {mode!r}")
    params = params or SystemParams()
    bandwidth = 1 / (2 * np.pi * sigma)
    chi_hz = params.chi_sq / (2 * np.pi)
    ok = bandwidth <= 0.5 * chi_hz
    if not ok:
        warnings.warn(
            f"selective pulse bandwidth {bandwidth:.3g} Hz is not << chi/2pi = {chi_hz:.3g} Hz", RuntimeWarning, stacklevel=2
        )
    h0 = drift_hamiltonian(params, config)
    drives = drive_hamiltonians(config)
    eg, ee = params.readout_error_g, params.readout_error_e
    rng = np.random.default_rng(seed)
    raw = np.empty(config.cavity_dim)
    for n in range(config.cavity_dim):
        u = total_unitary(h0, drives, _selective_pulse(n, params, sigma, dt))
        out = u @ rho.matrix @ u.conj().T
        pe = float(np.real(np.trace(out.reshape(2, config.cavity_dim, 2, config.cavity_dim)[1, :, 1, :])))
        p_read = eg * (1 - pe) + (1 - ee) * pe
        if shots is not None:
            p_read = rng.binomial(shots, np.clip(p_read, 0, 1)) / shots
        raw[n] = p_read
    est = np.clip((raw - eg) / (1 - eg - ee), 0.0, None)
    total = np.sum(est)
    if total <= 0:
        raise FitError("no excitation detected in any Fock line")
    return PhotonDistribution(est / total, "selective_pulse", shots, raw, ok)


# ---------------------------------------------------------------------------
# Maximum-likelihood reconstruction


@dataclass
class MLEResult:
    rho: np.ndarray
    log_likelihood: List[float]
    iterations: int
    converged: bool
    rank_deficient: bool = False


def parity_povm(alphas: Sequence[complex], dim: int) -> np.ndarray:
    """Displaced parity projectors ``D(a) (I + P)/2 D(a)^dag`` restricted to ``dim`` levels.

    Returns shape ``(len(alphas), 2, dim, dim)`` with the even outcome first.
    """
    alphas = np.asarray(alphas, dtype=complex).reshape(-1)
    amax = float(np.max(np.abs(alphas))) if alphas.size else 0.0
    m = _padded_dim(dim, amax)
    disp = _Displacer(m)
    sign = (-1.0) ** np.arange(m)
    out = np.empty((alphas.size, 2, dim, dim), dtype=complex)
    for i, a in enumerate(alphas):
        d = disp(a)[:dim, :]
        par = (d * sign) @ d.conj().T
        par = 0.5 * (par + par.conj().T)
        out[i, 0] = 0.5 * (np.eye(dim) + par)
        out[i, 1] = 0.5 * (np.eye(dim) - par)
    return out


def mle_reconstruct(
    measurements: Sequence,
    dim: Union[int, HilbertConfig],
    max_iters: int = 5000,
    tol: float = 1e-10,
    initial_step: float = 1.0,
    max_step: float = 1e8,
) -> MLEResult:
    """R-rho-R maximum-likelihood estimate of the cavity state with a step search.

    ``measurements`` holds ``(alpha, parity)`` pairs where ``parity`` is the
    measured displaced-parity expectation in ``[-1, 1]``. Each iteration maps
    ``rho -> R_t rho R_t`` with ``R_t = I + t (R - I)``: ``t < 1`` is the diluted
    iteration, ``t = 1`` the plain fixed point and ``t > 1`` over-relaxes it.
    Any Hermitian ``R_t`` keeps ``rho`` positive, so ``t`` is free: it doubles
    after an accepted step and halves until the likelihood does not drop, which
    keeps the log-likelihood history non-decreasing.
    """
    d = dim.cavity_dim if isinstance(dim, HilbertConfig) else int(dim)
    alphas = np.array([m[0] for m in measurements], dtype=complex)
    par = np.clip(np.array([m[1] for m in measurements], dtype=float), -1.0, 1.0)
    freqs = np.stack([(1 + par) / 2, (1 - par) / 2], axis=1)
    rank_def = alphas.size < d * d
    if rank_def:
        warnings.warn(f"{alphas.size} settings < {d * d} needed for support dimension {d}", RuntimeWarning, stacklevel=2)
    povm = parity_povm(alphas, d)
    rho = np.eye(d, dtype=complex) / d
    eye = np.eye(d)

    def probs(r):
        return np.clip(np.real(np.einsum("ksij,ji->ks", povm, r)), 1e-300, None)

    def loglik(p):
        mask = freqs > 0
        return float(np.sum(freqs[mask] * np.log(p[mask])))

    p = probs(rho)
    ll = [loglik(p)]
    step = initial_step
    converged = False
    n_iter = 0
    while n_iter < max_iters:
        rop = np.einsum("ks,ksij->ij", freqs / p, povm) / alphas.size
        while True:
            r_t = eye + step * (rop - eye)
            cand = r_t @ rho @ r_t
            cand = 0.5 * (cand + cand.conj().T)
            cand /= np.real(np.trace(cand))
            p_c = probs(cand)
            ll_c = loglik(p_c)
            if ll_c >= ll[-1] or step < 1e-12:
                break
            step *= 0.5
        if ll_c < ll[-1]:
            # no ascent step left: stationary to working precision
            converged = True
            break
        n_iter += 1
        gain = ll_c - ll[-1]
        rho, p = cand, p_c
        ll.append(ll_c)
        step = min(2 * step, max_step)
        if gain < tol:
            converged = True
            break
    return MLEResult(rho, ll, n_iter, converged, rank_def)


# ---------------------------------------------------------------------------
# Qubit process tomography and round benchmarks

CARDINAL_STATES = {
    "+z": np.array([1, 0], dtype=complex),
    "-z": np.array([0, 1], dtype=complex),
    "+x": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "-x": np.array([1, -1], dtype=complex) / np.sqrt(2),
    "+y": np.array([1, 1j], dtype=complex) / np.sqrt(2),
    "-y": np.array([1, -1j], dtype=complex) / np.sqrt(2),
}


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (css - 1) / k > 0)[0][-1]
    theta = (css[rho] - 1) / (rho + 1)
    return np.clip(v - theta, 0, None)


def nearest_physical(m: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD unit-trace matrix."""
    h = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(h)
    return (v * _project_simplex(w)) @ v.conj().T


def measured_bloch(rho_q: np.ndarray, error_g: float = 0.0, error_e: float = 0.0, shots=None, rng=None) -> np.ndarray:
    """Bloch vector read through the assignment channel after ideal pre-rotations."""
    r = np.real([np.trace(rho_q @ s) for s in PAULIS[1:]])
    p_g = (1 + r) / 2
    p_read_g = (1 - error_g) * p_g + error_e * (1 - p_g)
    if shots is not None:
        p_read_g = rng.binomial(shots, np.clip(p_read_g, 0, 1)) / shots
    return 2 * p_read_g - 1


def chi_from_io(inputs: Sequence[np.ndarray], outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Least-squares chi matrix in the {I, X, Y, Z} basis from input/output qubit states."""
    rows = []
    rhs = []
    for rin, rout in zip(inputs, outputs):
        cols = [(pm @ rin @ pn.conj().T).reshape(-1) for pm in PAULIS for pn in PAULIS]
        rows.append(np.array(cols).T)
        rhs.append(rout.reshape(-1))
    a = np.vstack(rows)
    b = np.concatenate(rhs)
    chi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return chi.reshape(4, 4)


def fidelity_process(chi_a: np.ndarray, chi_b: np.ndarray) -> float:
    """``Tr(chi_a chi_b)``; equals the process fidelity when one argument is pure."""
    return float(np.real(np.trace(chi_a @ chi_b)))


def chi_identity() -> np.ndarray:
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = 1
    return chi


def chi_from_unitary(u: np.ndarray) -> np.ndarray:
    """Pure chi matrix of a 2x2 unitary."""
    c = np.array([np.trace(p.conj().T @ u) / 2 for p in PAULIS])
    return np.outer(c, c.conj())


@dataclass
class ProcessResult:
    rounds: int
    process_matrix: np.ndarray
    process_fidelity: float
    fitted_f1: float = float("nan")
    nonphysical: bool = False
    decoherence: bool = False
    length_km: float = 0.0


@dataclass
class RoundFit:
    amplitude: float
    decay: float
    floor: float
    f1: float


def fit_round_decay(rounds: Sequence[int], fidelities: Sequence[float], floor: float = 0.25) -> RoundFit:
    """Fit ``F(k) = A p^k + floor``; ``F1 = A p + floor`` rescaled to a unit-amplitude round.

    The per-round process fidelity is ``(1 + 3 p) / 4``, which removes state
    preparation and measurement errors absorbed in ``A``.
    """
    k = np.asarray(rounds, dtype=float)
    f = np.asarray(fidelities, dtype=float)
    if np.unique(k).size < 2:
        raise FitError("need at least two distinct round counts")
    y = f - floor
    if np.any(y <= 0):
        raise FitError("fidelities at or below the depolarized floor")
    slope, intercept = np.polyfit(k, np.log(y), 1)
    popt, _ = scipy.optimize.curve_fit(
        lambda kk, amp, p: amp * p**kk + floor, k, f, p0=[np.exp(intercept), np.exp(slope)], maxfev=10000
    )
    amp, p = float(popt[0]), float(popt[1])
    return RoundFit(amp, p, floor, (1 + 3 * p) / 4)


def process_results_csv(results: Sequence[ProcessResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rounds", "process_fidelity", "fitted_F1", "decoherence_flag", "length_km"])
    for r in results:
        w.writerow([r.rounds, repr(r.process_fidelity), repr(r.fitted_f1), int(r.decoherence), repr(r.length_km)])
    return buf.getvalue()


def process_benchmark(
    encode: ControlPulse,
    decode: ControlPulse,
    rounds_list: Sequence[int],
    system: SystemParams,
    config: HilbertConfig,
    decoherence: bool = False,
    link=None,
    length_km: Optional[float] = None,
    recalibrate: bool = True,
    shots: Optional[int] = None,
    seed: int = 0,
    floor: float = 0.25,
) -> List[ProcessResult]:
    """Process fidelity of ``(decode . encode)^k`` on the qubit for each ``k``.

    Pulses are device-level drives; when ``link`` is given they are converted
    to modulation waveforms and sent through the optical link at
    ``length_km``. Every input is a cardinal qubit state with an empty cavity.
    """
    from .optlink import apply_link, to_modulation

    if encode.dt != decode.dt:
        raise DimensionError("encode and decode pulses must share dt")
    rounds_list = sorted(int(k) for k in rounds_list)
    if not rounds_list or rounds_list[0] < 0:
        raise ValidationError("rounds must be non-negative")
    length = 0.0
    if link is not None:
        lp = link if length_km is None else link.at_length(length_km)
        length = lp.length_km
        encode = apply_link(to_modulation(encode, lp), lp, recalibrate=recalibrate)
        decode = apply_link(to_modulation(decode, lp), lp, recalibrate=recalibrate)
    round_pulse = encode.then(decode)

    h0 = drift_hamiltonian(system, config)
    drives = drive_hamiltonians(config)
    inputs = []
    states = []
    for vec in CARDINAL_STATES.values():
        inputs.append(np.outer(vec, vec.conj()))
        states.append(QuantumState.product(config, vec, [1.0]).density())

    outputs_by_k = {}
    max_k = rounds_list[-1]
    mats = [s.matrix for s in states]
    if not decoherence:
        u = total_unitary(h0, drives, round_pulse)
    else:
        from .model import collapse_operators

        cops = collapse_operators(system, config)
    worst_leak = 0.0
    for k in range(max_k + 1):
        if k in rounds_list:
            outputs_by_k[k] = [DensityMatrix(m, config).qubit_reduced() for m in mats]
        if k == max_k:
            break
        if not decoherence:
            mats = [u @ m @ u.conj().T for m in mats]
        else:
            # one summary warning below instead of one per input state and round
            res = propagate_lindblad(
                h0, drives, round_pulse, [DensityMatrix(m, config) for m in mats], cops, leakage_threshold=np.inf
            )
            mats = [r.final.matrix for r in res]
        worst_leak = max(worst_leak, max(leakage_metric(m, config.cavity_dim) for m in mats))
    if worst_leak > LEAKAGE_THRESHOLD:
        warnings.warn(
            f"truncation leakage up to {worst_leak:.3g} during the round benchmark (threshold {LEAKAGE_THRESHOLD:g})",
            RuntimeWarning,
            stacklevel=2,
        )

    rng = np.random.default_rng(seed)
    results = []
    for k in rounds_list:
        outs = []
        for rq in outputs_by_k[k]:
            b = measured_bloch(rq, system.readout_error_g, system.readout_error_e, shots, rng)
            outs.append(0.5 * (PAULIS[0] + b[0] * PAULIS[1] + b[1] * PAULIS[2] + b[2] * PAULIS[3]))
        raw = chi_from_io(inputs, outs)
        herm = 0.5 * (raw + raw.conj().T)
        chi = nearest_physical(herm)
        nonphys = bool(np.max(np.abs(chi - herm)) > 1e-6)
        results.append(
            ProcessResult(
                rounds=k,
                process_matrix=chi,
                process_fidelity=fidelity_process(chi, chi_identity()),
                nonphysical=nonphys,
                decoherence=decoherence,
                length_km=length,
            )
        )
    if len(rounds_list) >= 2:
        try:
            fit = fit_round_decay(rounds_list, [r.process_fidelity for r in results], floor)
            for r in results:
                r.fitted_f1 = fit.f1
        except (FitError, RuntimeError):
            pass
    return results
