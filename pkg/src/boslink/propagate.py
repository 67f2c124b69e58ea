"""Piecewise-constant time evolution.

Each segment ``k`` evolves under ``H0 + sum_j u[k, j] H_j`` for ``dt`` seconds.
Closed-system propagation diagonalizes every segment Hamiltonian (batched
``eigh``); open-system propagation integrates the Lindblad equation with a
fixed-step RK4 at no more than ``dt / 4`` per step.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse

from .errors import DimensionError, NonFiniteError, StepSizeError, ValidationError
from .hilbert import DensityMatrix, QuantumState

CHANNELS = ("qubit_I", "qubit_Q", "cavity_I", "cavity_Q")
DEFAULT_DT = 2e-9
LEAKAGE_THRESHOLD = 1e-4
# 2 pi x 1 MHz, the CSV amplitude unit
CSV_AMP_UNIT = 2 * np.pi * 1e6


@dataclass(frozen=True, eq=False)
class ControlPulse:
    """Real I/Q amplitudes (rad/s) per segment for the four drive channels.

    ``amplitudes`` has shape ``(n_segments, 4)`` in :data:`CHANNELS` order.
    ``t0`` is a start-time offset (e.g. link latency); it does not change
    the dynamics.
    """

    dt: float
    amplitudes: np.ndarray
    t0: float = 0.0
    amp_max: Optional[float] = None

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=float)
        if amps.ndim == 1 and amps.size == 0:
            amps = amps.reshape(0, 4)
        if amps.ndim != 2 or amps.shape[1] != len(CHANNELS):
            raise DimensionError(f"amplitudes must have shape (n_segments, 4), got {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise NonFiniteError("pulse amplitudes must be finite")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if self.amp_max is not None and amps.size and np.max(np.abs(amps)) > self.amp_max * (1 + 1e-12):
            raise ValidationError(f"pulse exceeds amp_max = {self.amp_max:.6g} rad/s")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zeros(cls, n_segments: int, dt: float = DEFAULT_DT, **kw) -> "ControlPulse":
        return cls(dt, np.zeros((n_segments, 4)), **kw)

    @classmethod
    def from_complex(cls, qubit, cavity, dt: float = DEFAULT_DT, **kw) -> "ControlPulse":
        q = np.asarray(qubit, dtype=complex).reshape(-1)
        c = np.asarray(cavity, dtype=complex).reshape(-1)
        if q.shape != c.shape:
            raise DimensionError("qubit and cavity envelopes must have equal length")
        return cls(dt, np.stack([q.real, q.imag, c.real, c.imag], axis=1), **kw)

    @property
    def n_segments(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def duration(self) -> float:
        return self.dt * self.n_segments

    @property
    def qubit(self) -> np.ndarray:
        return self.amplitudes[:, 0] + 1j * self.amplitudes[:, 1]

    @property
    def cavity(self) -> np.ndarray:
        return self.amplitudes[:, 2] + 1j * self.amplitudes[:, 3]

    def times(self) -> np.ndarray:
        """Segment start times including ``t0``."""
        return self.t0 + self.dt * np.arange(self.n_segments)

    def scaled(self, factor: float, t0: Optional[float] = None) -> "ControlPulse":
        return ControlPulse(self.dt, self.amplitudes * factor, self.t0 if t0 is None else t0)

    def refined(self, m: int) -> "ControlPulse":
        """Same waveform with every segment split into ``m`` equal pieces."""
        return ControlPulse(self.dt / m, np.repeat(self.amplitudes, m, axis=0), self.t0, self.amp_max)

    def then(self, other: "ControlPulse") -> "ControlPulse":
        """Concatenate ``other`` after this pulse (same ``dt``)."""
        if not np.isclose(self.dt, other.dt, rtol=1e-12, atol=0):
            raise DimensionError("cannot concatenate pulses with different dt")
        return ControlPulse(self.dt, np.vstack([self.amplitudes, other.amplitudes]), self.t0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t_ns",) + CHANNELS)
        for t, row in zip(self.times(), self.amplitudes):
            w.writerow([repr(float(t * 1e9))] + [repr(float(v / CSV_AMP_UNIT)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ControlPulse":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        header, body = rows[0], rows[1:]
        if tuple(header) != ("t_ns",) + CHANNELS:
            raise ValidationError(f"unexpected pulse CSV header {header}")
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
        if data.shape[0] < 2:
            raise ValidationError("pulse CSV needs at least two rows to recover dt")
        t = data[:, 0] * 1e-9
        dt = float(np.mean(np.diff(t)))
        return cls(dt, data[:, 1:] * CSV_AMP_UNIT, t0=float(t[0]))


@dataclass
class PropagationResult:
    final: Union[QuantumState, DensityMatrix]
    leakage: float
    leakage_flag: bool
    states: Optional[np.ndarray] = None
    propagators: Optional[np.ndarray] = None
    n_substeps: int = 1
    trace_drift: float = 0.0
    extra: dict = field(default_factory=dict)


def leakage_metric(state: Union[QuantumState, DensityMatrix, np.ndarray], cavity_dim: Optional[int] = None) -> float:
    """Population in the top two Fock levels, summed over both qubit branches."""
    if isinstance(state, (QuantumState, DensityMatrix)):
        pops = state.populations()
    else:
        arr = np.asarray(state)
        if cavity_dim is None:
            raise DimensionError("cavity_dim is required for raw arrays")
        diag = np.abs(arr) ** 2 if arr.ndim == 1 else np.real(np.diag(arr))
        pops = diag.reshape(2, cavity_dim)
    return float(np.sum(pops[:, -2:]))


def _check_ops(H0: np.ndarray, drives: Sequence[np.ndarray], dim: int) -> np.ndarray:
    if H0.shape != (dim, dim):
        raise DimensionError(f"drift is {H0.shape}, state space is {dim}")
    if len(drives) != len(CHANNELS):
        raise DimensionError(f"expected {len(CHANNELS)} drive operators, got {len(drives)}")
    stack = np.asarray(drives, dtype=complex)
    if stack.shape[1:] != (dim, dim):
        raise DimensionError("drive operators do not match the state space")
    return stack


def segment_hamiltonians(H0: np.ndarray, drives, amplitudes: np.ndarray) -> np.ndarray:
    return H0[None, :, :] + np.einsum("kj,jab->kab", amplitudes, np.asarray(drives, dtype=complex))


def segment_eigh(H0: np.ndarray, drives, amplitudes: np.ndarray):
    """Eigenvalues ``(K, D)`` and eigenvectors ``(K, D, D)`` of all segment Hamiltonians."""
    return np.linalg.eigh(segment_hamiltonians(H0, drives, amplitudes))


def segment_unitaries(H0: np.ndarray, drives, pulse: ControlPulse) -> np.ndarray:
    w, v = segment_eigh(H0, drives, pulse.amplitudes)
    return (v * np.exp(-1j * w * pulse.dt)[:, None, :]) @ np.conj(np.swapaxes(v, 1, 2))


def total_unitary(H0: np.ndarray, drives, pulse: ControlPulse, chunk: int = 512) -> np.ndarray:
    """Time-ordered product, later segments leftmost."""
    dim = H0.shape[0]
    u = np.eye(dim, dtype=complex)
    for start in range(0, pulse.n_segments, chunk):
        sub = ControlPulse(pulse.dt, pulse.amplitudes[start : start + chunk])
        for uk in segment_unitaries(H0, drives, sub):
            u = uk @ u
    return u


def propagate_unitary(
    H0: np.ndarray,
    drives,
    pulse: ControlPulse,
    psi0: Union[QuantumState, DensityMatrix],
    store_states: bool = False,
    cache_propagators: bool = False,
    leakage_threshold: float = LEAKAGE_THRESHOLD,
    chunk: int = 512,
) -> PropagationResult:
    """Closed-system evolution of a pure state (or a density matrix as ``U rho U^dag``).

    ``store_states`` keeps the state after every segment (index ``k`` is the
    state at time ``(k + 1) dt``).
    """
    config = psi0.config
    dim = config.total_dim
    _check_ops(H0, drives, dim)
    pure = isinstance(psi0, QuantumState)
    x = psi0.amplitudes.copy() if pure else np.array(psi0.matrix)
    states = [] if store_states else None
    props = [] if cache_propagators else None
    for start in range(0, pulse.n_segments, chunk):
        amps = pulse.amplitudes[start : start + chunk]
        w, v = segment_eigh(H0, drives, amps)
        phases = np.exp(-1j * w * pulse.dt)
        for k in range(amps.shape[0]):
            vk = v[k]
            if pure:
                x = vk @ (phases[k] * (vk.conj().T @ x))
            else:
                uk = (vk * phases[k]) @ vk.conj().T
                x = uk @ x @ uk.conj().T
            if store_states:
                states.append(x.copy())
            if cache_propagators:
                props.append((vk * phases[k]) @ vk.conj().T)
    final = QuantumState(x, config) if pure else DensityMatrix(0.5 * (x + x.conj().T), config)
    leak = leakage_metric(final)
    flag = leak > leakage_threshold
    if flag:
        warnings.warn(f"truncation leakage {leak:.3g} exceeds {leakage_threshold:g}", RuntimeWarning, stacklevel=2)
    return PropagationResult(
        final=final,
        leakage=leak,
        leakage_flag=flag,
        states=None if states is None else np.array(states),
        propagators=None if props is None else np.array(props),
    )


def _inf_norm(m: np.ndarray) -> np.ndarray:
    return np.max(np.sum(np.abs(m), axis=-1), axis=-1)


def choose_substeps(H0, drives, pulse: ControlPulse, collapse: Sequence[np.ndarray], max_phase: float = 0.05) -> int:
    """Substeps per segment: at least 4, and enough that ``h * ||L|| <= max_phase``.

    ``||L||`` is bounded by ``2 ||H|| + 2 sum ||c||^2`` with induced infinity norms.
    """
    if pulse.n_segments == 0:
        return 4
    hs = segment_hamiltonians(H0, drives, pulse.amplitudes)
    rate = 2 * float(np.max(_inf_norm(hs)))
    for c in collapse:
        rate += 2 * float(_inf_norm(c.conj().T @ c))
    return max(4, int(np.ceil(rate * pulse.dt / max_phase)))


def propagate_lindblad(
    H0: np.ndarray,
    drives,
    pulse: ControlPulse,
    rho0: Union[DensityMatrix, Sequence[DensityMatrix]],
    collapse: Sequence[np.ndarray] = (),
    n_substeps: Optional[int] = None,
    trace_tol: float = 1e-8,
    leakage_threshold: float = LEAKAGE_THRESHOLD,
    store_states: bool = False,
):
    """Integrate ``drho/dt = -i[H, rho] + sum_c (c rho c^dag - {c^dag c, rho} / 2)``.

    Accepts one density matrix or a list of them (evolved together); returns a
    :class:`PropagationResult` or a list of them accordingly.
    """
    batch = not isinstance(rho0, DensityMatrix)
    rhos = list(rho0) if batch else [rho0]
    config = rhos[0].config
    dim = config.total_dim
    _check_ops(H0, drives, dim)
    cs = [np.asarray(c, dtype=complex) for c in collapse]
    if n_substeps is None:
        n_substeps = choose_substeps(H0, drives, pulse, cs)
    if n_substeps < 4:
        raise StepSizeError("Lindblad integration requires at least 4 substeps per segment")
    h = pulse.dt / n_substeps

    loss = sum((c.conj().T @ c for c in cs), np.zeros((dim, dim), dtype=complex))
    # jump term sum_c c rho c^dag as one sparse superoperator on row-major vec(rho)
    jump = None
    for c in cs:
        term = scipy.sparse.kron(scipy.sparse.csr_matrix(c), scipy.sparse.csr_matrix(c.conj()), format="csr")
        jump = term if jump is None else jump + term
    r = np.array([x.matrix for x in rhos])
    tr0 = np.real(np.trace(r, axis1=1, axis2=2))
    stored = [] if store_states else None
    nb = r.shape[0]

    def rhs(heff, rho):
        # rho stays Hermitian, so -i(H rho - rho H^dag) = X + X^dag with X = -i H rho
        x = -1j * (heff @ rho)
        out = x + np.conj(np.swapaxes(x, 1, 2))
        if jump is not None:
            out += (jump @ rho.reshape(nb, dim * dim).T).T.reshape(nb, dim, dim)
        return out

    for k, hk in enumerate(segment_hamiltonians(H0, drives, pulse.amplitudes)):
        heff = hk - 0.5j * loss
        for _ in range(n_substeps):
            k1 = rhs(heff, r)
            k2 = rhs(heff, r + 0.5 * h * k1)
            k3 = rhs(heff, r + 0.5 * h * k2)
            k4 = rhs(heff, r + h * k3)
            r = r + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        tr = np.real(np.trace(r, axis1=1, axis2=2))
        drift = float(np.max(np.abs(tr - tr0)))
        purity = np.real(np.einsum("bij,bji->b", r, r))
        if not np.all(np.isfinite(r)) or drift > trace_tol or np.any(purity > tr0**2 * (1 + 1e-6)):
            raise StepSizeError(f"integration unstable at segment {k}: trace drift {drift:.3g}")
        if store_states:
            stored.append(r.copy())

    results = []
    for b, x in enumerate(r):
        x = 0.5 * (x + x.conj().T)
        final = DensityMatrix(x, config)
        leak = leakage_metric(final)
        flag = leak > leakage_threshold
        if flag:
            warnings.warn(f"truncation leakage {leak:.3g} exceeds {leakage_threshold:g}", RuntimeWarning, stacklevel=2)
        tr = float(np.real(np.trace(x)))
        results.append(
            PropagationResult(
                final=final,
                leakage=leak,
                leakage_flag=flag,
                states=None if stored is None else np.array([s[b] for s in stored]),
                n_substeps=n_substeps,
                trace_drift=abs(tr - tr0[b]),
            )
        )
    return results if batch else results[0]
