"""Truncated qubit (x) cavity linear algebra.

Basis ordering is qubit-major: ``index = q * cavity_dim + n`` with ``q = 0`` for
|g> and ``q = 1`` for |e>. Operators are plain complex ``numpy`` arrays; states
and density matrices carry their :class:`HilbertConfig` so mismatches are caught.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

from .errors import DimensionError, InvalidConfigError, NonFiniteError, TruncationError

GUARD_BAND = 6

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
# +1 on |g>, -1 on |e>
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |g><e|
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
PROJ_G = np.array([[1, 0], [0, 0]], dtype=complex)
PROJ_E = np.array([[0, 0], [0, 1]], dtype=complex)
QUBIT_ID = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class HilbertConfig:
    cavity_dim: int
    qubit_dim: int = 2

    def __post_init__(self):
        if int(self.cavity_dim) != self.cavity_dim or self.cavity_dim < 2:
            raise InvalidConfigError(f"cavity_dim must be an integer >= 2, got {self.cavity_dim}")
        if self.qubit_dim != 2:
            raise InvalidConfigError("only a two-level qubit is modeled")

    @property
    def total_dim(self) -> int:
        return self.qubit_dim * self.cavity_dim

    @classmethod
    def for_photons(cls, n_max: int, extra: int = 0) -> "HilbertConfig":
        """Smallest config whose truncation leaves the guard band above ``n_max``."""
        return cls(int(n_max) + GUARD_BAND + int(extra))

    def check_photons(self, n_max: int) -> None:
        if n_max + GUARD_BAND > self.cavity_dim:
            raise TruncationError(
                f"photon number {n_max} needs cavity_dim >= {n_max + GUARD_BAND}, have {self.cavity_dim}"
            )

    def index(self, q: int, n: int) -> int:
        if q not in (0, 1) or not 0 <= n < self.cavity_dim:
            raise DimensionError(f"basis label ({q}, {n}) outside the truncated space")
        return q * self.cavity_dim + n


def _cavity_dim(config: Union[HilbertConfig, int]) -> int:
    if isinstance(config, HilbertConfig):
        return config.cavity_dim
    if int(config) != config or config < 2:
        raise InvalidConfigError(f"cavity dimension must be an integer >= 2, got {config}")
    return int(config)


@dataclass(frozen=True, eq=False)
class QuantumState:
    amplitudes: np.ndarray
    config: HilbertConfig

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape != (self.config.total_dim,):
            raise DimensionError(f"expected {self.config.total_dim} amplitudes, got {amps.shape[0]}")
        if not np.all(np.isfinite(amps)):
            raise NonFiniteError("state amplitudes must be finite")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, config: HilbertConfig, amplitudes, normalize: bool = True) -> "QuantumState":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if normalize:
            norm = np.linalg.norm(amps)
            if norm == 0:
                raise DimensionError("cannot normalize the zero vector")
            amps = amps / norm
        return cls(amps, config)

    @classmethod
    def basis(cls, config: HilbertConfig, q: int, n: int) -> "QuantumState":
        amps = np.zeros(config.total_dim, dtype=complex)
        amps[config.index(q, n)] = 1.0
        return cls(amps, config)

    @classmethod
    def product(cls, config: HilbertConfig, qubit, cavity) -> "QuantumState":
        """Normalized product state from a length-2 qubit vector and a cavity vector.

        ``cavity`` may be shorter than ``cavity_dim``; it is zero-padded.
        """
        qv = np.asarray(qubit, dtype=complex).reshape(-1)
        cv = np.zeros(config.cavity_dim, dtype=complex)
        c_in = np.asarray(cavity, dtype=complex).reshape(-1)
        if qv.shape != (2,) or c_in.shape[0] > config.cavity_dim:
            raise DimensionError("product state factors do not fit the config")
        cv[: c_in.shape[0]] = c_in
        return cls.from_amplitudes(config, np.kron(qv, cv))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.config)

    def populations(self) -> np.ndarray:
        """|amplitude|^2 reshaped to (qubit, fock)."""
        return np.abs(self.amplitudes.reshape(2, self.config.cavity_dim)) ** 2


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    config: HilbertConfig

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        d = self.config.total_dim
        if m.shape != (d, d):
            raise DimensionError(f"expected a {d}x{d} density matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NonFiniteError("density matrix entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def check(self, herm_tol: float = 1e-12, trace_tol: float = 1e-10, eig_tol: float = 1e-10) -> None:
        """Raise if the matrix is not a valid state at the given tolerances."""
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise InvalidConfigError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1) > trace_tol:
            raise InvalidConfigError(f"trace {np.trace(m).real} != 1")
        if np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))) < -eig_tol:
            raise InvalidConfigError("density matrix has negative eigenvalues")

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def cavity_reduced(self) -> np.ndarray:
        n = self.config.cavity_dim
        r = self.matrix.reshape(2, n, 2, n)
        return np.einsum("qnqm->nm", r)

    def qubit_reduced(self) -> np.ndarray:
        n = self.config.cavity_dim
        r = self.matrix.reshape(2, n, 2, n)
        return np.einsum("pnqn->pq", r)

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).reshape(2, self.config.cavity_dim)


StateLike = Union[QuantumState, DensityMatrix]


def annihilation(config: Union[HilbertConfig, int]) -> np.ndarray:
    """Cavity lowering operator, ``<n-1|a|n> = sqrt(n)``."""
    n = _cavity_dim(config)
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1).astype(complex)


def number(config: Union[HilbertConfig, int]) -> np.ndarray:
    n = _cavity_dim(config)
    return np.diag(np.arange(n, dtype=float)).astype(complex)


def parity(config: Union[HilbertConfig, int]) -> np.ndarray:
    n = _cavity_dim(config)
    return np.diag((-1.0) ** np.arange(n)).astype(complex)


def identity(config: Union[HilbertConfig, int]) -> np.ndarray:
    return np.eye(_cavity_dim(config), dtype=complex)


def tensor(qubit_op: np.ndarray, cavity_op: np.ndarray) -> np.ndarray:
    """Embed ``qubit_op (x) cavity_op`` in the qubit-major composite basis."""
    q = np.asarray(qubit_op, dtype=complex)
    c = np.asarray(cavity_op, dtype=complex)
    if q.shape != (2, 2):
        raise DimensionError(f"qubit operator must be 2x2, got {q.shape}")
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
        raise DimensionError(f"cavity operator must be square, got {c.shape}")
    return np.kron(q, c)


def _is_hermitian(m: np.ndarray, tol: float = 1e-13) -> bool:
    scale = max(1.0, float(np.max(np.abs(m))))
    return bool(np.max(np.abs(m - m.conj().T)) <= tol * scale)


def expm(op: np.ndarray, scale: complex = 1.0) -> np.ndarray:
    """Matrix exponential ``exp(scale * op)``.

    (Anti-)Hermitian arguments go through ``eigh`` so unitaries stay unitary to
    machine precision; anything else uses Pade scaling-and-squaring.
    """
    a = np.asarray(op, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got {a.shape}")
    if not (np.all(np.isfinite(a)) and np.isfinite(scale)):
        raise NonFiniteError("expm input must be finite")
    m = scale * a
    if _is_hermitian(m):
        w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
        return (v * np.exp(w)) @ v.conj().T
    h = 1j * m
    if _is_hermitian(h):
        w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
        return (v * np.exp(-1j * w)) @ v.conj().T
    return scipy.linalg.expm(m)


def displacement(alpha: complex, config: Union[HilbertConfig, int], guard: bool = True) -> np.ndarray:
    """Truncated ``D(alpha) = exp(alpha a^dag - alpha^* a)`` on the cavity.

    With ``guard`` the call refuses ``|alpha|^2 > cavity_dim - 6``.
    """
    n = _cavity_dim(config)
    if guard and abs(alpha) ** 2 > n - GUARD_BAND:
        raise TruncationError(f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds cavity_dim - {GUARD_BAND} = {n - GUARD_BAND}")
    a = annihilation(n)
    return expm(alpha * a.conj().T - np.conj(alpha) * a)


def _as_density(x: StateLike) -> np.ndarray:
    return x.density().matrix if isinstance(x, QuantumState) else x.matrix


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity_state(a: StateLike, b: StateLike) -> float:
    """Uhlmann fidelity; reduces to ``|<a|b>|^2`` for pure states."""
    if a.config != b.config:
        raise DimensionError(f"config mismatch: {a.config} vs {b.config}")
    if isinstance(a, QuantumState) and isinstance(b, QuantumState):
        f = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    elif isinstance(a, QuantumState):
        f = np.real(np.vdot(a.amplitudes, b.matrix @ a.amplitudes))
    elif isinstance(b, QuantumState):
        f = np.real(np.vdot(b.amplitudes, a.matrix @ b.amplitudes))
    else:
        f = matrix_fidelity(a.matrix, b.matrix)
    return float(np.clip(f, 0.0, 1.0))


def matrix_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`` for raw matrices of equal shape."""
    s = _psd_sqrt(rho)
    inner = s @ sigma @ s
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    return float(np.clip(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2, 0.0, 1.0))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    d = rho - sigma
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def matrix_to_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=complex)
    return {
        "rows": int(m.shape[0]),
        "cols": int(m.shape[1]),
        "re": m.real.reshape(-1).tolist(),
        "im": m.imag.reshape(-1).tolist(),
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    rows, cols = int(obj["rows"]), int(obj["cols"])
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj["im"], dtype=float)
    if re.size != rows * cols or im.size != rows * cols:
        raise DimensionError("JSON matrix payload does not match rows x cols")
    return (re + 1j * im).reshape(rows, cols)
