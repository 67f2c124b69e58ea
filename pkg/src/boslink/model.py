"""Dispersive transmon-cavity model in the doubly rotating frame.

Frequencies and rates are angular (rad/s); times in seconds. The readout
resonator frequency and its cross-Kerr are stored but the mode is not
propagated: readout is a classical assignment channel.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from . import config as cfg
from .errors import InvalidParamsError
from .hilbert import (
    PROJ_E,
    QUBIT_ID,
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    HilbertConfig,
    annihilation,
    identity,
    tensor,
)

TWO_PI = 2 * np.pi
GHZ = TWO_PI * 1e9
MHZ = TWO_PI * 1e6
KHZ = TWO_PI * 1e3
US = 1e-6

# Not reported by the experiment; typical 3D-architecture values.
ASSUMED_DEFAULTS = {
    "t1_qubit": 30 * US,
    "t2_qubit": 20 * US,
    "t1_cavity": 500 * US,
    "readout_error_g": 0.01,
    "readout_error_e": 0.02,
}


@dataclass(frozen=True)
class SystemParams:
    omega_q: float = 4.257 * GHZ
    omega_s: float = 5.922 * GHZ
    omega_r: float = 7.508 * GHZ
    chi_sq: float = 0.417 * MHZ
    chi_rq: float = 1.20 * MHZ
    kerr_g: float = 1.32 * KHZ
    t1_qubit: float = ASSUMED_DEFAULTS["t1_qubit"]
    t2_qubit: float = ASSUMED_DEFAULTS["t2_qubit"]
    t1_cavity: float = ASSUMED_DEFAULTS["t1_cavity"]
    readout_error_g: float = ASSUMED_DEFAULTS["readout_error_g"]
    readout_error_e: float = ASSUMED_DEFAULTS["readout_error_e"]

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) and not (f.name.startswith("t") and v == np.inf):
                raise InvalidParamsError(f"{f.name} must be finite")
        for name in ("omega_q", "omega_s", "omega_r", "chi_sq", "chi_rq", "kerr_g"):
            if getattr(self, name) < 0:
                raise InvalidParamsError(f"{name} must be non-negative")
        for name in ("t1_qubit", "t2_qubit", "t1_cavity"):
            if not getattr(self, name) > 0:
                raise InvalidParamsError(f"{name} must be positive")
        if self.t2_qubit > 2 * self.t1_qubit:
            raise InvalidParamsError("t2_qubit cannot exceed 2 * t1_qubit")
        for name in ("readout_error_g", "readout_error_e"):
            if not 0 <= getattr(self, name) < 0.5:
                raise InvalidParamsError(f"{name} must lie in [0, 0.5)")

    def assumed_flags(self) -> dict:
        """Which parameters still sit at their ASSUMED (unreported) defaults."""
        return {k: getattr(self, k) == v for k, v in ASSUMED_DEFAULTS.items()}

    def perfect_readout(self) -> "SystemParams":
        return replace(self, readout_error_g=0.0, readout_error_e=0.0)

    def to_sections(self) -> dict:
        return {
            "system": {
                "omega_q_ghz": self.omega_q / GHZ,
                "omega_s_ghz": self.omega_s / GHZ,
                "omega_r_ghz": self.omega_r / GHZ,
                "chi_sq_mhz": self.chi_sq / MHZ,
                "chi_rq_mhz": self.chi_rq / MHZ,
                "kerr_g_khz": self.kerr_g / KHZ,
            },
            "decoherence": {
                "t1_qubit_us": self.t1_qubit / US,
                "t2_qubit_us": self.t2_qubit / US,
                "t1_cavity_us": self.t1_cavity / US,
            },
            "readout": {
                "error_g": self.readout_error_g,
                "error_e": self.readout_error_e,
            },
        }

    @classmethod
    def from_sections(cls, data: dict) -> "SystemParams":
        scale = {
            "omega_q_ghz": ("omega_q", GHZ),
            "omega_s_ghz": ("omega_s", GHZ),
            "omega_r_ghz": ("omega_r", GHZ),
            "chi_sq_mhz": ("chi_sq", MHZ),
            "chi_rq_mhz": ("chi_rq", MHZ),
            "kerr_g_khz": ("kerr_g", KHZ),
            "t1_qubit_us": ("t1_qubit", US),
            "t2_qubit_us": ("t2_qubit", US),
            "t1_cavity_us": ("t1_cavity", US),
            "error_g": ("readout_error_g", 1.0),
            "error_e": ("readout_error_e", 1.0),
        }
        kw = {}
        for sec, keys in (
            ("system", ["omega_q_ghz", "omega_s_ghz", "omega_r_ghz", "chi_sq_mhz", "chi_rq_mhz", "kerr_g_khz"]),
            ("decoherence", ["t1_qubit_us", "t2_qubit_us", "t1_cavity_us"]),
            ("readout", ["error_g", "error_e"]),
        ):
            for key, value in cfg.section(data, sec, keys).items():
                name, unit = scale[key]
                kw[name] = float(value) * unit
        return cls(**kw)

    def save(self, path) -> None:
        cfg.save(path, self.to_sections(), UNIT_COMMENTS)

    @classmethod
    def load(cls, path) -> "SystemParams":
        return cls.from_sections(cfg.load(path))


UNIT_COMMENTS = {
    "omega_q_ghz": "GHz, divided by 2 pi",
    "omega_s_ghz": "GHz, divided by 2 pi",
    "omega_r_ghz": "GHz, divided by 2 pi (stored only)",
    "chi_sq_mhz": "MHz, divided by 2 pi",
    "chi_rq_mhz": "MHz, divided by 2 pi (stored only)",
    "kerr_g_khz": "kHz, divided by 2 pi",
    "t1_qubit_us": "us, ASSUMED default",
    "t2_qubit_us": "us, ASSUMED default",
    "t1_cavity_us": "us, ASSUMED default",
    "error_g": "P(read e | g), ASSUMED default",
    "error_e": "P(read g | e), ASSUMED default",
}


@dataclass(frozen=True)
class FrameSpec:
    qubit_frame: Optional[float] = None
    cavity_frame: Optional[float] = None

    def resolve(self, params: SystemParams) -> tuple:
        qf = params.omega_q if self.qubit_frame is None else self.qubit_frame
        cf = params.omega_s if self.cavity_frame is None else self.cavity_frame
        return qf, cf


def drift_hamiltonian(params: SystemParams, config: HilbertConfig, frame: FrameSpec = FrameSpec()) -> np.ndarray:
    """Drift ``H0/hbar`` (rad/s) in the given rotating frame.

    Diagonal: detunings, ``-chi |e><e| a^dag a`` and ``-(K/2) a^dag a^dag a a``.
    """
    qf, cf = frame.resolve(params)
    n = np.arange(config.cavity_dim, dtype=float)
    q = np.array([0.0, 1.0])
    e, nn = np.meshgrid(q, n, indexing="ij")
    diag = (
        (params.omega_q - qf) * e
        + (params.omega_s - cf) * nn
        - params.chi_sq * e * nn
        - 0.5 * params.kerr_g * nn * (nn - 1)
    )
    return np.diag(diag.reshape(-1)).astype(complex)


def drive_hamiltonians(config: HilbertConfig) -> tuple:
    """Quadrature drive operators ``(Hq_x, Hq_y, Hc_x, Hc_y)``.

    A complex cavity amplitude ``u = I + iQ`` yields ``(u* a^dag + u a) / 2``
    with this sign choice, so a constant drive displaces vacuum by
    ``alpha = -i (I - iQ) t / 2``.
    """
    a = annihilation(config)
    ad = a.conj().T
    ic = identity(config)
    return (
        tensor(SIGMA_X, ic) / 2,
        tensor(SIGMA_Y, ic) / 2,
        tensor(QUBIT_ID, a + ad) / 2,
        tensor(QUBIT_ID, 1j * (a - ad)) / 2,
    )


def dephasing_rate(params: SystemParams) -> float:
    """Pure dephasing ``1/t_phi = 1/t2 - 1/(2 t1)``."""
    rate = 1.0 / params.t2_qubit - 0.5 / params.t1_qubit
    # clamp roundoff at the t2 = 2 t1 limit
    return max(rate, 0.0)


def collapse_operators(params: SystemParams, config: HilbertConfig) -> list:
    """Qubit relaxation, qubit pure dephasing and cavity photon loss."""
    if params.t2_qubit > 2 * params.t1_qubit:
        raise InvalidParamsError("t2_qubit cannot exceed 2 * t1_qubit")
    a = annihilation(config)
    ic = identity(config)
    ops = [
        np.sqrt(1.0 / params.t1_qubit) * tensor(SIGMA_MINUS, ic),
        np.sqrt(dephasing_rate(params) / 2) * tensor(SIGMA_Z, ic),
        np.sqrt(1.0 / params.t1_cavity) * tensor(QUBIT_ID, a),
    ]
    return ops


def excited_projector(config: HilbertConfig) -> np.ndarray:
    return tensor(PROJ_E, identity(config))
