"""Optical control link: EOM at room temperature, fiber, UTC-PD at 4 K.

The modulation-to-drive chain is linear and folded into one
``conversion_gain`` (rad/s of device drive per unit modulation amplitude).
The microwave field scales with the square root of optical transmittance.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.optimize
import scipy.stats

from . import config as cfg
from .errors import FitError, GridMismatchError, NonlinearityError, ValidationError
from .hilbert import HilbertConfig, QuantumState
from .model import MHZ, SystemParams, drift_hamiltonian, drive_hamiltonians, excited_projector
from .propagate import DEFAULT_DT, ControlPulse, propagate_unitary

C_LIGHT = 299_792_458.0
FIBER = "fiber"
COAX = "coax"


@dataclass(frozen=True)
class LinkParams:
    fiber_atten_db_per_km: float = 0.2
    # quoted at 6 GHz
    coax_atten_db_per_km: float = 1000.0
    length_km: float = 0.0
    # standard single-mode fiber, ASSUMED
    group_index: float = 1.468
    conversion_gain: float = 20 * MHZ
    linear_range_max: float = 1.0
    crosstalk_db: float = float("-inf")

    def __post_init__(self):
        if self.fiber_atten_db_per_km < 0 or self.coax_atten_db_per_km < 0:
            raise ValidationError("attenuation must be non-negative")
        if self.length_km < 0:
            raise ValidationError("length must be non-negative")
        if self.crosstalk_db > 0:
            raise ValidationError("crosstalk must be <= 0 dB")
        if not self.group_index >= 1 or not self.conversion_gain > 0 or not self.linear_range_max > 0:
            raise ValidationError("group_index >= 1, conversion_gain > 0 and linear_range_max > 0 required")

    def at_length(self, length_km: float) -> "LinkParams":
        return LinkParams(**{**self.__dict__, "length_km": float(length_km)})

    def to_sections(self) -> dict:
        body = dict(self.__dict__)
        body["conversion_gain_mhz"] = body.pop("conversion_gain") / MHZ
        return {"link": body}

    @classmethod
    def from_sections(cls, data: dict) -> "LinkParams":
        allowed = [
            "fiber_atten_db_per_km",
            "coax_atten_db_per_km",
            "length_km",
            "group_index",
            "conversion_gain_mhz",
            "linear_range_max",
            "crosstalk_db",
        ]
        body = cfg.section(data, "link", allowed)
        if "conversion_gain_mhz" in body:
            body["conversion_gain"] = float(body.pop("conversion_gain_mhz")) * MHZ
        return cls(**{k: float(v) for k, v in body.items()})


@dataclass(frozen=True)
class ChannelResponse:
    length_km: float
    medium: str
    loss_db: float
    transmittance: float
    eta_heat: float
    delay_s: Optional[float]
    effective_gain: float


def channel_response(params: LinkParams, medium: str = FIBER, length_km: Optional[float] = None) -> ChannelResponse:
    length = params.length_km if length_km is None else float(length_km)
    if length < 0:
        raise ValidationError(f"negative length {length}")
    if medium == FIBER:
        atten = params.fiber_atten_db_per_km
        delay = length * 1e3 * params.group_index / C_LIGHT
    elif medium == COAX:
        atten = params.coax_atten_db_per_km
        delay = None
    else:
        raise ValidationError(f"unknown medium {medium!r}")
    loss = atten * length
    t = 10.0 ** (-loss / 10.0)
    return ChannelResponse(
        length_km=length,
        medium=medium,
        loss_db=loss,
        transmittance=t,
        eta_heat=1.0 - t,
        delay_s=delay,
        effective_gain=params.conversion_gain * np.sqrt(t),
    )


def link_budget(params: LinkParams, medium: str, lengths: Sequence[float]) -> List[ChannelResponse]:
    return [channel_response(params, medium, length) for length in lengths]


def link_budget_csv(responses: Sequence[ChannelResponse]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["length_km", "medium", "loss_db", "transmittance", "eta_heat", "delay_us"])
    for r in responses:
        delay = "" if r.delay_s is None else repr(r.delay_s * 1e6)
        w.writerow([repr(r.length_km), r.medium, repr(r.loss_db), repr(r.transmittance), repr(r.eta_heat), delay])
    return buf.getvalue()


def to_modulation(pulse: ControlPulse, params: LinkParams) -> ControlPulse:
    """Modulation waveform that yields ``pulse`` at the device over a 0 km link."""
    return ControlPulse(pulse.dt, pulse.amplitudes / params.conversion_gain, pulse.t0)


def _check_linear(pulse: ControlPulse, params: LinkParams) -> None:
    if pulse.n_segments == 0:
        return
    peak = max(np.max(np.abs(pulse.qubit)), np.max(np.abs(pulse.cavity)))
    if peak > params.linear_range_max * (1 + 1e-12):
        raise NonlinearityError(f"modulation amplitude {peak:.4g} exceeds linear range {params.linear_range_max:.4g}")


def apply_link(pulse: ControlPulse, params: LinkParams, recalibrate: bool = False) -> ControlPulse:
    """Map a modulation waveform to the device drive it produces.

    Amplitudes scale by ``conversion_gain * sqrt(transmittance)`` and the
    waveform is delayed by the fiber latency. ``recalibrate`` restores the
    0 km drive strength, as an amplitude calibration at each length would.
    """
    _check_linear(pulse, params)
    resp = channel_response(params, FIBER)
    gain = params.conversion_gain if recalibrate else resp.effective_gain
    return ControlPulse(pulse.dt, pulse.amplitudes * gain, pulse.t0 + resp.delay_s)


def array_crosstalk(pulses: Sequence[ControlPulse], crosstalk_db: float) -> List[ControlPulse]:
    """Linear leakage between array channels: ``out_k = p_k + x sum_{j != k} p_j``."""
    if crosstalk_db > 0:
        raise ValidationError("crosstalk must be <= 0 dB")
    if not pulses:
        return []
    ref = pulses[0]
    for p in pulses[1:]:
        if p.n_segments != ref.n_segments or p.dt != ref.dt or p.t0 != ref.t0:
            raise GridMismatchError("array channels must share one time grid")
    x = 0.0 if crosstalk_db == float("-inf") else 10.0 ** (crosstalk_db / 20.0)
    if x == 0.0 or len(pulses) == 1:
        return list(pulses)
    total = np.sum([p.amplitudes for p in pulses], axis=0)
    return [ControlPulse(p.dt, p.amplitudes + x * (total - p.amplitudes), p.t0) for p in pulses]


# ---------------------------------------------------------------------------
# Rabi transfer characteristic


@dataclass
class RabiScan:
    amplitudes: np.ndarray
    rabi_frequencies: np.ndarray
    slope: float
    r_squared: float

    @property
    def pairs(self):
        return list(zip(self.amplitudes.tolist(), self.rabi_frequencies.tolist()))


def fit_rabi_frequency(times: np.ndarray, p_excited: np.ndarray) -> float:
    """Fit ``P(e) = sin^2(Omega t / 2)``; returns Omega in rad/s.

    A dense grid search seeds a least-squares refinement so the fit does not
    lock onto an alias.
    """
    t = np.asarray(times, dtype=float)
    p = np.asarray(p_excited, dtype=float)
    if t.size < 4:
        raise FitError("need at least four samples to fit a Rabi oscillation")
    if np.max(p) < 1e-12:
        return 0.0
    dt = np.min(np.diff(t))
    omegas = np.linspace(0.0, np.pi / dt, 4096)
    resid = np.sum((np.sin(np.outer(omegas, t) / 2) ** 2 - p) ** 2, axis=1)
    guess = omegas[np.argmin(resid)]
    popt, _ = scipy.optimize.curve_fit(lambda tt, om: np.sin(om * tt / 2) ** 2, t, p, p0=[guess])
    return float(abs(popt[0]))


def rabi_transfer_scan(
    params: LinkParams,
    amplitudes: Sequence[float],
    system: SystemParams,
    duration: float,
    dt: float = DEFAULT_DT,
    recalibrate: bool = False,
) -> RabiScan:
    """Square qubit drive at each modulation amplitude, through the link."""
    amps = np.asarray(amplitudes, dtype=float)
    if amps.size < 2:
        raise FitError("need at least two amplitudes for a linearity fit")
    config = HilbertConfig(2)
    h0 = drift_hamiltonian(system, config)
    drives = drive_hamiltonians(config)
    proj = np.real(np.diag(excited_projector(config)))
    n_seg = int(round(duration / dt))
    times = dt * np.arange(1, n_seg + 1)
    psi0 = QuantumState.basis(config, 0, 0)
    omegas = []
    for a in amps:
        mod = ControlPulse(dt, np.tile([a, 0.0, 0.0, 0.0], (n_seg, 1)))
        device = apply_link(mod, params, recalibrate=recalibrate)
        # cavity stays in vacuum; the two-level truncation is exact here
        res = propagate_unitary(h0, drives, device, psi0, store_states=True, leakage_threshold=np.inf)
        pe = np.abs(res.states) ** 2 @ proj
        omegas.append(fit_rabi_frequency(times, pe))
    omegas = np.array(omegas)
    if np.ptp(amps) == 0:
        raise FitError("amplitudes are degenerate")
    reg = scipy.stats.linregress(amps, omegas)
    return RabiScan(amps, omegas, float(reg.slope), float(reg.rvalue**2))
