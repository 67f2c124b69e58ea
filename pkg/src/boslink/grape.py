"""Gradient ascent pulse engineering on the joint qubit-cavity space.

The figure of merit is the phase-coherent isometry fidelity

    F = | (1/d) sum_k <target_k| U(pulse) |init_k> |^2

so the relative phase between logical branches is enforced. Gradients are
exact: each segment exponential is differentiated in the eigenbasis of its
Hamiltonian (divided differences of ``exp(-i w dt)``).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.optimize

from . import config as cfg
from .errors import DimensionError, ValidationError
from .hilbert import HilbertConfig, QuantumState
from .model import MHZ, FrameSpec, SystemParams, drift_hamiltonian, drive_hamiltonians
from .propagate import DEFAULT_DT, ControlPulse, segment_eigh, segment_hamiltonians

log = logging.getLogger(__name__)

DEFAULT_AMP_MAX = 10 * MHZ
# Extra Fock levels above the guard band for default optimizer configs; with
# fewer, optimized pulses lean on the hard truncation edge.
GRAPE_MARGIN = 6


_OPEN_SYSTEM_FIELDS = ("t1_qubit", "t2_qubit", "t1_cavity", "readout_error_g", "readout_error_e")


@dataclass
class OptimizerSettings:
    max_iters: int = 300
    grad_tol: float = 1e-10
    target_fidelity: float = 1.0
    # "lbfgs" (bounded quasi-Newton) or "gradient" (projected ascent + backtracking)
    method: str = "lbfgs"
    seed: int = 0
    init_scale: float = 0.01
    initial_step: float = 1.0

    def __post_init__(self):
        if self.method not in ("lbfgs", "gradient"):
            raise ValidationError(f"unknown optimizer method {self.method!r}")
        if self.max_iters < 0:
            raise ValidationError("max_iters must be >= 0")


@dataclass
class GrapeProblem:
    initial_states: List[QuantumState]
    target_states: List[QuantumState]
    params: SystemParams
    duration: float
    dt: float = DEFAULT_DT
    amp_max: float = DEFAULT_AMP_MAX
    amplitude_penalty: float = 0.0
    derivative_penalty: float = 0.0
    # weight on the time-averaged population of the top ``forbidden_levels`` Fock levels
    leakage_penalty: float = 0.0
    forbidden_levels: int = 2
    # weight on the time-averaged qubit excited-state population; both T1 and
    # dephasing act only where the logical states put weight on |e>
    excited_penalty: float = 0.0
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)
    frame: FrameSpec = field(default_factory=FrameSpec)
    label: str = ""

    def __post_init__(self):
        d = len(self.initial_states)
        if d != len(self.target_states) or d not in (1, 2):
            raise DimensionError("need one or two (initial, target) pairs")
        configs = {s.config for s in list(self.initial_states) + list(self.target_states)}
        if len(configs) != 1:
            raise DimensionError("all states must share one HilbertConfig")
        for group in (self.initial_states, self.target_states):
            m = np.array([s.amplitudes for s in group])
            if np.max(np.abs(m.conj() @ m.T - np.eye(d))) > 1e-10:
                raise ValidationError("states within a group must be orthonormal")
        if self.duration < 0 or not self.dt > 0:
            raise ValidationError("duration must be >= 0 and dt > 0")
        if not self.amp_max > 0:
            raise ValidationError("amp_max must be positive")
        if min(self.amplitude_penalty, self.derivative_penalty, self.leakage_penalty, self.excited_penalty) < 0:
            raise ValidationError("penalty weights must be non-negative")
        if not 1 <= self.forbidden_levels < self.config.cavity_dim:
            raise ValidationError("forbidden_levels must lie in [1, cavity_dim)")

    @property
    def config(self) -> HilbertConfig:
        return self.initial_states[0].config

    @property
    def d(self) -> int:
        return len(self.initial_states)

    @property
    def n_segments(self) -> int:
        return int(round(self.duration / self.dt))

    @cached_property
    def drift(self) -> np.ndarray:
        return drift_hamiltonian(self.params, self.config, self.frame)

    @cached_property
    def drives(self) -> np.ndarray:
        return np.array(drive_hamiltonians(self.config))

    @cached_property
    def forbidden_mask(self) -> np.ndarray:
        n = self.config.cavity_dim
        top = np.zeros(n, dtype=bool)
        top[n - self.forbidden_levels :] = True
        return np.tile(top, self.config.qubit_dim)

    @cached_property
    def excited_mask(self) -> np.ndarray:
        return np.repeat(np.arange(self.config.qubit_dim) > 0, self.config.cavity_dim)

    @cached_property
    def occupation_weights(self) -> np.ndarray:
        """Per-basis-state penalty weights summed over time in :func:`evaluate`."""
        return self.leakage_penalty * self.forbidden_mask + self.excited_penalty * self.excited_mask

    def initial_matrix(self) -> np.ndarray:
        return np.array([s.amplitudes for s in self.initial_states]).T

    def target_matrix(self) -> np.ndarray:
        return np.array([s.amplitudes for s in self.target_states]).T

    def swapped(self) -> "GrapeProblem":
        """The inverse map (decode for an encode problem)."""
        return GrapeProblem(
            initial_states=list(self.target_states),
            target_states=list(self.initial_states),
            params=self.params,
            duration=self.duration,
            dt=self.dt,
            amp_max=self.amp_max,
            amplitude_penalty=self.amplitude_penalty,
            derivative_penalty=self.derivative_penalty,
            leakage_penalty=self.leakage_penalty,
            forbidden_levels=self.forbidden_levels,
            excited_penalty=self.excited_penalty,
            settings=self.settings,
            frame=self.frame,
            label=(self.label + ":inverse") if self.label else "inverse",
        )

    def enlarged(self, extra: int) -> "GrapeProblem":
        """The same problem with ``extra`` more cavity levels (states zero-padded).

        A pulse whose fidelity drops here relies on the truncation edge.
        """
        big = HilbertConfig(self.config.cavity_dim + int(extra))

        def pad(s):
            amps = np.zeros((2, big.cavity_dim), dtype=complex)
            amps[:, : self.config.cavity_dim] = s.amplitudes.reshape(2, -1)
            return QuantumState.from_amplitudes(big, amps.reshape(-1))

        return replace(
            self,
            initial_states=[pad(s) for s in self.initial_states],
            target_states=[pad(s) for s in self.target_states],
        )

    def initial_pulse(self) -> ControlPulse:
        rng = np.random.default_rng(self.settings.seed)
        s = self.settings.init_scale * self.amp_max
        amps = rng.uniform(-s, s, size=(self.n_segments, 4))
        return ControlPulse(self.dt, amps, amp_max=self.amp_max)

    def key(self) -> str:
        """Content hash identifying the problem (used to address cached pulses)."""
        return cfg.config_hash(
            {
                "init": [np.round(s.amplitudes, 12).tobytes().hex() for s in self.initial_states],
                "target": [np.round(s.amplitudes, 12).tobytes().hex() for s in self.target_states],
                "cavity_dim": self.config.cavity_dim,
                # decoherence and readout settings do not enter the closed-system objective
                "params": {k: v for k, v in asdict(self.params).items() if k not in _OPEN_SYSTEM_FIELDS},
                "frame": asdict(self.frame),
                # segment count, not the float duration, so 2.5e-6 and 2.5 * 1e-6 agree
                "n_segments": self.n_segments,
                "dt": self.dt,
                "amp_max": self.amp_max,
                "penalties": [self.amplitude_penalty, self.derivative_penalty, self.leakage_penalty, self.excited_penalty],
                "forbidden_levels": self.forbidden_levels,
                "settings": asdict(self.settings),
            }
        )


@dataclass
class Evaluation:
    fidelity: float
    penalty: float
    overlap: complex
    grad_fidelity: Optional[np.ndarray] = None
    grad_penalty: Optional[np.ndarray] = None
    # time-averaged forbidden-level and qubit-excited populations (weighted
    # values are part of ``penalty``); computed only when their weight is set
    leakage: float = 0.0
    excitation: float = 0.0

    @property
    def objective(self) -> float:
        return self.fidelity - self.penalty

    @property
    def gradient(self) -> Optional[np.ndarray]:
        if self.grad_fidelity is None:
            return None
        return self.grad_fidelity - self.grad_penalty


def _penalties(problem: GrapeProblem, amps: np.ndarray, need_grad: bool):
    if amps.size == 0:
        return 0.0, np.zeros_like(amps)
    x = amps / problem.amp_max
    p = 0.0
    g = np.zeros_like(amps)
    if problem.amplitude_penalty:
        p += problem.amplitude_penalty * np.mean(x**2)
        if need_grad:
            g += problem.amplitude_penalty * 2 * x / x.size / problem.amp_max
    if problem.derivative_penalty and amps.shape[0] > 1:
        dx = np.diff(x, axis=0)
        p += problem.derivative_penalty * np.mean(dx**2)
        if need_grad:
            c = problem.derivative_penalty * 2 / dx.size / problem.amp_max
            g[1:] += c * dx
            g[:-1] -= c * dx
    return float(p), g


def evaluate(problem: GrapeProblem, pulse: Union[ControlPulse, np.ndarray], need_grad: bool = True) -> Evaluation:
    """Fidelity, penalty and (optionally) their exact gradients w.r.t. the amplitudes."""
    amps = pulse.amplitudes if isinstance(pulse, ControlPulse) else np.asarray(pulse, dtype=float)
    if amps.shape != (problem.n_segments, 4):
        raise DimensionError(f"pulse has shape {amps.shape}, problem expects ({problem.n_segments}, 4)")
    dt = problem.dt
    psi = problem.initial_matrix()
    targets = problem.target_matrix()
    d = problem.d
    penalty, gp = _penalties(problem, amps, need_grad)
    n_seg = amps.shape[0]
    if n_seg == 0:
        overlap = np.trace(targets.conj().T @ psi) / d
        zero = np.zeros_like(amps) if need_grad else None
        return Evaluation(float(abs(overlap) ** 2), penalty, complex(overlap), zero, gp if need_grad else None)

    weights = problem.occupation_weights
    occupied = bool(problem.leakage_penalty or problem.excited_penalty)
    mask = problem.forbidden_mask
    emask = problem.excited_mask
    if need_grad:
        w, v = segment_eigh(problem.drift, problem.drives, amps)
        vh = np.conj(np.swapaxes(v, 1, 2))
        phase = np.exp(-1j * w * dt)
        ys = np.empty((n_seg,) + psi.shape, dtype=complex)
    else:
        # eigenvectors are only needed for the gradient; batched Pade is about twice as fast
        us = scipy.linalg.expm(-1j * dt * segment_hamiltonians(problem.drift, problem.drives, amps))
    after = np.empty((n_seg,) + psi.shape, dtype=complex) if (need_grad and occupied) else None
    leak = 0.0
    exc = 0.0
    for k in range(n_seg):
        if need_grad:
            y = vh[k] @ psi
            ys[k] = y
            psi = v[k] @ (phase[k][:, None] * y)
        else:
            psi = us[k] @ psi
        if occupied:
            pop = np.abs(psi) ** 2
            leak += float(np.sum(pop[mask]))
            exc += float(np.sum(pop[emask]))
            if after is not None:
                after[k] = psi
    leak /= n_seg * d
    exc /= n_seg * d
    penalty += problem.leakage_penalty * leak + problem.excited_penalty * exc
    overlap = np.trace(targets.conj().T @ psi) / d
    fid = float(abs(overlap) ** 2)
    if not need_grad:
        return Evaluation(fid, penalty, complex(overlap), leakage=leak, excitation=exc)

    # co-states in each segment's eigenbasis: xs for the target overlap, ls for
    # the occupation term lam_k = W psi_k + U_{k+1}^dag lam_{k+1}
    xs = np.empty_like(ys)
    ls = np.empty_like(ys) if occupied else None
    chi = targets
    lam = np.zeros_like(psi)
    for k in range(n_seg - 1, -1, -1):
        x = vh[k] @ chi
        xs[k] = x
        chi = v[k] @ (np.conj(phase[k])[:, None] * x)
        if occupied:
            lam += weights[:, None] * after[k]
            xl = vh[k] @ lam
            ls[k] = xl
            lam = v[k] @ (np.conj(phase[k])[:, None] * xl)

    # dU = V (V^dag H_j V o G) V^dag, G_ab = -i dt exp(-i(w_a+w_b)dt/2) sinc((w_a-w_b)dt/2)
    wa = w[:, :, None]
    wb = w[:, None, :]
    g = -1j * dt * np.exp(-0.5j * (wa + wb) * dt) * np.sinc((wa - wb) * dt / (2 * np.pi))

    def contract(m):
        b = v @ np.swapaxes(g * m, 1, 2) @ vh
        return 2 * np.real(np.einsum("jcd,kdc->kj", problem.drives, b))

    grad_f = contract((np.conj(overlap) / d) * np.einsum("kas,kbs->kab", np.conj(xs), ys))
    if occupied:
        gp = gp + contract(np.einsum("kas,kbs->kab", np.conj(ls), ys) / (n_seg * d))
    return Evaluation(fid, penalty, complex(overlap), grad_f, gp, leak, exc)


def objective(problem: GrapeProblem, pulse: ControlPulse) -> float:
    """Fidelity minus penalties (use :func:`evaluate` for the parts)."""
    return evaluate(problem, pulse, need_grad=False).objective


def gradient(problem: GrapeProblem, pulse: ControlPulse) -> np.ndarray:
    """Gradient of :func:`objective` w.r.t. each segment's I/Q amplitudes, shape ``(K, 4)``."""
    return evaluate(problem, pulse).gradient


@dataclass
class GrapeResult:
    pulse: ControlPulse
    fidelity_history: List[float]
    penalty_history: List[float]
    grad_norm_history: List[float]
    final_fidelity: float
    converged: bool
    n_iters: int
    message: str = ""

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "fidelity", "grad_norm", "penalty"])
        for i, (f, gn, p) in enumerate(zip(self.fidelity_history, self.grad_norm_history, self.penalty_history)):
            w.writerow([i, repr(f), repr(gn), repr(p)])
        return buf.getvalue()


class _Tracker:
    """Caches the last evaluation so optimizer callbacks can log exact values."""

    def __init__(self, problem: GrapeProblem):
        self.problem = problem
        self.shape = (problem.n_segments, 4)
        self._cache = {}
        self.fid = []
        self.pen = []
        self.gnorm = []

    def __call__(self, x: np.ndarray) -> Evaluation:
        key = x.tobytes()
        ev = self._cache.get(key)
        if ev is None:
            ev = evaluate(self.problem, x.reshape(self.shape) * self.problem.amp_max)
            self._cache = {key: ev}
        return ev

    def record(self, ev: Evaluation):
        self.fid.append(ev.fidelity)
        self.pen.append(ev.penalty)
        # gradient w.r.t. the scaled variable u / amp_max
        self.gnorm.append(float(np.linalg.norm(ev.gradient) * self.problem.amp_max))


def _projected_grad_norm(x: np.ndarray, g: np.ndarray) -> float:
    """Ascent direction norm after removing components pushing into active bounds."""
    gg = g.copy()
    gg[(x >= 1.0) & (gg > 0)] = 0.0
    gg[(x <= -1.0) & (gg < 0)] = 0.0
    return float(np.linalg.norm(gg))


def optimize(problem: GrapeProblem, initial: Optional[ControlPulse] = None) -> GrapeResult:
    """Maximize the objective; non-convergence is reported, not raised."""
    st = problem.settings
    pulse0 = initial if initial is not None else problem.initial_pulse()
    amps0 = np.clip(pulse0.amplitudes, -problem.amp_max, problem.amp_max)
    x0 = amps0.reshape(-1) / problem.amp_max
    tr = _Tracker(problem)
    # evaluate the unscaled amplitudes so the returned value is exact for the initial pulse
    ev0 = evaluate(problem, amps0)
    tr.record(ev0)

    def done(ev: Evaluation, x) -> bool:
        return ev.fidelity >= st.target_fidelity or _projected_grad_norm(x, ev.gradient.reshape(-1) * problem.amp_max) <= st.grad_tol

    if st.max_iters == 0 or x0.size == 0 or done(ev0, x0):
        return GrapeResult(
            pulse=ControlPulse(problem.dt, amps0, amp_max=problem.amp_max),
            fidelity_history=tr.fid,
            penalty_history=tr.pen,
            grad_norm_history=tr.gnorm,
            final_fidelity=ev0.fidelity,
            converged=bool(x0.size and done(ev0, x0)) or ev0.fidelity >= st.target_fidelity,
            n_iters=0,
            message="no iterations",
        )

    if st.method == "lbfgs":
        x, message = _run_lbfgs(problem, tr, x0)
    else:
        x, message = _run_gradient(problem, tr, x0)
    ev = tr(x)
    pulse = ControlPulse(problem.dt, np.clip(x, -1, 1).reshape(tr.shape) * problem.amp_max, amp_max=problem.amp_max)
    converged = done(ev, x)
    log.info("grape %s: F=%.6f after %d iterations (%s)", problem.label, ev.fidelity, len(tr.fid) - 1, message)
    return GrapeResult(
        pulse=pulse,
        fidelity_history=tr.fid,
        penalty_history=tr.pen,
        grad_norm_history=tr.gnorm,
        final_fidelity=ev.fidelity,
        converged=converged,
        n_iters=len(tr.fid) - 1,
        message=message,
    )


def _run_lbfgs(problem: GrapeProblem, tr: _Tracker, x0: np.ndarray):
    st = problem.settings
    amp = problem.amp_max

    def fun(x):
        ev = tr(x)
        return -ev.objective, -ev.gradient.reshape(-1) * amp

    def callback(intermediate_result):
        x = intermediate_result.x
        ev = tr(x)
        tr.record(ev)
        if ev.fidelity >= st.target_fidelity:
            raise StopIteration

    res = scipy.optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(-1.0, 1.0)] * x0.size,
        callback=callback,
        options={"maxiter": st.max_iters, "gtol": st.grad_tol, "ftol": 1e-15, "maxcor": 30, "maxls": 40},
    )
    if tr.fid[-1] >= st.target_fidelity:
        return res.x, "target fidelity reached"
    return res.x, str(res.message)


def _run_gradient(problem: GrapeProblem, tr: _Tracker, x: np.ndarray):
    """Projected gradient ascent with Armijo backtracking."""
    st = problem.settings
    amp = problem.amp_max
    step = st.initial_step
    ev = tr(x)
    for _ in range(st.max_iters):
        g = ev.gradient.reshape(-1) * amp
        while True:
            x_new = np.clip(x + step * g, -1.0, 1.0)
            ev_new = tr(x_new)
            if ev_new.objective >= ev.objective + 1e-4 * np.dot(g, x_new - x) and ev_new.objective >= ev.objective:
                break
            step *= 0.5
            if step < 1e-14:
                return x, "line search failed"
        x, ev = x_new, ev_new
        tr.record(ev)
        step *= 2.0
        if ev.fidelity >= st.target_fidelity:
            return x, "target fidelity reached"
        if _projected_grad_norm(x, ev.gradient.reshape(-1) * amp) <= st.grad_tol:
            return x, "gradient tolerance reached"
    return x, "max_iters reached"


# ---------------------------------------------------------------------------
# Problem builders

BINOMIAL = "binomial"


def cavity_targets(spec: Union[int, str]) -> tuple:
    """Cavity vectors ``(logical_0, logical_1)`` and the largest photon number used."""
    if isinstance(spec, str) and spec == BINOMIAL:
        zero = np.zeros(5, dtype=complex)
        zero[0] = zero[4] = 1 / np.sqrt(2)
        one = np.zeros(5, dtype=complex)
        one[2] = 1.0
        return zero, one, 4
    n = int(spec)
    if n < 1:
        raise ValidationError("Fock encoding needs n >= 1")
    zero = np.zeros(n + 1, dtype=complex)
    zero[0] = 1.0
    one = np.zeros(n + 1, dtype=complex)
    one[n] = 1.0
    return zero, one, n


def make_encode_problem(
    target: Union[int, str],
    params: SystemParams,
    duration: float,
    config: Optional[HilbertConfig] = None,
    decode: bool = False,
    **kw,
) -> GrapeProblem:
    """Isometry ``{|g,0>, |e,0>} -> {|g>|0_L>, |g>|1_L>}`` for Fock-n or binomial codes.

    ``decode`` swaps initial and target lists.
    """
    zero, one, n_max = cavity_targets(target)
    config = config or HilbertConfig.for_photons(n_max, GRAPE_MARGIN)
    config.check_photons(n_max)
    g = [1, 0]
    init = [QuantumState.basis(config, 0, 0), QuantumState.basis(config, 1, 0)]
    tgt = [QuantumState.product(config, g, zero), QuantumState.product(config, g, one)]
    label = f"encode:{target}"
    prob = GrapeProblem(init, tgt, params, duration, label=label, **kw)
    return prob.swapped() if decode else prob


def make_state_problem(
    cavity_state: Sequence[complex],
    params: SystemParams,
    duration: float,
    config: Optional[HilbertConfig] = None,
    label: str = "state",
    **kw,
) -> GrapeProblem:
    """State preparation ``|g,0> -> |g> (x) cavity_state``."""
    vec = np.asarray(cavity_state, dtype=complex)
    support = np.nonzero(np.abs(vec) > 0)[0]
    n_max = int(support.max()) if support.size else 0
    config = config or HilbertConfig.for_photons(n_max, GRAPE_MARGIN)
    config.check_photons(n_max)
    init = [QuantumState.basis(config, 0, 0)]
    tgt = [QuantumState.product(config, [1, 0], vec)]
    return GrapeProblem(init, tgt, params, duration, label=label, **kw)


def fock_vector(n: int) -> np.ndarray:
    v = np.zeros(n + 1, dtype=complex)
    v[n] = 1.0
    return v


def superposition_vector(n: int) -> np.ndarray:
    """``(|0> + i|n>) / sqrt(2)``."""
    v = np.zeros(n + 1, dtype=complex)
    v[0] = 1 / np.sqrt(2)
    v[n] = 1j / np.sqrt(2)
    return v
