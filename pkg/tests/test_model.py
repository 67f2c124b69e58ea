import math

import numpy as np
import pytest

from boslink.errors import InvalidConfigError, InvalidParamsError
from boslink.hilbert import HilbertConfig, expm
from boslink.model import (
    GHZ,
    KHZ,
    MHZ,
    FrameSpec,
    SystemParams,
    collapse_operators,
    dephasing_rate,
    drift_hamiltonian,
    drive_hamiltonians,
)

CFG = HilbertConfig(10)


def test_paper_defaults():
    p = SystemParams()
    assert p.omega_q / (2 * math.pi) == pytest.approx(4.257e9)
    assert p.omega_s / (2 * math.pi) == pytest.approx(5.922e9)
    assert p.omega_r / (2 * math.pi) == pytest.approx(7.508e9)
    assert p.chi_sq / (2 * math.pi) == pytest.approx(0.417e6)
    assert p.chi_rq / (2 * math.pi) == pytest.approx(1.20e6)
    assert p.kerr_g / (2 * math.pi) == pytest.approx(1.32e3)


def test_assumed_flags():
    p = SystemParams()
    assert all(p.assumed_flags().values())
    assert not SystemParams(t1_qubit=50e-6).assumed_flags()["t1_qubit"]


@pytest.mark.parametrize(
    "kw",
    [
        {"t2_qubit": 70e-6},
        {"readout_error_g": 0.5},
        {"readout_error_e": -0.1},
        {"t1_cavity": 0.0},
        {"chi_sq": -1.0},
    ],
)
def test_invalid_params(kw):
    with pytest.raises(InvalidParamsError):
        SystemParams(**kw)


class TestDrift:
    p = SystemParams()

    @pytest.mark.parametrize("n", range(10))
    def test_ground_diagonal(self, n):
        h = drift_hamiltonian(self.p, CFG)
        i = CFG.index(0, n)
        assert h[i, i].real == pytest.approx(-(self.p.kerr_g / 2) * n * (n - 1), abs=1e-6)

    def test_chi_shift(self):
        h = drift_hamiltonian(self.p, CFG)
        diff = h[CFG.index(1, 1), CFG.index(1, 1)] - h[CFG.index(0, 1), CFG.index(0, 1)]
        assert diff.real == pytest.approx(-self.p.chi_sq, rel=1e-14)

    def test_zero_couplings(self):
        h = drift_hamiltonian(SystemParams(chi_sq=0.0, kerr_g=0.0), CFG)
        assert np.all(h == 0)

    def test_diagonal_and_hermitian(self):
        h = drift_hamiltonian(self.p, CFG, FrameSpec(self.p.omega_q - 1e6, self.p.omega_s + 3e5))
        off = h - np.diag(np.diag(h))
        assert np.max(np.abs(off)) < 1e-14
        assert np.max(np.abs(h - h.conj().T)) < 1e-12

    def test_detuned_frame(self):
        delta_q, delta_s = 2 * MHZ, -0.5 * MHZ
        frame = FrameSpec(self.p.omega_q - delta_q, self.p.omega_s - delta_s)
        h = drift_hamiltonian(SystemParams(chi_sq=0.0, kerr_g=0.0), CFG, frame)
        assert h[CFG.index(1, 2), CFG.index(1, 2)].real == pytest.approx(delta_q + 2 * delta_s)

    def test_dressed_shift_spectrum(self):
        w = np.linalg.eigvalsh(drift_hamiltonian(self.p, CFG))
        h = np.diag(drift_hamiltonian(self.p, CFG)).real
        assert sorted(w) == pytest.approx(sorted(h))
        for n in range(CFG.cavity_dim - 1):
            g_step = h[CFG.index(0, n + 1)] - h[CFG.index(0, n)]
            e_step = h[CFG.index(1, n + 1)] - h[CFG.index(1, n)]
            assert g_step - e_step == pytest.approx(self.p.chi_sq, rel=1e-9)


class TestDrives:
    def test_hermitian(self):
        for h in drive_hamiltonians(CFG):
            assert np.max(np.abs(h - h.conj().T)) == 0

    def test_subsystems_commute(self):
        hqx, hqy, hcx, hcy = drive_hamiltonians(CFG)
        assert np.max(np.abs(hqx @ hcx - hcx @ hqx)) < 1e-15
        assert np.max(np.abs(hqy @ hcy - hcy @ hqy)) < 1e-15

    def test_norms(self):
        hqx, hqy, hcx, hcy = drive_hamiltonians(CFG)
        assert np.linalg.norm(hqx, 2) <= 0.5 + 1e-15
        assert np.linalg.norm(hqy, 2) <= 0.5 + 1e-15
        assert np.linalg.norm(hcx, 2) <= math.sqrt(CFG.cavity_dim)
        assert np.linalg.norm(hcy, 2) <= math.sqrt(CFG.cavity_dim)

    @pytest.mark.parametrize("eps,t", [(2 * MHZ, 100e-9), (5 * MHZ, 37e-9), (1 * MHZ, 1e-6)])
    def test_rabi(self, eps, t):
        hqx = drive_hamiltonians(CFG)[0]
        u = expm(hqx * eps * t, -1j)
        psi = u[:, CFG.index(0, 0)]
        pe = abs(psi[CFG.index(1, 0)]) ** 2
        assert pe == pytest.approx(math.sin(eps * t / 2) ** 2, abs=1e-12)


class TestCollapse:
    def test_pure_t1_limit(self):
        p = SystemParams(t1_qubit=10e-6, t2_qubit=20e-6)
        assert dephasing_rate(p) == 0.0
        assert np.all(collapse_operators(p, CFG)[1] == 0)

    def test_rates_scale_inverse_time(self):
        p1 = SystemParams(t1_qubit=10e-6, t2_qubit=8e-6, t1_cavity=100e-6)
        p2 = SystemParams(t1_qubit=40e-6, t2_qubit=32e-6, t1_cavity=400e-6)
        for c1, c2 in zip(collapse_operators(p1, CFG), collapse_operators(p2, CFG)):
            np.testing.assert_allclose(c1, 2 * c2, rtol=1e-12)

    def test_dephasing_rate(self):
        p = SystemParams()
        assert dephasing_rate(p) == pytest.approx(1 / 20e-6 - 1 / 60e-6)


def test_config_roundtrip(tmp_path):
    p = SystemParams(t1_qubit=42e-6, readout_error_e=0.04, chi_sq=0.5 * MHZ)
    path = tmp_path / "sys.toml"
    p.save(path)
    text = path.read_text()
    assert "[system]" in text and "[decoherence]" in text and "[readout]" in text
    q = SystemParams.load(path)
    for name in ("omega_q", "chi_sq", "kerr_g", "t1_qubit", "readout_error_e"):
        assert getattr(q, name) == pytest.approx(getattr(p, name), rel=1e-14)


def test_config_units(tmp_path):
    path = tmp_path / "sys.toml"
    path.write_text("[system]\nchi_sq_mhz = 1.0\nkerr_g_khz = 2.0\n[decoherence]\nt1_qubit_us = 50\n")
    p = SystemParams.load(path)
    assert p.chi_sq == pytest.approx(MHZ)
    assert p.kerr_g == pytest.approx(2 * KHZ)
    assert p.t1_qubit == pytest.approx(50e-6)
    assert p.omega_q == pytest.approx(4.257 * GHZ)


def test_config_unknown_key(tmp_path):
    path = tmp_path / "sys.toml"
    path.write_text("[system]\nchi = 1.0\n")
    with pytest.raises(InvalidConfigError):
        SystemParams.load(path)
