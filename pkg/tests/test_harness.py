import json

import numpy as np
import pytest

from boslink import cli, harness
from boslink.config import loads
from boslink.errors import InvalidConfigError
from boslink.grape import OptimizerSettings, make_encode_problem
from boslink.hilbert import HilbertConfig, QuantumState, matrix_to_json
from boslink.model import SystemParams
from boslink.tomography import WIGNER_NORM, square_grid, wigner_at


def small_spec(tmp_path, **kw):
    base = dict(
        out_dir=tmp_path,
        iq_points=5,
        rabi_amplitudes=(0.0, 0.05, 0.1, 0.15),
        displacement_amplitudes=(0.0, 0.1, 0.2, 0.3),
    )
    base.update(kw)
    return harness.ExperimentSpec(**base)


def tiny_problem(iters=5):
    return make_encode_problem(
        1, SystemParams(), 400e-9, config=HilbertConfig(8), dt=4e-9, settings=OptimizerSettings(max_iters=iters)
    )


class TestSpec:
    def test_config_round_trip(self, tmp_path):
        spec = harness.ExperimentSpec(name="x", seed=3, encode_durations=(1e-6, 2.5e-6, 3e-6, 3.3e-6), shots=100)
        spec.save(tmp_path / "c.toml")
        back = harness.ExperimentSpec.load(tmp_path / "c.toml")
        assert back == spec
        assert back.config_hash() == spec.config_hash()

    def test_hash_tracks_changes(self):
        assert harness.ExperimentSpec(seed=1).config_hash() != harness.ExperimentSpec(seed=2).config_hash()

    def test_overrides(self):
        data = loads("[experiment]\nseed = 4\nround_bases = [\"1\", \"binomial\"]\n[link]\nlength_km = 5\n")
        spec = harness.ExperimentSpec.from_sections(data, seed=9)
        assert spec.seed == 9
        assert spec.round_bases == (1, "binomial")
        assert spec.link.length_km == 5.0

    def test_unknown_section(self):
        with pytest.raises(InvalidConfigError):
            harness.ExperimentSpec.from_sections(loads("[sytem]\nchi_sq_mhz = 1\n"))

    def test_unknown_key(self):
        with pytest.raises(InvalidConfigError):
            harness.ExperimentSpec.from_sections(loads("[experiment]\nseeds = 1\n"))

    @pytest.mark.parametrize("kw", [{"threads": 0}, {"seed": -1}, {"wigner_points": 1}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfigError):
            harness.ExperimentSpec(**kw)


class TestCsv:
    def test_metadata_rows(self):
        spec = harness.ExperimentSpec()
        text = harness.render_csv(spec, ["a", "b"], [[1, 0.5]], {"note": "x"})
        lines = text.splitlines()
        assert lines[0] == "# artifact_version=0.1.0"
        assert lines[1] == f"# config_hash={spec.config_hash()}"
        assert "t1_qubit" in lines[2]
        assert "# note=x" in lines
        cols, rows = harness.read_csv(text)
        assert cols == ["a", "b"] and rows == [["1", "0.5"]]

    def test_no_assumed_flags_when_overridden(self):
        sp = SystemParams(t1_qubit=1e-5, t2_qubit=1e-5, t1_cavity=1e-4, readout_error_g=0.0, readout_error_e=0.0)
        text = harness.render_csv(harness.ExperimentSpec(system=sp), ["a"], [])
        assert "# assumed=none" in text


class TestSynthesize:
    def test_cache_round_trip(self, tmp_path):
        prob = tiny_problem()
        first = harness.synthesize(prob, tmp_path)
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == sorted(f"{prob.key()}{ext}" for ext in (".npz", ".csv", "_history.csv"))
        second = harness.synthesize(prob, tmp_path)
        np.testing.assert_array_equal(first.pulse.amplitudes, second.pulse.amplitudes)
        assert first.fidelity_history == second.fidelity_history
        assert second.final_fidelity == first.final_fidelity
        assert second.n_iters == first.n_iters

    def test_cache_keyed_by_problem(self, tmp_path):
        harness.synthesize(tiny_problem(3), tmp_path)
        harness.synthesize(tiny_problem(4), tmp_path)
        assert len(list(tmp_path.glob("*.npz"))) == 2


class TestExperiments:
    def test_link_budget_file(self, tmp_path):
        res = harness.run_link_budget(small_spec(tmp_path), [0.0, 15.0])
        assert res.fiber[-1].loss_db == pytest.approx(3.0)
        assert res.coax[-1].loss_db == pytest.approx(15000.0)
        cols, rows = harness.read_csv((tmp_path / "link_budget.csv").read_text())
        assert cols[:3] == ["length_km", "medium", "loss_db"]
        assert [r[1] for r in rows] == ["fiber", "fiber", "coax", "coax"]

    def test_rabi_iq(self, tmp_path):
        res = harness.run_rabi_iq_scan(small_spec(tmp_path))
        assert res.p_excited.shape == (5, 5)
        assert res.p_excited[2, 2] == pytest.approx(0.0, abs=1e-12)
        # drive phase only rotates the Rabi axis, P(e) depends on |u| alone
        assert res.angular_deviation < 1e-6
        assert res.linearity.r_squared > 0.9999
        assert (tmp_path / "rabi_iq.csv").exists() and (tmp_path / "rabi_linearity.csv").exists()

    def test_displacement_calibration(self, tmp_path):
        res = harness.run_displacement_calibration(small_spec(tmp_path))
        assert res.alpha_fit[0] < 1e-4
        assert res.r_squared > 0.9999
        assert np.max(res.poisson_deviation) < 1e-3

    def test_synthetic_parity_matches_wigner(self):
        cfg = HilbertConfig(10)
        st = QuantumState.basis(cfg, 0, 2)
        alphas = square_grid(1.5, 5).reshape(-1)
        data = harness.synthetic_parity(st, alphas)
        np.testing.assert_allclose([p for _, p in data], wigner_at(st, alphas) / WIGNER_NORM, atol=1e-14)
        noisy = harness.synthetic_parity(st, alphas, shots=1000, seed=1)
        assert noisy == harness.synthetic_parity(st, alphas, shots=1000, seed=1)
        assert all(-1 <= p <= 1 for _, p in noisy)

    def test_pmap_order(self):
        assert harness._pmap(lambda x: x * x, [3, 1, 2], 3) == [9, 1, 4]


class TestDeterminism:
    def test_rabi_and_displacement_byte_identical(self, tmp_path):
        outs = []
        for run in ("a", "b"):
            spec = small_spec(tmp_path / run, threads=2 if run == "b" else 1)
            harness.run_rabi_iq_scan(spec)
            harness.run_displacement_calibration(spec)
            outs.append({p.name: p.read_bytes() for p in (tmp_path / run).iterdir()})
        assert outs[0] == outs[1]


class TestCli:
    def test_link_budget(self, tmp_path, capsys):
        assert cli.main(["link-budget", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "link_budget.csv").exists()

    def test_invalid_config_exit_2(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[system]\nchi_sq_mhz = -1\n")
        assert cli.main(["link-budget", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_missing_config_exit_2(self, tmp_path):
        assert cli.main(["link-budget", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 2

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["rounds-bench", "--decoherence", "maybe"])
        assert exc.value.code == 2

    def test_reconstruct_and_wigner(self, tmp_path):
        cfg = HilbertConfig(8)
        st = QuantumState.basis(cfg, 0, 1)
        data = harness.synthetic_parity(st, square_grid(2.0, 11).reshape(-1))
        text = "re_alpha,im_alpha,parity\n" + "".join(f"{a.real!r},{a.imag!r},{p!r}\n" for a, p in data)
        (tmp_path / "par.csv").write_text(text)
        assert cli.main(["reconstruct", str(tmp_path / "par.csv"), "--dim", "8", "--out", str(tmp_path)]) == 0
        rho = json.loads((tmp_path / "rho_par.json").read_text())
        assert rho["re"][rho["cols"] + 1] > 0.999
        assert cli.main(["wigner", str(tmp_path / "rho_par.json"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "wigner_rho_par.csv").exists()

    def test_reconstruct_not_converged_exit_3(self, tmp_path):
        cfg = HilbertConfig(8)
        data = harness.synthetic_parity(QuantumState.basis(cfg, 0, 3), square_grid(2.0, 7).reshape(-1))
        text = "re_alpha,im_alpha,parity\n" + "".join(f"{a.real!r},{a.imag!r},{p!r}\n" for a, p in data)
        (tmp_path / "par.csv").write_text(text)
        args = ["reconstruct", str(tmp_path / "par.csv"), "--dim", "8", "--max-iters", "2", "--out", str(tmp_path)]
        assert cli.main(args) == 3

    def test_wigner_rejects_bad_json(self, tmp_path):
        (tmp_path / "r.json").write_text(json.dumps(matrix_to_json(np.eye(2))) + "garbage")
        assert cli.main(["wigner", str(tmp_path / "r.json"), "--out", str(tmp_path)]) == 2
