import csv
import json

import numpy as np
import pytest

from risisac import cli, harness
from risisac.exceptions import ConfigError, Infeasible
from risisac.harness import ExperimentPlan, SolveOptions, alternating_solve, run_plan
from risisac.radar import DetectionSpec
from risisac.scenario import builtin_config, make_rng, synthesize_channels, target_geometry


def _solve(algo, seed=0, gamma_d=0.98, objective="mse", **kw):
    cfg = builtin_config().replace(gamma_d=gamma_d)
    return harness.solve_realization(cfg, seed, 0, algo, objective, **kw)


class TestAlternating:
    def test_converged_state_invariants(self):
        state, trace, rep, _, _ = _solve("admm")
        assert state.converged
        assert rep.power == pytest.approx(0.1, rel=1e-6)
        assert rep.detection[0] >= 0.98 - 1e-3
        np.testing.assert_allclose(np.abs(state.theta), 1.0, atol=1e-9)
        obj = [r["objective"] for r in trace]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(obj, obj[1:]))

    def test_dedicated_lower_bounds_isac(self):
        for seed in range(2):
            isac = _solve("admm", seed)[2].total_mse
            ded = _solve("dedicated", seed)[2].total_mse
            assert ded <= isac

    def test_fixed_phases_untouched(self):
        cfg = builtin_config().replace(gamma_d=0.9)
        state, _, _, ch, geo = harness.solve_realization(cfg, 0, 0, "target-dir")
        from risisac.ris import baseline_phases
        np.testing.assert_array_equal(state.theta, baseline_phases("target-dir", ch, geo))

    def test_sum_rate_objective_monotone(self):
        _, trace, rep, _, _ = _solve("admm", objective="sum-rate", gamma_d=0.9)
        rates = [r["sum_rate"] for r in trace]
        assert all(b >= a * (1 - 1e-9) for a, b in zip(rates, rates[1:]))
        assert rep.sum_rate > 0

    def test_infeasible_names_block(self):
        cfg = builtin_config().replace(tx_power=1e-6)
        ch = synthesize_channels(cfg, make_rng(0))
        geo = target_geometry(cfg)
        with pytest.raises(Infeasible) as err:
            alternating_solve(ch, geo, DetectionSpec.from_config(cfg), cfg.tx_power,
                              cfg.n_streams, "admm")
        assert err.value.block in ("ris", "precoder")

    def test_aliases(self):
        assert harness.canonical_algorithm("target-direction") == "target-dir"
        with pytest.raises(ConfigError):
            harness.canonical_algorithm("sdr")

    def test_rcg_rejects_multiple_targets(self):
        cfg = builtin_config().replace(n_targets=2, target_positions=((-5, 35, 10), (20, 30, 10)))
        ch = synthesize_channels(cfg, make_rng(0))
        with pytest.raises(ConfigError):
            alternating_solve(ch, target_geometry(cfg), DetectionSpec.from_config(cfg),
                              cfg.tx_power, cfg.n_streams, "rcg")


class TestPlans:
    def test_deterministic_outputs(self, tmp_path):
        cfg = builtin_config()
        files = []
        for name in ("a", "b"):
            plan = ExperimentPlan(cfg, "gamma_d", (0.9,), 1, ("admm",), out_dir=str(tmp_path / name))
            run_plan(plan)
            files.append((tmp_path / name / "results.csv").read_bytes())
        assert files[0] == files[1]
        man = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert man["config_hash"] == harness.config_hash(cfg)
        assert man["failed"] == 0 and man["realizations"] == [0]

    def test_csv_columns(self, tmp_path):
        plan = ExperimentPlan(builtin_config(), "tx-power-dbm", (20.0, 23.0), 2,
                              ("target-direction",), out_dir=str(tmp_path))
        rows = run_plan(plan)
        with open(tmp_path / "results.csv", encoding="utf-8") as fh:
            read = list(csv.DictReader(fh))
        assert len(read) == len(rows) == 2
        assert {"mse", "mse_se", "pd_min", "sum_rate", "tx-power-dbm"} <= set(read[0])

    def test_failure_threshold(self, tmp_path):
        cfg = builtin_config().replace(tx_power=1e-6)
        plan = ExperimentPlan(cfg, "gamma_d", (0.98,), 2, ("admm",), out_dir=str(tmp_path))
        from risisac.exceptions import NonConvergence
        with pytest.raises(NonConvergence):
            run_plan(plan)
        assert json.loads((tmp_path / "manifest.json").read_text())["failed"] == 2

    @pytest.mark.parametrize("doc", [{"grid": []}, {"n_realizations": 0},
                                     {"sweep_variable": "bandwidth"}, {"extra": 1}])
    def test_invalid_plan(self, tmp_path, doc):
        p = tmp_path / "plan.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            harness.load_plan(p, builtin_config())

    def test_grid_values(self):
        cfg = builtin_config()
        assert harness.apply_grid_value(cfg, "user-noise-dbm", -100).user_noise == pytest.approx(1e-13)
        assert harness.apply_grid_value(cfg, "tx-power-dbm", 30).tx_power == pytest.approx(1.0)
        assert harness.apply_grid_value(cfg, "gamma_d", 0.9).gamma_d == 0.9


class TestCli:
    def test_run(self, tmp_path, capsys):
        assert cli.main(["run", "--seed", "2", "--out", str(tmp_path)]) == 0
        assert {p.name for p in tmp_path.iterdir()} == {"results.csv", "manifest.json",
                                                         "trace_2.csv"}
        assert "admm" in capsys.readouterr().out

    def test_config_error(self, tmp_path):
        assert cli.main(["run", "--config", "missing", "--out", str(tmp_path)]) == 4
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 4
        assert cli.main(["run", "--algo", "sdr", "--out", str(tmp_path)]) == 4

    def test_infeasible_exit(self, tmp_path):
        cfg = tmp_path / "weak.json"
        cfg.write_text(json.dumps({"tx_power_dbm": -30}))
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_sweep_nonconvergence_exit(self, tmp_path):
        cfg = tmp_path / "weak.json"
        cfg.write_text(json.dumps({"tx_power_dbm": -30}))
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"grid": [0.98], "n_realizations": 1}))
        assert cli.main(["sweep", "--config", str(cfg), "--plan", str(plan),
                         "--out", str(tmp_path / "o")]) == 3

    def test_beampattern_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            assert cli.main(["beampattern", "--algos", "target-dir", "user-dir",
                             "--out", str(tmp_path / name)]) == 0
            outs.append((tmp_path / name / "beampattern.csv").read_bytes())
        assert outs[0] == outs[1]
        header = outs[0].decode().splitlines()[0]
        assert header == "azimuth_deg,target-dir,user-dir"

    def test_selftest(self, capsys):
        assert cli.main(["selftest"]) == 0
        assert "FAIL" not in capsys.readouterr().out


def test_options_defaults():
    o = SolveOptions()
    assert o.max_outer == 50 and o.tol == 1e-3
