import numpy as np
import pytest

from tipi.analysis import BehaviorLog
from tipi.errors import ConfigError, ContractError
from tipi.harness import ExperimentConfig, SweepSpec, derive_seed, export, run, sweep, sweep_raw
from tipi.harness.cli import main
from tipi.harness.presets import (PRESETS, environment_clustering, partitions_equal,
                                  preset_config, preset_sweep)

LOOP_TOML = """
seed = 4
steps = 300
[plant]
kind = "loop"
lam = 0.01
[controller]
C0 = 1.1
h0 = 0.05
s0 = 0.3
[exploration]
epsilon = 0.01
"""


class TestConfig:
    def test_parse_toml(self):
        cfg = ExperimentConfig.from_toml_string(LOOP_TOML)
        assert cfg.seed == 4 and cfg.plant["lam"] == 0.01
        assert cfg.exploration["mode"] == "neural_tau2"

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text(LOOP_TOML)
        assert ExperimentConfig.from_toml(path).to_dict() == ExperimentConfig.from_toml_string(LOOP_TOML).to_dict()

    @pytest.mark.parametrize("text,field", [
        ("steps = 3\n[plant]\nkind='loop'", "seed"),
        ("seed = 1\n[plant]\nkind='loop'\nlam='x'", "plant.lam"),
        ("seed = 1\n[plant]\nkind='loop'\nbogus=1", "plant.bogus"),
        ("seed = 1\n[plant]\nkind='rover'", "plant.kind"),
        ("seed = 1\n[plant]\nkind='loop'\n[exploration]\nepsilon=-1.0", "exploration.epsilon"),
        ("seed = 1\n[plant]\nkind='loop'\n[exploration]\nmode='x'", "exploration.mode"),
        ("seed = 1\n[plant]\nkind='loop'\n[exploration]\nlearn_C=1", "exploration.learn_C"),
        ("seed = true\n[plant]\nkind='loop'", "seed"),
        ("seed = 1\n[plant]\nkind='loop'\n[controller]\nkind='random'", "controller.kind"),
        ("seed = 1\nsteps = -4\n[plant]\nkind='loop'", "steps"),
        ("seed = 1", "plant"),
    ])
    def test_errors_name_the_field(self, text, field):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_toml_string(text)
        assert err.value.path == field

    def test_malformed_toml(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_toml_string("seed = = 1")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_toml(tmp_path / "nope.toml")

    def test_overrides(self):
        cfg = ExperimentConfig.from_toml_string(LOOP_TOML).with_overrides({"exploration.epsilon": 0.5})
        assert cfg.exploration["epsilon"] == 0.5
        with pytest.raises(ConfigError):
            cfg.with_overrides({"nowhere.x": 1})


class TestRun:
    def test_zero_steps_gives_header_only_log(self):
        log = run(ExperimentConfig.from_toml_string(LOOP_TOML).with_overrides({"steps": 0}))
        assert len(log) == 0 and log.columns[0] == "t"

    def test_deterministic(self):
        cfg = ExperimentConfig.from_toml_string(LOOP_TOML)
        np.testing.assert_array_equal(run(cfg).rows, run(cfg).rows)

    def test_seed_matters_only_with_noise(self):
        cfg = ExperimentConfig.from_toml_string(LOOP_TOML)
        a, b = run(cfg), run(cfg.with_overrides({"seed": 5}))
        assert not np.array_equal(a.rows, b.rows)
        quiet = cfg.with_overrides({"plant.lam": 0.0, "exploration.mode": "onedim_deterministic"})
        np.testing.assert_array_equal(run(quiet).rows, run(quiet.with_overrides({"seed": 5})).rows)

    def test_fig4a_preset_columns(self):
        log = run(preset_config("fig4a").with_overrides({"steps": 1000}))
        for col in ("t", "s", "C", "h", "tipi"):
            assert col in log.columns
        np.testing.assert_array_equal(log.column("C"), 1.2)
        assert log.column("s")[0] == 0.8 and log.column("h")[0] == 0.1

    @pytest.mark.parametrize("overrides", [
        {"plant.lam": 0.0, "exploration.mode": "onedim_deterministic"},
        {"plant.lam": 0.01, "exploration.mode": "neural_tau2"},
    ])
    def test_fast_path_matches_generic_loop(self, overrides):
        cfg = ExperimentConfig.from_toml_string(LOOP_TOML).with_overrides({**overrides, "steps": 2000})
        fast = run(cfg)
        slow = run(cfg.with_overrides({"fast_path": False}))
        assert fast.meta["path"] == "fast" and slow.meta["path"] == "generic"
        assert fast.columns == slow.columns
        for col in ("s", "a", "C", "h", "tipi"):
            np.testing.assert_allclose(fast.column(col), slow.column(col), atol=1e-9, equal_nan=True)

    def test_log_every(self):
        log = run(ExperimentConfig.from_toml_string(LOOP_TOML).with_overrides({"log_every": 100}))
        np.testing.assert_array_equal(log.column("t"), [0, 100, 200, 300])

    def test_noise_controllers_on_chain(self):
        base = preset_config("dimension-study").with_overrides({"steps": 50})
        for kind in ("noise_control", "noise_signal"):
            log = run(base.with_overrides({"controller.kind": kind}))
            assert len(log) == 51 and np.all(np.abs(log.block("a")) <= 1)

    def test_freeze_stops_parameter_changes(self):
        cfg = preset_config("chain-sweep").with_overrides({"steps": 400, "log_every": 1,
                                                           "exploration.freeze_after": 200})
        C = run(cfg).block("C")
        assert not np.array_equal(C[100], C[200])
        np.testing.assert_array_equal(C[201:], np.repeat(C[201:202], len(C) - 201, axis=0))

    def test_oscillator_plant(self):
        cfg = ExperimentConfig.from_dict({"seed": 0, "steps": 200, "plant": {"kind": "oscillator", "lam": 0.01},
                                          "controller": {"C0": 1.0}, "exploration": {"epsilon": 0.01}})
        log = run(cfg)
        assert "position" in log.columns and np.all(np.isfinite(log.block("C")))


class TestExport:
    def test_round_trip(self, tmp_path):
        log = run(ExperimentConfig.from_toml_string(LOOP_TOML))
        path = export(log, tmp_path / "run.csv")
        back = BehaviorLog.from_csv(path)
        np.testing.assert_array_equal(np.nan_to_num(back.rows, nan=-7), np.nan_to_num(log.rows, nan=-7))

    def test_empty(self, tmp_path):
        log = run(ExperimentConfig.from_toml_string(LOOP_TOML).with_overrides({"steps": 0}))
        export(log, tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text().count("\n") == 1

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ContractError):
            export(BehaviorLog(["t"]), tmp_path / "x", fmt="parquet")


class TestSweep:
    def _spec(self, **kw):
        base = preset_config("chain-sweep").with_overrides({"steps": 300, "plant.N": 4})
        return SweepSpec(base, "exploration.epsilon", kw.pop("values", [0.0, 0.02]),
                         kw.pop("replicates", 2), "displacement", 200)

    def test_single_point(self):
        table = sweep(self._spec(values=[0.01], replicates=1))
        assert table.shape == (1, 4)

    def test_zero_rate_does_not_move(self):
        raw = sweep_raw(self._spec())
        np.testing.assert_array_equal(raw[0], 0.0)

    def test_parallel_equals_serial(self):
        spec = self._spec()
        np.testing.assert_array_equal(sweep_raw(spec, threads=2), sweep_raw(spec, threads=1))

    def test_replicate_seeds_distinct(self):
        assert len({derive_seed(0, r) for r in range(100)}) == 100

    def test_bad_spec(self):
        with pytest.raises(ContractError):
            self._spec(replicates=0)


class TestPresets:
    def test_all_presets_validate(self):
        for name, p in PRESETS.items():
            preset_config(name)
        assert preset_sweep().values[0] == 0.0 and len(preset_sweep().values) == 7

    def test_partition_comparison(self):
        assert partitions_equal([0, 0, 1, 1], [1, 1, 0, 0])
        assert not partitions_equal([0, 0, 1, 1], [0, 1, 0, 1])

    def test_clustering_study_shape(self):
        res = environment_clustering(0, initial_conditions=[0.0, 0.05], steps=300)
        assert res.distances.shape == (6, 6) and len(res.assignment) == 6


class TestCli:
    def test_presets_list(self, capsys):
        assert main(["presets", "list"]) == 0
        assert "fig4a" in capsys.readouterr().out

    def test_run_and_analyze(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text(LOOP_TOML.replace("steps = 300", "steps = 600"))
        assert main(["run", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path)]) == 0
        log = tmp_path / "run.csv"
        assert log.exists()
        assert main(["analyze", "dimension", str(log), "--chunks", "50,100"]) == 0
        assert main(["analyze", "overlap", str(log), "--chunk-length", "200", "--components", "1"]) == 0
        assert main(["analyze", "cluster", str(log), str(log), "--clusters", "1"]) == 0

    def test_sweep_command(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(LOOP_TOML)
        rc = main(["sweep", "--config", str(cfg), "--param", "exploration.epsilon", "--values", "0,0.01",
                   "--metric", "mean_abs_C", "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "sweep.csv").read_text().startswith("value,mean,std,n")

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("seed = 1\n[plant]\nkind = 'loop'\nfoo = 2\n")
        assert main(["run", "--config", str(cfg)]) == 2
        assert "plant.foo" in capsys.readouterr().err

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("seed = 1\nsteps = 5\n[plant]\nkind = 'chain'\nN = 4\ndt = 0.5\n")
        assert main(["run", "--config", str(cfg)]) == 3

    def test_unknown_preset(self):
        assert main(["run", "--preset", "nope"]) == 2
