"""End-to-end tests for the command-line interface.

These run ``cli.main`` in-process against a deliberately tiny synthetic
universe so the whole train/backtest/analyze/verify-theory/synth-data
pipeline finishes in seconds.
"""
import json
import os
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from minvar import cli, data, forecaster
from minvar.errors import InvalidConfigError


def small_config(out: Path) -> dict:
    return {
        "name": "exp",
        "data": {"synthetic": {"n_assets": 4, "n_days": 380, "seed": 7}},
        "delta_in": 10,
        "delta_out": 10,
        "strategies": ["EW", "Historical", "LW-D", "PFL", "DFL"],
        "train": {
            "grid": [
                {"objective": "dfl", "learning_rate": 3e-4, "batch_size": 16, "h_dim": 12},
                {"objective": "pfl", "learning_rate": 1e-5, "batch_size": 16, "h_dim": 12},
            ],
            "max_epochs": 2,
            "patience": 1,
            "init_scale": 0.01,
        },
        "seeds": [0],
        # delta_in=370 with delta_out=30 cannot fit in 380 days: one NaN cell
        "ablation": {"strategy": "Historical", "delta_in": [10, 370], "delta_out": [10, 30]},
        "analyze": {"strategy": "DFL", "k": 2, "lower_pct": 2.5, "upper_pct": 97.5},
        "theory": {"n_instances": 2, "n_assets": [4]},
        "out": str(out),
    }


def write_config(path: Path, cfg: dict) -> str:
    path.write_text(json.dumps(cfg))
    return str(path)


def read_report(path: Path):
    """Returns (schema_line, header_fields, data_rows) for a report CSV."""
    lines = path.read_text().splitlines()
    return lines[0], lines[1].split(","), [ln.split(",") for ln in lines[2:]]


class TestConfigLoading:
    def test_none_path_gives_defaults(self):
        assert cli.load_config(None) == cli.DEFAULT_CONFIG

    def test_defaults_are_deep_copied(self):
        cfg = cli.load_config(None)
        cfg["train"]["grid"].append({"objective": "dfl"})
        cfg["split"]["valid_frac"] = 0.9
        assert cli.load_config(None) == cli.DEFAULT_CONFIG

    def test_merge_preserves_sibling_defaults(self, tmp_path):
        path = write_config(tmp_path / "c.json", {"train": {"max_epochs": 3}})
        cfg = cli.load_config(path)
        assert cfg["train"]["max_epochs"] == 3
        assert cfg["train"]["patience"] == cli.DEFAULT_CONFIG["train"]["patience"]
        assert cfg["train"]["grid"] == cli.DEFAULT_CONFIG["train"]["grid"]
        assert cfg["delta_in"] == cli.DEFAULT_CONFIG["delta_in"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidConfigError, match="no such config"):
            cli.load_config(str(tmp_path / "absent.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{nope")
        with pytest.raises(InvalidConfigError, match="invalid JSON"):
            cli.load_config(str(path))

    def test_non_object(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(InvalidConfigError, match="JSON object"):
            cli.load_config(str(path))

    def test_unknown_keys_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.json", {"seedz": [1], "delta_in": 5})
        with pytest.raises(InvalidConfigError, match="seedz"):
            cli.load_config(str(path))


class TestMainExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        code = cli.main(["--config", str(tmp_path / "absent.json"), "synth-data"])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_invalid_json_config(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text("not json")
        assert cli.main(["--config", str(path), "synth-data"]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", {"bogus": 1})
        assert cli.main(["--config", str(path), "synth-data"]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_threads_must_be_positive(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", {"out": str(tmp_path / "o")})
        code = cli.main(["--config", path, "--threads", "0", "synth-data"])
        assert code == 2
        assert "--threads" in capsys.readouterr().err

    def test_threads_caps_blas_pools(self, tmp_path, monkeypatch):
        pools = (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        )
        for var in pools:
            monkeypatch.delenv(var, raising=False)
        cfg = small_config(tmp_path / "o")
        cfg["data"]["synthetic"]["n_days"] = 60
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "--threads", "2", "synth-data"]) == 0
        for var in pools:
            assert os.environ[var] == "2"

    def test_patience_must_be_below_max_epochs(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "o")
        cfg["data"]["synthetic"]["n_days"] = 120
        cfg["train"]["max_epochs"] = 2
        cfg["train"]["patience"] = 5
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "train"]) == 2
        assert "patience" in capsys.readouterr().err

    def test_train_requires_learned_strategy(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "o")
        cfg["strategies"] = ["EW", "Historical"]
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "train"]) == 2
        assert "no learned strategy" in capsys.readouterr().err

    def test_train_grid_must_cover_objective(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "o")
        cfg["train"]["grid"] = [
            {"objective": "dfl", "learning_rate": 3e-4, "batch_size": 16}
        ]
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "train"]) == 2
        assert "pfl" in capsys.readouterr().err

    def test_backtest_requires_seeds(self, tmp_path):
        cfg = small_config(tmp_path / "o")
        cfg["seeds"] = []
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "backtest"]) == 2

    def test_ablation_strategy_must_be_estimator(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "o")
        cfg["data"]["synthetic"]["n_days"] = 120
        cfg["strategies"] = ["EW"]
        cfg["ablation"] = {"strategy": "DFL", "delta_in": [10], "delta_out": [10]}
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "backtest"]) == 2
        assert "estimator" in capsys.readouterr().err

    def test_synth_data_requires_synthetic_source(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "o")
        cfg["data"] = {"csv": str(tmp_path / "r.csv"), "synthetic": None}
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "synth-data"]) == 2
        assert "synthetic" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_pipeline")
    cfg = small_config(root / "out")
    cfg_path = write_config(root / "config.json", cfg)
    codes = {}
    for cmd in ("train", "backtest", "analyze", "verify-theory", "synth-data"):
        codes[cmd] = cli.main(["--config", cfg_path, cmd])
    return SimpleNamespace(
        codes=codes,
        cfg=cfg,
        cfg_path=cfg_path,
        exp=Path(cfg["out"]) / "exp",
    )


class TestPipeline:
    def test_all_commands_succeed(self, pipeline):
        assert pipeline.codes == {
            "train": 0,
            "backtest": 0,
            "analyze": 0,
            "verify-theory": 0,
            "synth-data": 0,
        }

    def test_config_echo_is_fully_materialized(self, pipeline):
        echoed = json.loads((pipeline.exp / "configs" / "config.json").read_text())
        assert echoed == cli.load_config(pipeline.cfg_path)
        assert echoed["split"] == cli.DEFAULT_CONFIG["split"]

    def test_checkpoints_written(self, pipeline):
        for objective in ("dfl", "pfl"):
            path = pipeline.exp / "checkpoints" / f"{objective}_seed0.ckpt"
            params, meta = forecaster.load_checkpoint(path)
            assert meta["objective"] == objective
            assert meta["seed"] == 0
            assert meta["batch_size"] == 16
            assert params.h_dim == 12
            assert 12 in params.resid_w.shape

    def test_train_record_csv(self, pipeline):
        schema, header, rows = read_report(
            pipeline.exp / "checkpoints" / "dfl_seed0_record.csv"
        )
        assert schema == "# schema=train_record.v1"
        assert header == ["epoch", "train_loss", "valid_loss", "seconds", "is_best"]
        assert 1 <= len(rows) <= 2
        assert sum(int(r[4]) for r in rows) == 1

    def test_train_grid_csv(self, pipeline):
        schema, header, rows = read_report(
            pipeline.exp / "checkpoints" / "pfl_seed0_grid.csv"
        )
        assert schema == "# schema=train_grid.v1"
        assert header[0] == "objective"
        assert len(rows) == 1
        assert rows[0][0] == "pfl"
        assert rows[0][5] in ("early-stopped", "max-epochs")

    def test_vol_table(self, pipeline):
        schema, header, rows = read_report(
            pipeline.exp / "reports" / "vol_table.csv"
        )
        assert schema == "# schema=vol_table.v1"
        assert header == ["strategy", "ann_vol_mean", "ann_vol_std", "n_seeds", "error"]
        assert [r[0] for r in rows] == pipeline.cfg["strategies"]
        for r in rows:
            assert float(r[1]) > 0
            assert r[2] == ""  # single seed: no std
            assert r[3] == "1"
            assert r[4] == ""

    def test_weights_history(self, pipeline):
        schema, header, rows = read_report(
            pipeline.exp / "reports" / "weights_history.csv"
        )
        assert schema == "# schema=weights_history.v1"
        assert header[:3] == ["strategy", "seed", "date"]
        assert len(header) == 3 + 4
        # lead panel = 76 test days + 10 lead-in -> 7 full rebalance blocks
        by_strategy: dict = {}
        for r in rows:
            by_strategy.setdefault(r[0], []).append(r)
        assert set(by_strategy) == set(pipeline.cfg["strategies"])
        for kind, krows in by_strategy.items():
            assert len(krows) == 7
        ew = np.array([[float(x) for x in r[3:]] for r in by_strategy["EW"]])
        assert np.all(ew == 0.25)
        # every strategy rebalances on the same dates
        dates = [r[2] for r in by_strategy["EW"]]
        for krows in by_strategy.values():
            assert [r[2] for r in krows] == dates

    def test_ablation_grid(self, pipeline):
        schema, header, rows = read_report(
            pipeline.exp / "reports" / "ablation_grid.csv"
        )
        assert schema == "# schema=ablation_grid.v1"
        assert header == ["delta_in", "delta_out", "ann_vol"]
        cells = {(r[0], r[1]): r[2] for r in rows}
        assert set(cells) == {("10", "10"), ("10", "30"), ("370", "10"), ("370", "30")}
        assert cells[("370", "30")] == ""  # 370 + 30 > 380 days: infeasible
        for key, vol in cells.items():
            if key != ("370", "30"):
                assert float(vol) > 0

    def test_analysis_reports(self, pipeline):
        reports = pipeline.exp / "reports"
        schema, _, perm_rows = read_report(reports / "permutation.csv")
        assert schema == "# schema=permutation.v1"
        assert len(perm_rows) == 4

        schema, header, _ = read_report(reports / "precision_reordered.csv")
        assert schema == "# schema=precision_reordered.v1"
        assert sorted(header[1:]) == sorted(r[2] for r in perm_rows)

        schema, _, attr_rows = read_report(reports / "attribution_regions.csv")
        assert schema == "# schema=attribution_regions.v1"
        assert [r[0] for r in attr_rows][:2] == ["diagonal", "offdiag"]

        schema, _, rank_rows = read_report(reports / "rank_precision.csv")
        assert schema == "# schema=rank_precision.v1"
        assert [r[0] for r in rank_rows] == pipeline.cfg["strategies"]
        for r in rank_rows:
            assert r[1] == "2"
            assert 0.0 <= float(r[2]) <= 1.0

        schema, _, env_rows = read_report(reports / "weight_envelope.csv")
        assert schema == "# schema=weight_envelope.v1"
        assert len(env_rows) == 4
        for r in env_rows:
            assert float(r[2]) <= float(r[1]) <= float(r[3])
        assert sorted(r[4] for r in env_rows) == ["0", "1", "2", "3"]

    def test_theory_report(self, pipeline):
        schema, header, rows = read_report(
            pipeline.exp / "reports" / "theory_report.csv"
        )
        assert schema == "# schema=theory_report.v1"
        assert header[:2] == ["seed", "n_assets"]
        assert len(rows) == 2
        assert all(r[1] == "4" for r in rows)

    def test_synth_data_roundtrip(self, pipeline):
        panel = data.load_returns(
            pipeline.exp / "reports" / "synthetic_returns.csv"
        )
        synth = pipeline.cfg["data"]["synthetic"]
        spec = data.two_regime_universe(synth["n_assets"])
        fresh = data.generate_synthetic(
            synth["n_assets"], synth["n_days"], synth["seed"], spec
        )
        assert panel.tickers == fresh.tickers
        # %.17g round-trips float64 exactly
        assert np.array_equal(panel.values, fresh.values)

    def test_backtest_rerun_is_byte_identical(self, pipeline):
        reports = pipeline.exp / "reports"
        before = {
            name: (reports / name).read_bytes()
            for name in ("vol_table.csv", "weights_history.csv", "ablation_grid.csv")
        }
        assert cli.main(["--config", pipeline.cfg_path, "backtest"]) == 0
        for name, blob in before.items():
            assert (reports / name).read_bytes() == blob

    def test_analyze_rerun_is_byte_identical(self, pipeline):
        reports = pipeline.exp / "reports"
        names = (
            "permutation.csv",
            "precision_reordered.csv",
            "attribution_regions.csv",
            "rank_precision.csv",
            "weight_envelope.csv",
        )
        before = {name: (reports / name).read_bytes() for name in names}
        assert cli.main(["--config", pipeline.cfg_path, "analyze"]) == 0
        for name, blob in before.items():
            assert (reports / name).read_bytes() == blob


class TestBacktestErrors:
    def test_missing_checkpoints_keep_partial_table(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "o")
        cfg["data"]["synthetic"]["n_days"] = 120
        cfg["strategies"] = ["EW", "DFL"]
        cfg["ablation"] = None
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "backtest"]) == 3

        exp = tmp_path / "o" / "exp"
        _, _, rows = read_report(exp / "reports" / "vol_table.csv")
        by_kind = {r[0]: r for r in rows}
        assert float(by_kind["EW"][1]) > 0 and by_kind["EW"][4] == ""
        assert by_kind["DFL"][1] == "" and by_kind["DFL"][4] != ""
        _, _, wrows = read_report(exp / "reports" / "weights_history.csv")
        assert {r[0] for r in wrows} == {"EW"}

    def test_analyze_requires_backtest_artifacts(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "o")
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "analyze"]) == 2
        assert "missing backtest artifact" in capsys.readouterr().err


class TestOverrides:
    def test_seed_flag_replaces_config_seeds(self, tmp_path):
        cfg = small_config(tmp_path / "o")
        cfg["data"]["synthetic"]["n_days"] = 200
        cfg["strategies"] = ["DFL"]
        cfg["train"]["grid"] = [cfg["train"]["grid"][0]]
        path = write_config(tmp_path / "c.json", cfg)
        assert cli.main(["--config", path, "--seed", "1", "train"]) == 0
        ckpts = tmp_path / "o" / "exp" / "checkpoints"
        assert (ckpts / "dfl_seed1.ckpt").exists()
        assert not (ckpts / "dfl_seed0.ckpt").exists()

    def test_out_flag_overrides_config(self, tmp_path):
        cfg = small_config(tmp_path / "o")
        cfg["data"]["synthetic"]["n_days"] = 60
        path = write_config(tmp_path / "c.json", cfg)
        other = tmp_path / "elsewhere"
        assert cli.main(["--config", path, "--out", str(other), "synth-data"]) == 0
        assert (other / "exp" / "reports" / "synthetic_returns.csv").exists()
        assert not (tmp_path / "o").exists()

    def test_seed_steers_theory_instances(self, tmp_path):
        cfg = small_config(tmp_path / "o")
        path = write_config(tmp_path / "c.json", cfg)
        report = tmp_path / "o" / "exp" / "reports" / "theory_report.csv"

        assert cli.main(["--config", path, "--seed", "0", "verify-theory"]) == 0
        base_a = report.read_bytes()
        assert cli.main(["--config", path, "--seed", "0", "verify-theory"]) == 0
        assert report.read_bytes() == base_a
        assert cli.main(["--config", path, "--seed", "5", "verify-theory"]) == 0
        assert report.read_bytes() != base_a
