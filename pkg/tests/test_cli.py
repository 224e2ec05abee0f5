import json

import pytest

from metaweight import cli
from metaweight.meta import TrainingDiverged
from metaweight.report import RunReport

TINY_MNIST = ["mnist", "--use-synthetic", "--max-iters", "6", "--eval-every", "3", "--snapshot-every", "3"]


def test_bad_enum_exits_with_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["dialog", "--regime", "bogus"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        cli.main(["mnist", "--strategy", "nope"])
    assert err.value.code == 2


def test_config_file_supplies_defaults_and_is_validated(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"strategy": "oracle", "corruption": 0.5, "max_iters": 7}))
    parser = cli.build_parser()
    argv = ["--config", str(cfg), "mnist"]
    cli._apply_config_file(parser, argv)
    exp = cli.experiment_from_args(parser.parse_args(argv))
    assert exp.strategy == "oracle" and exp.corruption == 0.5 and exp.overrides == {"max_iters": 7}
    cfg.write_text(json.dumps({"strategy": "nope"}))
    with pytest.raises(SystemExit) as err:
        cli.main(["--config", str(cfg), "mnist"])
    assert err.value.code == 2


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("METAWEIGHT_SEED", "41")
    args = cli.build_parser().parse_args(["mnist", "--seeds", "3"])
    assert cli.experiment_from_args(args).seeds == [41, 42, 43]
    args = cli.build_parser().parse_args(["mnist", "--seed", "5"])
    assert cli.experiment_from_args(args).seeds == [5]


def test_mnist_run_writes_reports_and_aggregate(tmp_path):
    assert cli.main(TINY_MNIST + ["--seeds", "2", "--strategy", "oracle", "--out", str(tmp_path)]) == 0
    rep = RunReport.load(tmp_path / "mnist_weighted_multitask_oracle_seed1.json")
    assert rep.seed == 1 and rep.strategy == "oracle"
    assert rep.config["experiment"]["corruption"] == 0.75 and "seeds" not in rep.config["experiment"]
    assert rep.config["train"]["batch_primary"] == 256 and rep.config["train"]["enable_step1"] is False
    assert (tmp_path / "mnist_weighted_multitask_oracle_seed1_weights.csv").exists()
    agg = json.loads((tmp_path / "mnist_weighted_multitask_oracle_aggregate.json").read_text())
    assert agg["n"] == 2 and agg["seeds"] == [0, 1]


def test_missing_data_directory_is_an_error(tmp_path, capsys):
    assert cli.main(["mnist", "--out", str(tmp_path)]) == 1
    assert "--mnist-dir" in capsys.readouterr().err


def test_divergence_aborts_with_diagnostic(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise TrainingDiverged(12, "primary loss")
    monkeypatch.setattr(cli, "run_regime", boom)
    assert cli.main(TINY_MNIST + ["--out", str(tmp_path)]) == 1
    assert "12" in capsys.readouterr().err


def test_dialog_smoke_contract(tmp_path):
    argv = ["dialog", "--regime", "weighted_multitask", "--fraction", "10", "--use-synthetic", "--seeds", "2",
            "--epochs", "1", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    rep = RunReport.load(tmp_path / "dialog_weighted_multitask_learned_p10_seed0.json")
    assert rep.extra["primary_dialogs"] == 100 and rep.weight_snapshots
    assert (tmp_path / "dialog_weighted_multitask_learned_p10_aggregate.json").exists()


def test_dialog_epoch_budget():
    exp = cli.ExperimentConfig("dialog", use_synthetic=True)
    cfg = cli.dialog_config(exp, 320)
    assert cfg.eval_every == 10 and cfg.max_iters == cli.FAST_EPOCHS * 10 and cfg.snapshot_every == 500
    exp.budget = "full"
    assert cli.dialog_config(exp, 320).max_iters == cli.FULL_EPOCHS * 10


def test_tables_empty_directory_warns(tmp_path, capsys):
    assert cli.main(["tables", "--runs", str(tmp_path)]) == 0
    out = capsys.readouterr()
    assert "warning" in out.err and "87.86" in out.out and cli.GAP in out.out


def test_tables_fill_measured_cells(tmp_path, capsys):
    cli.main(TINY_MNIST + ["--seeds", "2", "--strategy", "oracle", "--out", str(tmp_path)])
    capsys.readouterr()
    t1, _, n = cli.reproduce_tables(tmp_path)
    assert n == 2
    oracle_row = next(line for line in t1.splitlines() if line.startswith("Oracle"))
    assert "+/-" in oracle_row.split("90.32")[0]


def test_selftest_passes(capsys):
    assert cli.main(["selftest", "--trials", "3"]) == 0
    assert "FAIL" not in capsys.readouterr().out
