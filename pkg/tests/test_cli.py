import csv

import pytest

from capdmf import cli


def _run(*argv):
    return cli.main(list(argv))


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        _run("--help")
    out = capsys.readouterr().out
    for cmd in ("train", "evaluate", "sweep", "export-taps", "selftest"):
        assert cmd in out


def test_selftest(capsys):
    assert _run("selftest", "--seed", "1") == 0
    assert capsys.readouterr().out.count("PASS") == 4


def test_train_evaluate_export(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "train:\n  symbols_per_epoch: 256\n  warmup_batches: 2\n"
        "evaluation:\n  symbols: 400\n  constellation_points: 10\n"
    )
    common = ["--config", str(cfg), "--profile", "ci", "--seed", "3", "--out", str(tmp_path / "o"),
              "--omega-n", "0.6", "--snr-db", "20", "--epochs", "3"]
    assert _run("train", *common) == 0
    assert (tmp_path / "o" / "model_0.60.json").exists()
    assert _run("evaluate", *common) == 0
    rows = list(csv.reader(open(tmp_path / "o" / "evm_sweep.csv")))
    assert len(rows) == 2 and rows[1][2] == "20"
    (tmp_path / "o" / "taps_0.60.csv").unlink()
    assert _run("export-taps", *common) == 0
    assert (tmp_path / "o" / "taps_0.60.csv").exists()
    assert _run("export-taps", *common, "--checkpoint", str(tmp_path / "o" / "model_0.60.json")) == 0


def test_pooled_sweep_with_power_axis(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train:\n  symbols_per_epoch: 256\n  warmup_batches: 2\nevaluation:\n  symbols: 400\n")
    out = tmp_path / "p"
    rc = _run("sweep", "--config", str(cfg), "--mode", "pooled", "--out", str(out), "--omega-n", "0.5", "0.7",
              "--power-dbm", "-10", "0", "--epochs", "2")
    assert rc == 0
    rows = list(csv.reader(open(out / "evm_sweep.csv")))
    assert [r[1] for r in rows[1:]] == ["-10", "0", "-10", "0"]
    assert [r[2] for r in rows[1:]] == ["20", "40", "20", "40"]
    assert (out / "model_pooled.json").exists() and (out / "loss_pooled.csv").exists()


def test_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  learning_rate: -1\n")
    assert _run("train", "--config", str(bad)) == 2
    assert "configuration error" in capsys.readouterr().err
