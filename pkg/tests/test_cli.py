import json

import pytest

from orderalign.cli import build_config, main, make_parser


def test_paramcount(capsys):
    assert main(["paramcount", "--arch-id", "B"]) == 0
    out = capsys.readouterr().out
    assert "258,560" in out and "1,311,744" in out and "1,570,304" in out


def test_paramcount_with_projection(capsys):
    assert main(["paramcount", "--arch-id", "A", "--include-projection", "--d", "1024"]) == 0
    assert f"{517_120 + 1024 * 512:,}" in capsys.readouterr().out


def test_config_precedence(tmp_path):
    (tmp_path / "c.yaml").write_text("arch_id: C\nmargin: 0.2\nepochs: 9\n")
    args = make_parser().parse_args(["train", "--config", str(tmp_path / "c.yaml"),
                                     "--margin", "0.3", "--symmetric-argument-order", "yes"])
    config = build_config(args)
    assert (config.arch_id, config.margin, config.epochs) == ("C", 0.3, 9)
    assert config.symmetric_argument_order is True
    assert config.batch_size == 100


def test_verbose_after_subcommand():
    args = make_parser().parse_args(["paramcount", "-v"])
    assert args.verbose


def test_synth_train_eval(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth-data", "--out", str(data), "--n-train", "6", "--n-val", "2",
                 "--n-test", "4", "--seed", "1"]) == 0
    files = ["--features-path", str(data / "features.oaf"),
             "--captions-path", str(data / "captions.tsv"),
             "--splits-path", str(data / "splits.tsv")]
    ckpt = tmp_path / "run.oac"
    assert main(["train", *files, "--d", "8", "--batch-size", "3", "--epochs", "2",
                 "--checkpoint-path", str(ckpt)]) == 0
    assert ckpt.exists() and (tmp_path / "run.oac.last").exists()
    assert main(["train", *files, "--d", "8", "--batch-size", "3", "--epochs", "3",
                 "--checkpoint-path", str(ckpt), "--resume", str(ckpt) + ".last"]) == 0
    capsys.readouterr()
    report = tmp_path / "r.json"
    assert main(["eval", *files, "--checkpoint-path", str(ckpt), "--folds", "2",
                 "--json", str(report)]) == 0
    table = capsys.readouterr().out
    assert "Image to text" in table and "mean" in table
    rows = json.loads(report.read_text())
    assert len(rows) == 6


def test_eval_needs_checkpoint(capsys):
    assert main(["eval"]) == 2


@pytest.mark.slow
def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--d", "32", "--coords", "20"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "conv" in out
