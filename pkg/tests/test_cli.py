import csv
import json

import pytest

from painpair.cli import ConfigError, main, parse_config
from painpair.criterion import separable_trials, write_trials


def test_defaults(tmp_path):
    (tmp_path / "empty.txt").write_text("")
    cfg = parse_config(tmp_path / "empty.txt")
    assert (cfg["epochs"], cfg["batch_size"], cfg["dropout"], cfg["c"]) == (70, 32, 0.25, 0.05)
    tc = cfg.train_config()
    assert (tc.epochs, tc.batch_size, tc.dropout_p, tc.contrastive_c) == (70, 32, 0.25, 0.05)


def test_flags_override_file(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nepochs=2\npairing = random\n")
    cfg = parse_config(path, ["--epochs", "3", "--contrastive", "on"])
    assert cfg["epochs"] == 3
    assert cfg["pairing"] == "random"
    assert cfg["contrastive"] is True


def test_unknown_key_lists_valid_keys(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("epcohs=2\n")
    with pytest.raises(ConfigError, match="epcohs") as err:
        parse_config(path)
    assert "epochs" in str(err.value) and "batch_size" in str(err.value)


def test_type_mismatch_names_key():
    with pytest.raises(ConfigError, match="'dropout'"):
        parse_config(None, ["--dropout", "high"])
    with pytest.raises(ConfigError, match="'pairing'"):
        parse_config(None, ["--pairing", "other"])


def test_echo_parses_back(tmp_path):
    cfg = parse_config(None, ["--epochs", "4", "--clahe", "off", "--c", "0.1"])
    (tmp_path / "echo.txt").write_text(cfg.echo())
    assert parse_config(tmp_path / "echo.txt").values == cfg.values


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_predict_missing_checkpoint(tmp_path, capsys):
    missing = tmp_path / "nowhere.ckpt"
    code = main(["predict", "--checkpoint", str(missing), "--ref-dir", str(tmp_path),
                 "--target", "t.pgm"])
    assert code != 0
    assert str(missing) in last_error(capsys)["message"]


def test_criterion_command(tmp_path):
    write_trials(tmp_path / "trials.csv", separable_trials())
    out = tmp_path / "crit.csv"
    assert main(["criterion", "--trials", str(tmp_path / "trials.csv"), "--source", "vas",
                 "--out", str(out)]) == 0
    row = next(csv.DictReader(out.open()))
    assert float(row["auc"]) == 1.0
    assert 2 < float(row["crit"]) <= 4


def test_synth_train_eval_round_trip(tmp_path, capsys):
    data, run = tmp_path / "data", tmp_path / "run"
    assert main(["synth", "--subjects", "4", "--frames", "8", "--out", str(data), "--bias"]) == 0
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(f"data={data}\nout={run}\nepochs=1\nbatch_size=8\nfold=0\nn_folds=2\n")
    assert main(["train", "--config", str(cfg), "--multitask", "off"]) == 0
    assert (run / "config.txt").exists() and (run / "seed").read_text().strip() == "0"
    assert "multitask=off" in (run / "config.txt").read_text()
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data),
                 "--windows", "1,5,20"]) == 0
    report = json.loads((run / "report.json").read_text())
    assert report["schema"] == "painpair.eval/1"
    assert report["datasets"]["Dementia"]["n_subjects"] == 2

    # re-run from the echo elsewhere: identical checkpoint and report bytes
    run2 = tmp_path / "run2"
    assert main(["train", "--config", str(run / "config.txt"), "--out", str(run2)]) == 0
    assert main(["eval", "--checkpoint", str(run2 / "model.ckpt"), "--data", str(data)]) == 0
    assert (run / "model.ckpt").read_bytes() == (run2 / "model.ckpt").read_bytes()
    assert (run / "report.json").read_bytes() == (run2 / "report.json").read_bytes()

    refs = data / next(iter(sorted(p.name for p in data.iterdir() if p.is_dir())))
    capsys.readouterr()
    assert main(["predict", "--checkpoint", str(run / "model.ckpt"), "--ref-dir", str(refs),
                 "--target", str(sorted(refs.iterdir())[0])]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["n_refs"] == 8 and isinstance(out["pspi"], float)


def test_short_override_is_not_an_abbreviation(tmp_path, capsys):
    # --c is the contrastive weight, not a prefix of --config
    assert main(["train", "--out", str(tmp_path / "r"), "--c", "0.1"]) != 0
    assert "data" in last_error(capsys)["message"]


def test_train_without_data_fails_cleanly(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "r")]) != 0
    assert "data" in last_error(capsys)["message"]


def test_threads_env(monkeypatch, tmp_path):
    import torch
    monkeypatch.setenv("PAINPAIR_THREADS", "1")
    write_trials(tmp_path / "t.csv", separable_trials())
    before = torch.get_num_threads()
    try:
        assert main(["criterion", "--trials", str(tmp_path / "t.csv"), "--out",
                     str(tmp_path / "o.csv")]) == 0
        assert torch.get_num_threads() == 1
    finally:
        torch.set_num_threads(before)
