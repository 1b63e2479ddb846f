import json
import math
import subprocess
import sys

import numpy as np
import pytest

from uabnn.bnn import BnnModel, Checkpoint, load_checkpoint, save_checkpoint
from uabnn.cli import RunConfig, build_parser, main
from uabnn.features import dataset_from_csv
from uabnn.uncertainty import sample_probs

SMALL_PLAN = {"samples_per_class": 90, "epochs": 8, "S_eval": 10, "hidden_layer_sizes": [12]}


@pytest.fixture
def data(tmp_path):
    assert main(["gen-data", "--windows-per-class", "100", "--out", str(tmp_path / "d.csv"), "-q"]) == 0
    return tmp_path / "d.csv"


@pytest.fixture
def model(tmp_path, data):
    out = tmp_path / "m.json"
    assert main(["train", str(data), "--epochs", "5", "--out", str(out), "-q"]) == 0
    return out


def test_gen_data_counts_and_determinism(tmp_path, data, capsys):
    assert len(dataset_from_csv(data)) == 300
    assert main(["gen-data", "--windows-per-class", "100", "--out", str(tmp_path / "again.csv"), "-q"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["rows"] == 300 and summary["classes"] == {"NoFault": 100, "MissingTooth": 100, "ChippedTooth": 100}
    assert (tmp_path / "again.csv").read_bytes() == data.read_bytes()


def test_invalid_fault_name_exits_2(tmp_path, capsys):
    assert main(["gen-data", "--faults", "NoFault,Wobble", "--out", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert "Wobble" in err and "MissingTooth" in err and "Eccentricity" in err


def test_train_writes_checkpoint_and_loss_trace(tmp_path, model, data):
    ck = load_checkpoint(model)
    assert ck.kind == "bnn" and ck.scaler is not None and ck.class_names[1] == "MissingTooth"
    trace = (tmp_path / "m.loss.csv").read_text().splitlines()
    assert trace[0] == "epoch,elbo,kl,nll" and len(trace) == 6
    # predictions from the reloaded checkpoint equal those computed from the in-memory copy
    X = ck.scaler.transform(dataset_from_csv(data).features)
    again = load_checkpoint(model)
    assert np.array_equal(sample_probs(ck.model, X, 5, 3), sample_probs(again.model, X, 5, 3))


def test_train_deterministic_flag(tmp_path, data):
    out = tmp_path / "det.json"
    assert main(["train", str(data), "--deterministic", "--epochs", "3", "--out", str(out), "-q"]) == 0
    assert load_checkpoint(out).kind == "deterministic"


def test_missing_dataset_exits_1(tmp_path):
    assert main(["train", str(tmp_path / "missing.csv"), "-q"]) == 1


def test_predict_json_lines(tmp_path, model, data):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    base = ["predict", str(model), str(data), "-S", "8", "--prediction-seed", "4", "-q"]
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = [json.loads(l) for l in a.read_text().splitlines()]
    assert len(lines) == 300
    for row in lines:
        assert {"pu", "au", "eu", "mean_probs", "predicted_class", "confidence", "eu_clamped"} <= set(row)
        assert row["pu"] == row["au"] + row["eu"]
    bits = tmp_path / "bits.jsonl"
    assert main(base + ["--units", "bits", "--out", str(bits)]) == 0
    first_bits = json.loads(bits.read_text().splitlines()[0])
    assert first_bits["pu"] == pytest.approx(lines[0]["pu"] / math.log(2), rel=1e-12)


def test_predict_collapsed_posterior_has_zero_eu(tmp_path, data, capsys):
    model = BnnModel.init(13, (8,), 3, np.random.default_rng(0), rho_init=-40.0)
    path = save_checkpoint(Checkpoint(model, [0, 1, 2], {0: "NoFault", 1: "MissingTooth", 2: "ChippedTooth"}),
                           tmp_path / "collapsed.json")
    assert main(["predict", str(path), str(data), "-S", "6", "-q"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(rows) == 300 and all(r["eu"] == 0.0 for r in rows)


def test_experiment_all_and_rerun(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps(SMALL_PLAN))
    for out in ("r1", "r2"):
        assert main(["experiment", "all", "--plan", str(plan), "--out-dir", str(tmp_path / out), "-q"]) == 0
    for study in ("ood", "noise", "incremental"):
        first = (tmp_path / "r1" / study / "results.json").read_bytes()
        assert first == (tmp_path / "r2" / study / "results.json").read_bytes()
    assert (tmp_path / "r1" / "boxplot_data.csv").is_file()
    assert main(["experiment", "everything", "--plan", str(plan)]) == 2


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([name, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
    assert main(["predict", "a", "b", "--no-such-flag"]) == 2


def test_seed_precedence(tmp_path, monkeypatch):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"seed": 3}))
    monkeypatch.setenv("UABNN_SEED", "11")
    saved = tmp_path / "eff.json"
    args = ["gen-data", "--config", str(cfg_file), "--windows-per-class", "18", "--out", str(tmp_path / "x.csv"),
            "--save-config", str(saved), "-q"]
    assert main(args) == 0
    assert json.loads(saved.read_text())["plan"]["master_seed"] == 11
    assert main(args + ["--seed", "5"]) == 0
    eff = json.loads(saved.read_text())
    assert eff["plan"]["master_seed"] == eff["train"]["seed"] == eff["signal"]["seed"] == 5
    monkeypatch.setenv("UABNN_SEED", "not-a-number")
    assert main(args) == 2


def test_run_config_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"seed": 9, "model": {"hidden_layer_sizes": [5, 4]}, "plan": SMALL_PLAN,
                               "signal": {"duration_s": 1.5}, "train": {"optimizer": "sgd"}})
    path = cfg.save(tmp_path / "c.json")
    again = RunConfig.load(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.plan.signal.duration_s == 1.5


@pytest.mark.parametrize("doc", ['{"plan": {"nope": 1}}', '{"signal": {"sample_rate_hz": 100}}', "[1, 2]",
                                 "{broken"])
def test_bad_config_exits_2(tmp_path, doc):
    p = tmp_path / "bad.json"
    p.write_text(doc)
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "x.csv")]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "uabnn.cli", "gen-data", "--faults", "NoFault,Eccentricity",
                           "--windows-per-class", "18", "--out", str(tmp_path / "e.csv"), "-q"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["rows"] == 36
