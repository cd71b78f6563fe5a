import json
import subprocess
import sys

import numpy as np
import pytest

from ecgsiglip.cli import main
from ecgsiglip.data import DatasetManifest

TRAIN = {"epochs": 1, "batch_size": 8, "warmup_steps": 1, "embed_dim": 8,
         "encoder": {"base_width": 2, "input_decimation": 4}, "text": {"token_dim": 4}}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "gen.json"
    cfg.write_text(json.dumps({"n_patients": 24, "records_per_patient": 1, "label_prior": "strong"}))
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "corpus"), "--seed", "5"]) == 0
    return root


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_gen_data_prints_counts(tmp_path, capsys):
    cfg = _write(tmp_path / "g.json", {"n_patients": 5, "label_prior": "none"})
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    out = capsys.readouterr().out
    assert "5 records" in out and "     5  Normal range" in out
    m = DatasetManifest.read(tmp_path / "c/manifest.jsonl")
    assert all(e.labels == {3} for e in m.entries)


def test_gen_data_deterministic(corpus, tmp_path):
    cfg = _write(tmp_path / "g.json", {"n_patients": 24, "records_per_patient": 1, "label_prior": "strong"})
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "again"), "--seed", "5"]) == 0
    assert (tmp_path / "again/manifest.jsonl").read_bytes() == (corpus / "corpus/manifest.jsonl").read_bytes()


def test_usage_errors(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "x")]) == 1  # n_patients missing
    bad = _write(tmp_path / "b.json", {"n_patients": 3, "colour": "red"})
    assert main(["gen-data", "--config", bad, "--out", str(tmp_path / "x")]) == 1
    assert main(["train", "--manifest", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "r")]) == 1
    assert not (tmp_path / "r").exists()  # failed before any work
    assert main(["train", "--config", _write(tmp_path / "t.json", {"warmup_steps": 0}), "--out", "x"]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 1
    assert main(["frobnicate"]) == 1
    assert "error" in capsys.readouterr().err


def test_split_subcommand(corpus, tmp_path):
    out = tmp_path / "resplit.jsonl"
    args = ["split", "--manifest", str(corpus / "corpus/manifest.jsonl"), "--out", str(out), "--seed", "9"]
    assert main(args) == 0
    m = DatasetManifest.read(out)
    assert {e.split for e in m.entries} <= {"train", "val", "test"}
    assert m.resolve(m.entries[0]).is_file()


def test_train_eval_roc_export(corpus, tmp_path, capsys):
    man = str(corpus / "corpus/manifest.jsonl")
    cfg = _write(tmp_path / "t.json", TRAIN)
    assert main(["train", "--config", cfg, "--manifest", man, "--out", str(tmp_path / "run"), "--deterministic"]) == 0
    ckpt = str(tmp_path / "run/best.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--manifest", man, "--split", "test",
                 "--out", str(tmp_path / "ev")]) == 0
    ident = _write(tmp_path / "d.json", {"amplitude_scale": 1.0, "baseline_wander_mV": 0.0, "noise_std_mV": 0.0,
                                         "time_offset_ms": 0.0})
    assert main(["eval", "--checkpoint", ckpt, "--manifest", man, "--split", "test",
                 "--drift-config", ident, "--out", str(tmp_path / "ev_id")]) == 0
    assert (tmp_path / "ev/report.json").read_bytes() == (tmp_path / "ev_id/report.json").read_bytes()

    report = json.loads((tmp_path / "ev/report.json").read_text())
    scores = np.loadtxt(tmp_path / "ev/scores.csv", delimiter=",", skiprows=1, usecols=range(1, 27))
    rows = (tmp_path / "ev/roc/03_normal_range.csv").read_text().splitlines()
    assert len(rows) - 1 == len(np.unique(scores[:, 3])) + 1
    assert len(report["per_label"]) == 26

    assert main(["roc", "--checkpoint", ckpt, "--manifest", man, "--split", "val", "--out", str(tmp_path / "roc")]) == 0
    assert "Atrial fibrillation" in capsys.readouterr().out
    out = tmp_path / "emb.jsonl"
    assert main(["export-text-embeddings", "--checkpoint", ckpt, "--out", str(out)]) == 0
    first = json.loads(out.read_text().splitlines()[0])
    assert first["text"] == "This ECG shows Left ventricular hypertrophy." and len(first["vector"]) == 8


def test_train_baseline(corpus, tmp_path):
    cfg = _write(tmp_path / "b.json", {**TRAIN, "batch_size": 32})
    man = str(corpus / "corpus/manifest.jsonl")
    assert main(["train-baseline", "--config", cfg, "--manifest", man, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b/best.ckpt").is_file()


def test_nan_loss_exit_code(corpus, tmp_path, monkeypatch):
    import ecgsiglip.training as T

    monkeypatch.setattr(T, "load_signal", lambda p: np.full((12, 5000), 3e38, dtype=np.float32))
    monkeypatch.setattr(T.train_contrastive, "__defaults__", (None, T.load_signal, None))
    cfg = _write(tmp_path / "t.json", TRAIN)
    man = str(corpus / "corpus/manifest.jsonl")
    assert main(["train", "--config", cfg, "--manifest", man, "--out", str(tmp_path / "nan")]) == 2


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "ecgsiglip.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "export-text-embeddings" in out.stdout
