import json
import shutil

import pytest

from bitpim.cli import main
from bitpim.costmodel import complexity_index
from bitpim.models import sample_config_path


@pytest.fixture
def sample_dir(tmp_path):
    dst = tmp_path / "sample"
    shutil.copytree(sample_config_path().parent, dst)
    cfg = dst / "config.toml"
    cfg.write_text(cfg.read_text().replace("traces = 5", "traces = 2"))
    return dst


def _load(path):
    return json.loads(path.read_text())


def test_run_verify_sample(tmp_path, capsys):
    assert main(["run", "--verify", "--out-dir", str(tmp_path)]) == 0
    scores = _load(tmp_path / "scores.json")
    assert len(scores) == 10
    cost = _load(tmp_path / "cost.json")
    assert cost[-1]["phase"] == "total" and cost[-1]["cycles"] > 0
    assert "verified" in capsys.readouterr().out


def test_run_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--seed", "7", "--out-dir", str(a)]) == 0
    assert main(["run", "--seed", "7", "--out-dir", str(b)]) == 0
    for name in ("scores.json", "cost.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_csv(tmp_path):
    assert main(["run", "--format", "csv", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "scores.csv").read_text().startswith("class,score\n")


def test_malformed_config_exits_2(sample_dir, capsys):
    cfg = sample_dir / "config.toml"
    cfg.write_text(cfg.read_text().replace("[run]", "[run]\nspeed = 3"))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "run.speed" in capsys.readouterr().err


def test_empty_sweep_range_exits_2(tmp_path, capsys):
    assert main(["sweep", "bitwidth", "--values", "--out-dir", str(tmp_path)]) == 2
    assert "empty range" in capsys.readouterr().err


def test_bad_bitwidth_point_exits_2(tmp_path):
    assert main(["sweep", "bitwidth", "--values", "4-4", "--out-dir", str(tmp_path)]) == 2


def test_bitwidth_sweep(tmp_path):
    pts = ["1:1", "1:4", "2:2", "4:4"]
    assert main(["sweep", "bitwidth", "--values", *pts, "--out-dir", str(tmp_path)]) == 0
    rows = _load(tmp_path / "sweep_bitwidth.json")
    assert [(r["w_bits"], r["i_bits"]) for r in rows] == [(1, 1), (1, 4), (2, 2), (4, 4)]
    for r in rows:
        assert (r["complexity_inference"], r["complexity_training"]) == complexity_index(r["w_bits"], r["i_bits"], 8)
    assert rows[0]["storage_mb"] < rows[2]["storage_mb"] < rows[3]["storage_mb"]
    assert rows[0]["cycles"] < rows[3]["cycles"]


def test_checkpoint_sweep_one_row_per_k(sample_dir):
    out = sample_dir / "out"
    assert main(["sweep", "checkpoint_K", "--values", "5", "50", "--config", str(sample_dir / "config.toml"),
                 "--out-dir", str(out)]) == 0
    rows = _load(out / "sweep_checkpoint_K.json")
    assert [r["checkpoint_k"] for r in rows] == [5, 50]
    assert all(r["traces"] == 2 and r["identical"] == r["complete"] for r in rows)
    assert rows[0]["checkpoints"] > rows[1]["checkpoints"]


def test_sigma_sweep(tmp_path):
    assert main(["sweep", "sigma", "--values", "0", "0.15", "--out-dir", str(tmp_path)]) == 0
    rows = _load(tmp_path / "sweep_sigma.json")
    assert rows[0]["misclassification_rate"] == 0.0
    assert rows[1]["misclassification_rate"] > 0.0


def test_mc_sense_zero_sigma(tmp_path, capsys):
    assert main(["mc-sense", "--trials", "5000", "--sigma-ra", "0", "--sigma-tmr", "0",
                 "--out-dir", str(tmp_path)]) == 0
    rows = _load(tmp_path / "mc_sense.json")
    assert all(r["misclass_rate"] == 0.0 for r in rows)
    assert "worst-mode misclassification 0" in capsys.readouterr().out


def test_intermittent_always_on(sample_dir):
    cfg = sample_dir / "config.toml"
    cfg.write_text(cfg.read_text().replace('trace = "exponential"', 'trace = "always_on"'))
    out = sample_dir / "out"
    assert main(["intermittent", "--config", str(cfg), "--traces", "1", "--out-dir", str(out)]) == 0
    row = _load(out / "intermittent.json")[0]
    assert row["complete"] and row["identical"] and row["restores"] == 0
    assert (out / "journal_000.jsonl").is_file()


def test_intermittent_periodic_one_ff(sample_dir, capsys):
    cfg = sample_dir / "config.toml"
    cfg.write_text(cfg.read_text().replace('trace = "exponential"', 'trace = "periodic"\non = 50000\noff = 10'))
    out = sample_dir / "out"
    assert main(["intermittent", "--config", str(cfg), "--traces", "1", "--nv", "one_ff", "--checkpoint-k", "3",
                 "--out-dir", str(out)]) == 0
    assert "one_ff:" in capsys.readouterr().out


def test_report(tmp_path, capsys):
    assert main(["report", "--storage-bits", "2:2", "--out-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "capacity 536870912 bits" in text
    assert "ratio" in text


def test_init_sample(tmp_path):
    assert main(["init-sample", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "config.toml").read_text() == sample_config_path().read_text()


def test_bad_checkpoint_k(tmp_path):
    assert main(["intermittent", "--checkpoint-k", "0", "--out-dir", str(tmp_path)]) == 2
