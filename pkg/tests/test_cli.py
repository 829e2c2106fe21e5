import csv
import json
import time

import numpy as np
import pytest

from s4mc.cli import cmd_generate, cmd_train, main
from s4mc.config import parse_config
from s4mc.metrics import CSV_COLUMNS, read_metrics_csv
from s4mc.tensor_io import load_float_tensor, load_label_mask, save_float_tensor, save_label_mask

SMOKE = """
[scene]
height = 8
width = 8
classes = 2
feature_dim = 3

[train]
total_iters = 50

[experiment]
n_scenes = 8
n_val = 2
labeled_fraction = 0.25
log_every = 10
seeds = 0
"""


@pytest.fixture()
def smoke(tmp_path):
    path = tmp_path / "smoke.ini"
    path.write_text(SMOKE)
    return path


def test_generate_manifest(tmp_path):
    cfg, _ = parse_config("[experiment]\nn_scenes = 16\nn_val = 2\nlabeled_fraction = 1/4\n[scene]\nheight = 6\nwidth = 6\n")
    m1 = cmd_generate(cfg, tmp_path / "a", seed=1)
    m2 = cmd_generate(cfg, tmp_path / "b", seed=1)
    manifest = json.loads(m1.read_text())
    assert len(manifest["splits"]["labeled"]) == 4
    assert len(manifest["splits"]["unlabeled"]) == 12
    assert m1.read_text() == m2.read_text()
    first = manifest["splits"]["labeled"][0]
    feats = load_float_tensor(tmp_path / "a" / first["features"])
    assert feats.shape == (6, 6, 8)
    assert load_label_mask(tmp_path / "a" / first["mask"]).shape == (6, 6)


def test_generate_rejects_tiny_labeled_fraction(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nn_scenes = 4\nlabeled_fraction = 0.1\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2
    assert "error" in capsys.readouterr().err


def test_smoke_train_is_fast_and_parses(smoke, tmp_path):
    start = time.perf_counter()
    assert main(["train", "--config", str(smoke), "--out", str(tmp_path / "run")]) == 0
    assert time.perf_counter() - start < 5.0
    rows = read_metrics_csv(tmp_path / "run" / "metrics.csv")
    assert [r.iter for r in rows] == [0, 10, 20, 30, 40, 49]
    header = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    for r in rows:
        for name in CSV_COLUMNS:
            if name not in ("pseudo_acc",):
                assert not np.isnan(getattr(r, name)), name
    assert load_float_tensor(tmp_path / "run" / "params.s4t").shape == (3 * 9 + 1, 2)


def test_train_is_byte_reproducible(smoke, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(smoke), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "params.s4t").read_bytes() == (tmp_path / "b" / "params.s4t").read_bytes()


def test_train_from_generated_dataset_matches_in_memory(smoke, tmp_path):
    cfg, _ = parse_config(SMOKE)
    cmd_generate(cfg, tmp_path / "data", seed=0)
    a, _ = cmd_train(cfg, 0, tmp_path / "disk", tmp_path / "data")
    b, _ = cmd_train(cfg, 0, tmp_path / "mem")
    assert a.read_bytes() == b.read_bytes()


def test_no_refine_and_mode_flags(smoke, tmp_path):
    assert main(["train", "--config", str(smoke), "--no-refine", "--out", str(tmp_path / "base")]) == 0
    rows = read_metrics_csv(tmp_path / "base" / "metrics.csv")
    assert all(r.pass_raw == r.pass_refined and r.added == r.excluded == 0 for r in rows)
    assert main(["train", "--config", str(smoke), "--mode", "weak_strong", "--alpha0", "0.2", "--out", str(tmp_path / "ws")]) == 0
    ws = read_metrics_csv(tmp_path / "ws" / "metrics.csv")
    assert ws[0].alpha_t == pytest.approx(0.2)


def test_refine_command(tmp_path):
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(3), size=(5, 6)).astype(np.float32)
    save_float_tensor(tmp_path / "p.s4t", probs)
    assert main(["refine", "--input", str(tmp_path / "p.s4t"), "--out", str(tmp_path / "r.s4t")]) == 0
    refined = load_float_tensor(tmp_path / "r.s4t")
    assert refined.shape == probs.shape
    assert np.all(refined >= probs - 1e-6)


def test_refine_empirical_needs_rate(tmp_path):
    save_float_tensor(tmp_path / "p.s4t", np.full((2, 2, 2), 0.5, dtype=np.float32))
    cfg = tmp_path / "e.ini"
    cfg.write_text("[refine]\njoint = empirical_max\n")
    assert main(["refine", "--config", str(cfg), "--input", str(tmp_path / "p.s4t"), "--out", str(tmp_path / "r.s4t")]) == 2
    cfg.write_text("[refine]\njoint = empirical_max\ncolabel_rate = 0.8\n")
    assert main(["refine", "--config", str(cfg), "--input", str(tmp_path / "p.s4t"), "--out", str(tmp_path / "r.s4t")]) == 0


def test_eval_on_masks_and_params(smoke, tmp_path):
    gt = np.zeros((6, 6), int)
    gt[:, 3:] = 1
    save_label_mask(tmp_path / "gt.s4t", gt)
    save_label_mask(tmp_path / "pred.s4t", gt)
    assert main(["eval", "--pred", str(tmp_path / "pred.s4t"), "--gt", str(tmp_path / "gt.s4t"), "--out", str(tmp_path / "e.json")]) == 0
    assert json.loads((tmp_path / "e.json").read_text()) == {"boundary_iou": 1.0, "miou": 1.0}

    cfg, _ = parse_config(SMOKE)
    cmd_generate(cfg, tmp_path / "data", seed=0)
    cmd_train(cfg, 0, tmp_path / "run", tmp_path / "data")
    assert main(["eval", "--config", str(smoke), "--params", str(tmp_path / "run" / "params.s4t"), "--data", str(tmp_path / "data"), "--out", str(tmp_path / "v.json")]) == 0
    score = json.loads((tmp_path / "v.json").read_text())
    last = read_metrics_csv(tmp_path / "run" / "metrics.csv")[-1]
    assert score["miou"] == pytest.approx(last.miou_val)


def _sweep_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_sweep_criterion_axis(smoke, tmp_path):
    text = SMOKE.replace("seeds = 0", "seeds = 0, 1") + "\n[sweep]\naxis = criterion\nvalues = none, max_prob:1, random\n"
    (tmp_path / "s.ini").write_text(text)
    assert main(["sweep", "--config", str(tmp_path / "s.ini"), "--total-iters", "20", "--out", str(tmp_path / "sw")]) == 0
    rows = _sweep_rows(tmp_path / "sw" / "sweep.csv")
    assert [r["value"] for r in rows] == ["none", "max_prob:1", "random"]
    assert all(r["runs"] == "2" and r["failed"] == "0" for r in rows)
    assert (tmp_path / "sw" / "criterion=max_prob-1" / "seed1" / "metrics.csv").exists()


def test_sweep_records_failures_and_continues(smoke, tmp_path, monkeypatch):
    import s4mc.cli as cli

    real = cli.cmd_train

    def flaky(cfg, seed, out_dir, data_dir=None):
        if cfg.train.alpha0 == 0.2:
            raise cli.CliError("training diverged")
        return real(cfg, seed, out_dir, data_dir)

    monkeypatch.setattr(cli, "cmd_train", flaky)
    args = ["sweep", "--config", str(smoke), "--axis", "alpha0", "--values", "0.2,0.4", "--out", str(tmp_path / "sw")]
    assert main(args) == 0
    rows = _sweep_rows(tmp_path / "sw" / "sweep.csv")
    assert [r["failed"] for r in rows] == ["1", "0"]
    assert rows[0]["miou_mean"] == "nan" and rows[1]["miou_mean"] != "nan"
    failures = _sweep_rows(tmp_path / "sw" / "failures.csv")
    assert len(failures) == 1 and "diverged" in failures[0]["error"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_failure_writes_partial_csv(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(SMOKE.replace("feature_dim = 3", "feature_dim = 3\nnoise_sigma = inf"))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "run")]) == 2
    assert (tmp_path / "run" / "metrics.csv").exists()


def test_sweep_parallel_matches_sequential(smoke, tmp_path, monkeypatch):
    monkeypatch.setenv("S4MC_THREADS", "2")
    args = ["sweep", "--config", str(smoke), "--axis", "k", "--values", "1,2", "--total-iters", "10"]
    assert main(args + ["--out", str(tmp_path / "seq")]) == 0
    assert main(args + ["--parallel", "--out", str(tmp_path / "par")]) == 0
    assert (tmp_path / "seq" / "sweep.csv").read_bytes() == (tmp_path / "par" / "sweep.csv").read_bytes()


def test_sweep_empty_axis_is_an_error(smoke, tmp_path):
    assert main(["sweep", "--config", str(smoke), "--axis", "alpha0", "--out", str(tmp_path / "x")]) == 2


def test_worker_count_respects_cap(monkeypatch):
    from s4mc.cli import worker_count

    monkeypatch.setenv("S4MC_THREADS", "3")
    assert worker_count(True, 10) == 3
    assert worker_count(True, 2) == 2
    assert worker_count(False, 10) == 1
