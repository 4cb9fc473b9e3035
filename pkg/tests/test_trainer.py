import csv

import numpy as np
import pytest
import torch

from st_downscaler import dataset as ds
from st_downscaler.model import ModelConfig, load_checkpoint, read_checkpoint_header
from st_downscaler.trainer import (
    METRIC_ROWS,
    TrainConfig,
    TrainingError,
    baseline_st_interp,
    config_from_dict,
    evaluate,
    parse_matrix,
    run_ablation,
    train,
)

TINY = ModelConfig.tiny()


def quick(**kw):
    base = dict(total_iters=4, lr_halve_at=2, batch=2, val_every=2, checkpoint_every=2, val_samples=2)
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule():
    cfg = TrainConfig(lr=1e-4, lr_halve_at=600, total_iters=2000)
    assert cfg.lr_at(599) == 1e-4 and cfg.lr_at(600) == 5e-5
    p = TrainConfig.paper()
    assert (p.lr, p.batch, p.lr_halve_at, p.total_iters) == (1e-4, 24, 30_000, 100_000)
    assert p.betas == (0.9, 0.999) and p.adam_eps == 1e-8


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(KeyError):
        config_from_dict(TrainConfig, {"learning_rate": 1e-3})


def test_loss_weight_flags():
    w = TrainConfig(use_lp=False).loss_weights()
    assert (w.a_mae, w.a_lp, w.a_diff) == (4.0, 0.0, 100.0)


def test_baseline_shape_and_values(small_data):
    s = ds.load_sample(small_data, ds.load_manifest(small_data).splits["test"][0])
    b = baseline_st_interp(s)
    assert b.shape == (3, 3, 32, 32)
    np.testing.assert_array_equal(b[0], s.lr[0])
    np.testing.assert_allclose(b[1], 0.5 * (s.lr[0] + s.lr[1]), atol=1e-7)


def test_zero_iterations_reproduces_baseline(small_data, tmp_path):
    res = train(TINY, quick(total_iters=0, lr_halve_at=0), small_data, tmp_path)
    reports = evaluate(res.model, small_data, "test")
    ours, base = reports["ours"].summary()["all"], reports["baseline"].summary()["all"]
    assert ours["rmse"] == pytest.approx(base["rmse"], abs=1e-7)
    assert (tmp_path / "ckpt_best.bin").exists()


def test_training_writes_logs_and_checkpoints(small_data, tmp_path):
    res = train(TINY, quick(), small_data, tmp_path)
    assert [h["lr"] for h in res.history] == [1e-4, 1e-4, 5e-5, 5e-5]
    rows = list(csv.DictReader(open(tmp_path / "train_log.csv")))
    assert len(rows) == 4 and {"total", "mae", "lp", "diff"} <= rows[0].keys()
    val = list(csv.DictReader(open(tmp_path / "val_log.csv")))
    assert [int(r["iter"]) for r in val] == [2, 4]
    header = read_checkpoint_header(tmp_path / "ckpt_last.bin")
    assert header["iteration"] == 4
    assert header["extra"]["pix"] == [32, 32] and len(header["extra"]["norm_ranges"]) == 3
    for r in rows:
        assert float(r["total"]) == pytest.approx(4 * float(r["mae"]) + float(r["lp"]) + 100 * float(r["diff"]), rel=1e-5)


def test_training_is_deterministic(small_data, tmp_path):
    a = train(TINY, quick(), small_data, tmp_path / "a")
    b = train(TINY, quick(), small_data, tmp_path / "b")
    assert [h["total"] for h in a.history] == [h["total"] for h in b.history]
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert (tmp_path / "a" / "ckpt_last.bin").read_bytes() == (tmp_path / "b" / "ckpt_last.bin").read_bytes()


def test_non_finite_loss_aborts(small_data, tmp_path, monkeypatch):
    import st_downscaler.trainer as tr

    def bad_loss(y, pred, mask, weights):
        return torch.tensor(float("nan"), requires_grad=True), {"mae": 0.0, "lp": 0.0, "diff": 0.0}

    monkeypatch.setattr(tr, "total_loss", bad_loss)
    with pytest.raises(TrainingError, match="batch ids"):
        train(TINY, quick(), small_data, tmp_path)
    assert (tmp_path / "nonfinite_batch.json").exists()


def test_evaluate_writes_predictions(small_data, tmp_path):
    res = train(TINY, quick(total_iters=2), small_data, tmp_path / "run")
    reports = evaluate(res.model, small_data, "test", tmp_path / "eval")
    ids = ds.load_manifest(small_data).splits["test"]
    assert len(reports["ours"].rows) == 9 * len(ids)
    assert sorted(p.stem for p in (tmp_path / "eval" / "pred").glob("*.bin")) == sorted(ids)
    rows = list(csv.DictReader(open(tmp_path / "eval" / "metrics_summary.csv")))
    assert {(r["method"], r["frames"]) for r in rows} == {(m, f) for m in ("ours", "baseline")
                                                         for f in ("all", "intra", "inter")}


def test_checkpoint_reload_matches_trained_model(small_data, tmp_path):
    res = train(TINY, quick(), small_data, tmp_path)
    m2, _ = load_checkpoint(tmp_path / "ckpt_last.bin")
    x = torch.rand(1, 2, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(res.model(x), m2(x))


def test_parse_matrix():
    cells = parse_matrix({"cells": [{"name": "full"}, {"name": "no_diff", "flags": {"use_diff": False}}]})
    assert cells == [("full", {}), ("no_diff", {"use_diff": False})]
    with pytest.raises(KeyError):
        parse_matrix([{"flags": {"use_magic": True}}])
    with pytest.raises(ValueError):
        parse_matrix([{"name": "a"}, {"name": "a"}])


def test_ablation_report_shape(small_data, tmp_path):
    matrix = [{"name": "full"}, {"name": "no_st", "flags": {"use_st_attn": False}},
              {"name": "h_only", "flags": {"attn_axes": ["h"]}},
              {"name": "no_loss", "flags": {"use_mae": False, "use_lp": False, "use_diff": False}}]
    res = run_ablation(matrix, TINY, quick(total_iters=2, lr_halve_at=1), small_data, tmp_path)
    rows = list(csv.reader(open(tmp_path / "ablation_report.csv")))
    assert rows[0] == ["metric", "full", "no_st", "h_only", "no_loss"]
    assert [r[0] for r in rows[1:]] == list(METRIC_ROWS)
    assert (tmp_path / "ablation.png").stat().st_size > 0
    assert (tmp_path / "ablation_frames.csv").exists()
    # no loss terms -> zero gradients -> stays at the baseline
    base = evaluate(load_checkpoint(tmp_path / "no_loss" / "ckpt_last.bin")[0], small_data)["baseline"]
    assert res["no_loss"]["rmse"] == pytest.approx(base.summary()["all"]["rmse"], abs=1e-7)
