"""Training loop, evaluation, interpolation baseline and ablation harness."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import dataset as ds
from .losses import LossWeights, total_loss
from .metrics import MetricReport, rmse
from .model import DNNCS, ModelConfig, build_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("use_st_attn", "use_fsr", "use_pos", "attn_axes", "use_mae", "use_lp", "use_diff")


class TrainingError(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_halve_at: int = 600
    total_iters: int = 2000
    batch: int = 8
    seed: int = 0
    checkpoint_every: int = 500
    val_every: int = 100
    val_samples: int = 32
    patch: int | None = None
    augment: bool = True
    a_mae: float = 4.0
    a_lp: float = 1.0
    a_diff: float = 100.0
    eps: float = 1e-8
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    use_st_attn: bool = True
    use_fsr: bool = True
    use_pos: bool = True
    attn_axes: tuple[str, ...] = ("h", "v", "d")
    use_mae: bool = True
    use_lp: bool = True
    use_diff: bool = True

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.attn_axes = tuple(self.attn_axes)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr_halve_at > self.total_iters and self.total_iters > 0:
            raise ValueError("lr_halve_at must not exceed total_iters")

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        return cls(**{"lr_halve_at": 30_000, "total_iters": 100_000, "batch": 24, **kw})

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.a_mae if self.use_mae else 0.0, self.a_lp if self.use_lp else 0.0,
                           self.a_diff if self.use_diff else 0.0, self.eps)

    def apply_to(self, model_cfg: ModelConfig) -> ModelConfig:
        return replace(model_cfg, use_st_attn=self.use_st_attn, use_fsr=self.use_fsr,
                       use_pos=self.use_pos, attn_axes=self.attn_axes)

    def lr_at(self, it: int) -> float:
        return self.lr * (0.5 if it >= self.lr_halve_at else 1.0)


def config_from_dict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def baseline_st_interp(sample) -> np.ndarray:
    """First frame, temporal midpoint, second frame."""
    lr = sample.lr if hasattr(sample, "lr") else np.asarray(sample)
    out = np.stack([lr[0], 0.5 * (lr[0] + lr[1]), lr[1]])
    if hasattr(sample, "mask"):
        out = out * sample.mask
    return out.astype(np.float32)


def predict(model: DNNCS, lr: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Model output for a batch ``[B, 2, C, h, w]`` with land zeroed."""
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(lr, dtype=np.float32))
        y = model(x).numpy()
    return y * np.asarray(mask)[:, None, None]


def _batch(samples: list, ids: Sequence[int], cfg: TrainConfig, rng: np.random.Generator,
           enabled: Sequence[str] = ds.AUGMENTATIONS):
    lrs, hrs, masks = [], [], []
    for i in ids:
        s = samples[i]
        if cfg.patch and cfg.patch < s.mask.shape[0]:
            s = ds.crop_patch(s, cfg.patch, rng)
        if cfg.augment:
            s = ds.augment(s, rng, enabled)
        lrs.append(s.lr)
        hrs.append(s.hr)
        masks.append(s.mask)
    return (torch.from_numpy(np.stack(lrs)), torch.from_numpy(np.stack(hrs)),
            torch.from_numpy(np.stack(masks)))


@dataclass
class TrainResult:
    model: DNNCS
    out_dir: Path
    best_val_rmse: float
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def validate(model: DNNCS, samples: list) -> dict[str, float]:
    """Masked RMSE of the model and the baseline, overall and per frame type."""
    out = {"val_rmse": [], "val_rmse_intra": [], "val_rmse_inter": [], "baseline_rmse": []}
    for s in samples:
        pred = predict(model, s.lr[None], s.mask[None])[0]
        out["val_rmse"].append(rmse(s.hr, pred, s.mask))
        out["val_rmse_intra"].append(rmse(s.hr[[0, 2]], pred[[0, 2]], s.mask))
        out["val_rmse_inter"].append(rmse(s.hr[1], pred[1], s.mask))
        out["baseline_rmse"].append(rmse(s.hr, baseline_st_interp(s), s.mask))
    return {k: float(np.mean(v)) for k, v in out.items()}


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, data_dir, out_dir) -> TrainResult:
    """Optimise DNNCS on the training split of ``data_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.load_manifest(data_dir)
    train_ids = manifest.splits["train"]
    if not train_ids:
        raise ValueError("training split is empty")
    if train_cfg.patch is None:
        train_cfg = replace(train_cfg, patch=manifest.patch)
    model_cfg = train_cfg.apply_to(model_cfg)
    samples = [ds.load_sample(data_dir, i, manifest) for i in train_ids]
    val_ids = manifest.splits["val"][: train_cfg.val_samples]
    val = [ds.load_sample(data_dir, i, manifest) for i in val_ids]

    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    model = build_model(model_cfg, train_cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas, eps=train_cfg.adam_eps)
    weights = train_cfg.loss_weights()
    extra = {"norm_ranges": [list(r) for r in manifest.norm_ranges], "pix": list(manifest.pix),
             "train_config": _jsonable(asdict(train_cfg))}

    history, val_rows = [], []
    best = np.inf

    def checkpoint(it: int) -> None:
        nonlocal best
        model.eval()
        row = {"iter": it, **(validate(model, val) if val else {"val_rmse": float("nan")})}
        model.train()
        val_rows.append(row)
        _write_csv(out / "val_log.csv", val_rows)
        if not val or row["val_rmse"] < best:
            best = row["val_rmse"] if val else best
            save_checkpoint(out / "ckpt_best.bin", model, train_cfg.seed, it, extra)
        log.info("iter %d val %s", it, row)

    if train_cfg.total_iters == 0:
        checkpoint(0)
    t0 = time.perf_counter()
    model.train()
    for it in range(train_cfg.total_iters):
        lr = train_cfg.lr_at(it)
        for group in opt.param_groups:
            group["lr"] = lr
        ids = rng.choice(len(samples), size=train_cfg.batch, replace=len(samples) < train_cfg.batch)
        x, y, mask = _batch(samples, ids, train_cfg, rng, manifest.augment)
        pred = model(x) * mask[:, None, None]
        loss, terms = total_loss(y, pred, mask, weights)
        if not torch.isfinite(loss):
            bad = [train_ids[i] for i in ids]
            (out / "nonfinite_batch.json").write_text(json.dumps({"iter": it, "ids": bad}))
            raise TrainingError(f"non-finite loss at iteration {it}; batch ids {bad}")
        opt.zero_grad()
        loss.backward()
        if train_cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
        opt.step()
        history.append({"iter": it, "lr": lr, "total": float(loss.detach()), **terms})
        done = it + 1
        if done % train_cfg.val_every == 0 or done == train_cfg.total_iters:
            checkpoint(done)
        if done % train_cfg.checkpoint_every == 0:
            save_checkpoint(out / "ckpt_last.bin", model, train_cfg.seed, done, extra)
    _write_csv(out / "train_log.csv", history)
    save_checkpoint(out / "ckpt_last.bin", model, train_cfg.seed, train_cfg.total_iters, extra)
    elapsed = time.perf_counter() - t0
    log.info("trained %d iterations in %.1f s", train_cfg.total_iters, elapsed)
    return TrainResult(model, out, float(best), history, elapsed)


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# --------------------------------------------------------------------------
# evaluation

SUMMARY_COLUMNS = ("method", "frames", "rmse", "mae", "ssim", "gmsd", "lpips")


def evaluate(model: DNNCS, data_dir, split: str = "test", out_dir=None,
             ids: Sequence[str] | None = None) -> dict[str, MetricReport]:
    """Metric reports for the model ("ours") and the interpolation baseline.

    With ``out_dir`` the model predictions are stored under ``pred/`` and a
    method-by-frame-type summary is written to ``metrics_summary.csv``.
    """
    manifest = ds.load_manifest(data_dir)
    ids = list(manifest.splits[split] if ids is None else ids)
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    reports = {"ours": MetricReport(), "baseline": MetricReport()}
    model.eval()
    if out_dir is not None:
        (Path(out_dir) / "pred").mkdir(parents=True, exist_ok=True)
    for sid in ids:
        s = ds.load_sample(data_dir, sid, manifest)
        pred = predict(model, s.lr[None], s.mask[None])[0]
        reports["ours"].add_sample(sid, s.hr, pred, s.mask)
        reports["baseline"].add_sample(sid, s.hr, baseline_st_interp(s), s.mask)
        if out_dir is not None:
            pred.astype("<f4").tofile(Path(out_dir) / "pred" / f"{sid}.bin")
    if out_dir is not None:
        out = Path(out_dir)
        write_summary(out / "metrics_summary.csv", reports)
        (out / "eval.json").write_text(json.dumps({"data": str(Path(data_dir).resolve()), "split": split,
                                                   "ids": ids}, indent=1))
    return reports


def write_summary(path, reports: dict[str, MetricReport]) -> None:
    rows = []
    for method, rep in reports.items():
        for frames, agg in rep.summary().items():
            rows.append({"method": method, "frames": frames, **agg, "lpips": ""})
    _write_csv(Path(path), rows)


def evaluate_checkpoint(ckpt, data_dir, split: str = "test", out_dir=None):
    model, _ = load_checkpoint(ckpt)
    return evaluate(model, data_dir, split, out_dir)


# --------------------------------------------------------------------------
# ablation

METRIC_ROWS = ("rmse", "mae", "ssim", "gmsd", "rmse_intra", "rmse_inter", "mae_intra", "mae_inter",
               "final_loss_mae", "final_loss_lp", "final_loss_diff", "train_seconds")


def parse_matrix(matrix) -> list[tuple[str, dict]]:
    """``{"cells": [{"name": ..., "flags": {...}}, ...]}`` or a bare list."""
    cells = matrix["cells"] if isinstance(matrix, dict) else matrix
    parsed = []
    for i, cell in enumerate(cells):
        flags = dict(cell.get("flags", {}))
        unknown = set(flags) - set(ABLATION_FLAGS)
        if unknown:
            raise KeyError(f"cell {i}: unknown ablation flags {sorted(unknown)}")
        parsed.append((cell.get("name", f"cell{i}"), flags))
    names = [n for n, _ in parsed]
    if len(set(names)) != len(names):
        raise ValueError("ablation cell names must be unique")
    return parsed


def run_ablation(matrix, model_cfg: ModelConfig, train_cfg: TrainConfig, data_dir, out_dir,
                 split: str = "test") -> dict[str, dict[str, float]]:
    """Train each flag combination identically and tabulate test metrics.

    Writes ``ablation_report.csv`` (metric rows x cell columns) and
    ``ablation_frames.csv`` (per-cell intra/inter breakdown).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, dict[str, float]] = {}
    frame_rows = []
    for name, flags in parse_matrix(matrix):
        cfg = replace(train_cfg, **flags)
        res = train(model_cfg, cfg, data_dir, out / name)
        reports = evaluate(res.model, data_dir, split)
        ours = reports["ours"]
        s = ours.summary()
        last = res.history[-1] if res.history else {"mae": np.nan, "lp": np.nan, "diff": np.nan}
        results[name] = {
            "rmse": s["all"]["rmse"], "mae": s["all"]["mae"], "ssim": s["all"]["ssim"], "gmsd": s["all"]["gmsd"],
            "rmse_intra": s["intra"]["rmse"], "rmse_inter": s["inter"]["rmse"],
            "mae_intra": s["intra"]["mae"], "mae_inter": s["inter"]["mae"],
            "final_loss_mae": last["mae"], "final_loss_lp": last["lp"], "final_loss_diff": last["diff"],
            "train_seconds": res.seconds,
        }
        for tag in ("intra", "inter"):
            frame_rows.append({"cell": name, "frames": tag, **s[tag]})
    with open(out / "ablation_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", *results])
        for metric in METRIC_ROWS:
            w.writerow([metric, *(results[c][metric] for c in results)])
    _write_csv(out / "ablation_frames.csv", frame_rows)
    from .plotting import plot_ablation

    plot_ablation(results, out / "ablation.png")
    return results
