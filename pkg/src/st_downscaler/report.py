"""Per-sample metric tables, residual maps and figures from an eval directory."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import dataset as ds
from .metrics import MetricReport, frame_difference_map, residual_map, save_gray_png
from .plotting import plot_comparison, plot_metric_bars
from .trainer import baseline_st_interp, write_summary


def load_prediction(eval_dir, sample_id: str, pix: tuple[int, int]) -> np.ndarray:
    path = Path(eval_dir) / "pred" / f"{sample_id}.bin"
    if not path.exists():
        raise FileNotFoundError(f"missing prediction {path}")
    return np.fromfile(path, dtype="<f4").reshape(3, 3, *pix)


def write_report(eval_dir, out_dir, max_figures: int = 3, residual_gain: float = 50.0,
                 difference_gain: float = 20.0) -> int:
    """Write ``report.csv`` (model), ``report_baseline.csv``, ``summary.csv``,
    ``maps/*.png`` and ``figures/*.png``; return the model row count."""
    eval_dir, out = Path(eval_dir), Path(out_dir)
    info_path = eval_dir / "eval.json"
    if not info_path.exists():
        raise FileNotFoundError(f"{eval_dir} has no eval.json; run eval first")
    info = json.loads(info_path.read_text())
    data = info["data"]
    manifest = ds.load_manifest(data)
    ours, base = MetricReport(), MetricReport()
    maps = out / "maps"
    for k, sid in enumerate(info["ids"]):
        s = ds.load_sample(data, sid, manifest)
        pred = load_prediction(eval_dir, sid, manifest.pix)
        bl = baseline_st_interp(s)
        ours.add_sample(sid, s.hr, pred, s.mask)
        base.add_sample(sid, s.hr, bl, s.mask)
        for t in range(3):
            for c, name in enumerate(ds.CHANNELS):
                save_gray_png(residual_map(s.hr[t, c], pred[t, c], residual_gain),
                              maps / f"{sid}_f{t}_{name}_residual.png")
        for t in (1, 2):
            for c, name in enumerate(ds.CHANNELS):
                save_gray_png(frame_difference_map(pred[t - 1, c], pred[t, c], difference_gain),
                              maps / f"{sid}_f{t - 1}{t}_{name}_difference.png")
        if k < max_figures:
            plot_comparison(s.lr, bl, pred, s.hr, s.mask, out / "figures" / f"{sid}_comparison.png",
                            gain=residual_gain, title=f"sample {sid}")
    ours.write_csv(out / "report.csv")
    base.write_csv(out / "report_baseline.csv")
    reports = {"ours": ours, "baseline": base}
    write_summary(out / "summary.csv", reports)
    rows = [{"method": m, "frames": f, **agg} for m, rep in reports.items() for f, agg in rep.summary().items()]
    plot_metric_bars(rows, out / "figures" / "metrics.png")
    return len(ours.rows)
