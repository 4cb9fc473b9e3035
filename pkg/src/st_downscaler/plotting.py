"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}

CHANNEL_NAMES = ("U", "V", r"$\xi$")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def _rgb(x: np.ndarray) -> np.ndarray:
    return np.clip(np.moveaxis(np.asarray(x), 0, -1), 0.0, 1.0)


def plot_comparison(lr, baseline, pred, truth, mask, path, gain: float = 50.0, title: str = "") -> Path:
    """Rows are the three output frames; columns show inputs, predictions,
    ground truth and amplified residuals."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 6, figsize=(12, 6.2))
        lr_cols = [lr[0], None, lr[1]]
        for t in range(3):
            res_b = np.clip(np.abs(truth[t] - baseline[t]).mean(0) * gain, 0, 1) * mask
            res_o = np.clip(np.abs(truth[t] - pred[t]).mean(0) * gain, 0, 1) * mask
            panels = [
                (_rgb(lr_cols[t]) if lr_cols[t] is not None else np.zeros_like(_rgb(truth[t])), "LR input"),
                (_rgb(baseline[t]), "ST-interp"),
                (_rgb(pred[t]), "DNNCS"),
                (_rgb(truth[t]), "HR truth"),
                (res_b, f"|res| x{gain:g} ST-interp"),
                (res_o, f"|res| x{gain:g} DNNCS"),
            ]
            for ax, (img, name) in zip(axes[t], panels):
                ax.imshow(img, origin="lower", cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1)
                ax.set_xticks([])
                ax.set_yticks([])
                if t == 0:
                    ax.set_title(name)
            axes[t, 0].set_ylabel(("intra", "inter", "intra")[t] + f" t{t}")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_metric_bars(summary_rows: list[dict], path) -> Path:
    """Grouped bars of RMSE/MAE by method and frame type."""
    methods = sorted({r["method"] for r in summary_rows})
    frames = ["all", "intra", "inter"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        width = 0.8 / max(len(methods), 1)
        for ax, metric in zip(axes, ("rmse", "mae")):
            for k, m in enumerate(methods):
                vals = [next(float(r[metric]) for r in summary_rows if r["method"] == m and r["frames"] == f)
                        for f in frames]
                ax.bar(np.arange(3) + k * width, vals, width, label=m)
            ax.set_xticks(np.arange(3) + width * (len(methods) - 1) / 2)
            ax.set_xticklabels(frames)
            ax.set_ylabel(metric.upper())
        axes[0].legend(frameon=False)
        return _save(fig, path)


def plot_training_curves(history: list[dict], path, val_rows: list[dict] | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        it = [h["iter"] for h in history]
        for key in ("total", "mae", "lp", "diff"):
            axes[0].semilogy(it, [max(h[key], 1e-12) for h in history], label=key, lw=0.8)
        axes[0].set_xlabel("iteration")
        axes[0].legend(frameon=False)
        if val_rows:
            vi = [r["iter"] for r in val_rows]
            axes[1].plot(vi, [r["val_rmse"] for r in val_rows], label="DNNCS")
            if "baseline_rmse" in val_rows[0]:
                axes[1].plot(vi, [r["baseline_rmse"] for r in val_rows], "--", label="ST-interp")
            axes[1].set_xlabel("iteration")
            axes[1].set_ylabel("val RMSE")
            axes[1].legend(frameon=False)
        return _save(fig, path)


def plot_ablation(results: dict[str, dict[str, float]], path) -> Path:
    """Intra- vs inter-frame RMSE per ablation cell."""
    names = list(results)
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 3))
        ax.bar(x - 0.2, [results[n]["rmse_intra"] for n in names], 0.4, label="intra frames")
        ax.bar(x + 0.2, [results[n]["rmse_inter"] for n in names], 0.4, label="inter frame")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("RMSE")
        ax.legend(frameon=False)
        return _save(fig, path)
