"""Masked image-quality metrics and residual maps.

All inputs are float arrays in [0, 1]; masks are True on water.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WIN, SSIM_SIGMA = 11, 1.5
GMSD_C = 170.0 / 255.0**2

PREWITT_X = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0
PREWITT_Y = PREWITT_X.T

FRAME_TAGS = ("intra", "inter", "intra")


def _masked(y, yp, mask):
    y, yp = np.asarray(y, dtype=np.float64), np.asarray(yp, dtype=np.float64)
    if y.shape != yp.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {yp.shape}")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), y.shape)
    if not m.any():
        raise ValueError("mask contains no water pixels")
    return (y - yp)[m]


def rmse(y, yp, mask) -> float:
    e = _masked(y, yp, mask)
    return float(np.sqrt(np.mean(e * e)))


def mae(y, yp, mask) -> float:
    return float(np.mean(np.abs(_masked(y, yp, mask))))


def mean_error(y, yp, mask) -> float:
    return float(np.mean(_masked(y, yp, mask)))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", win, kernel)


def _valid_windows(mask: np.ndarray, size: int) -> np.ndarray:
    return sliding_window_view(np.asarray(mask, dtype=bool), (size, size)).all(axis=(-2, -1))


def ssim(a, b, mask=None, data_range: float = 1.0) -> float:
    """Mean SSIM over Gaussian windows that lie entirely on water."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("ssim expects two single-channel images of equal shape")
    mask = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"image smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    valid = _valid_windows(mask, SSIM_WIN)
    if not valid.any():
        raise ValueError("no SSIM window lies entirely on water")
    w = gaussian_window()
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    saa = _filter_valid(a * a, w) - mu_a * mu_a
    sbb = _filter_valid(b * b, w) - mu_b * mu_b
    sab = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean((num / den)[valid]))


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    """Prewitt gradient magnitude on the valid (interior) region."""
    gx = _filter_valid(img, PREWITT_X)
    gy = _filter_valid(img, PREWITT_Y)
    return np.sqrt(gx * gx + gy * gy)


def gmsd(a, b, mask=None) -> float:
    """Standard deviation of the gradient-magnitude similarity map."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("gmsd expects two single-channel images of equal shape")
    mask = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    valid = _valid_windows(mask, 3)
    if not valid.any():
        raise ValueError("no 3x3 neighbourhood lies entirely on water")
    ma, mb = gradient_magnitude(a), gradient_magnitude(b)
    gms = (2 * ma * mb + GMSD_C) / (ma * ma + mb * mb + GMSD_C)
    return float(np.std(gms[valid]))


def frame_metrics(y, yp, mask) -> dict[str, float]:
    """All four metrics for one ``[C, h, w]`` frame, averaged over channels."""
    per = [channel_metrics(y[c], yp[c], mask) for c in range(y.shape[0])]
    return {k: float(np.mean([p[k] for p in per])) for k in per[0]}


def channel_metrics(y, yp, mask) -> dict[str, float]:
    return {"rmse": rmse(y, yp, mask), "mae": mae(y, yp, mask),
            "ssim": ssim(y, yp, mask), "gmsd": gmsd(y, yp, mask)}


@dataclass
class MetricReport:
    """Rows of (sample, frame, channel) metrics with aggregate views."""

    rows: list[dict] = field(default_factory=list)

    def add_sample(self, sample_id: str, y: np.ndarray, yp: np.ndarray, mask: np.ndarray,
                   channels=("U", "V", "xi")) -> None:
        """``y`` and ``yp`` are ``[3, C, h, w]`` (frames, channels)."""
        for t in range(y.shape[0]):
            for c in range(y.shape[1]):
                row = {"sample": sample_id, "frame": t, "channel": channels[c], "tag": FRAME_TAGS[t]}
                row.update(channel_metrics(y[t, c], yp[t, c], mask))
                self.rows.append(row)

    def aggregate(self, tag: str | None = None, channel: str | None = None) -> dict[str, float]:
        """Mean over per-sample values (each sample averaged over its rows first)."""
        rows = [r for r in self.rows if (tag is None or r["tag"] == tag)
                and (channel is None or r["channel"] == channel)]
        if not rows:
            raise ValueError("no rows match the requested breakdown")
        per_sample: dict[str, list[dict]] = {}
        for r in rows:
            per_sample.setdefault(r["sample"], []).append(r)
        out = {}
        for k in ("rmse", "mae", "ssim", "gmsd"):
            out[k] = float(np.mean([np.mean([r[k] for r in rs]) for rs in per_sample.values()]))
        return out

    def summary(self) -> dict[str, dict[str, float]]:
        return {"all": self.aggregate(), "intra": self.aggregate("intra"), "inter": self.aggregate("inter")}

    def write_csv(self, path) -> Path:
        import csv

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["sample", "frame", "channel", "rmse", "mae", "ssim", "gmsd", "lpips", "tag"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in cols})
        return path


def residual_map(y, yp, gain: float = 50.0) -> np.ndarray:
    """8-bit ``round(255 * clip(|y - yp| * gain))`` per channel."""
    r = np.clip(np.abs(np.asarray(y, dtype=np.float64) - np.asarray(yp, dtype=np.float64)) * gain, 0.0, 1.0)
    return np.floor(r * 255.0 + 0.5).astype(np.uint8)


def frame_difference_map(y_t1, y_t2, gain: float = 20.0) -> np.ndarray:
    """8-bit map of ``|Y(t2) - Y(t1)| * gain``."""
    return residual_map(y_t2, y_t1, gain)


def save_gray_png(img: np.ndarray, path) -> Path:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8)).save(path)
    return path
