"""Frame rendering, coarse/fine pairing, patching, augmentation and splits.

Rendered frames have channels ordered (U, V, xi), are normalised to [0, 1]
with ranges frozen from the training split, and are zero on land.  U and V
share one symmetric range, so a sign flip of a velocity component is the
map ``v -> 1 - v`` on water pixels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .csf import CSF, read_csf

log = logging.getLogger(__name__)

U, V, XI = 0, 1, 2
CHANNELS = ("U", "V", "xi")
AUGMENTATIONS = ("hflip", "vflip", "rotate", "reverse")


class DatasetError(ValueError):
    """Inconsistent inputs while building or sampling the dataset."""


@dataclass
class FrameImage:
    data: np.ndarray  # [3, H, W] float32
    mask: np.ndarray  # [H, W] bool
    t: float
    norm_ranges: list[tuple[float, float]]


@dataclass
class SamplePair:
    lr: np.ndarray  # [2, 3, H, W]
    hr: np.ndarray  # [3, 3, H, W]
    mask: np.ndarray  # [H, W] bool
    id: str = ""
    lr_times: tuple[float, ...] = ()
    hr_times: tuple[float, ...] = ()


@dataclass
class DatasetManifest:
    splits: dict[str, list[str]]
    ratios: tuple[float, float, float]
    norm_ranges: list[tuple[float, float]]
    pix: tuple[int, int]
    patch: int
    seed: int
    augment: list[str] = field(default_factory=lambda: list(AUGMENTATIONS))
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "splits": self.splits,
            "ratios": list(self.ratios),
            "norm_ranges": [list(r) for r in self.norm_ranges],
            "channels": list(CHANNELS),
            "pix": list(self.pix),
            "patch": self.patch,
            "seed": self.seed,
            "augment": self.augment,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls(
            splits={k: list(v) for k, v in d["splits"].items()},
            ratios=tuple(d["ratios"]),
            norm_ranges=[tuple(r) for r in d["norm_ranges"]],
            pix=tuple(d["pix"]),
            patch=d["patch"],
            seed=d["seed"],
            augment=list(d.get("augment", AUGMENTATIONS)),
            provenance=d.get("provenance", {}),
        )


# --------------------------------------------------------------------------
# rendering

def _check_ranges(norm_ranges) -> None:
    if len(norm_ranges) != 3:
        raise DatasetError("need one (lo, hi) range per channel")
    for name, (lo, hi) in zip(CHANNELS, norm_ranges):
        if not hi > lo:
            raise DatasetError(f"degenerate normalisation range for {name}: ({lo}, {hi})")


def _pixel_coords(n_cells: int, n_pix: int) -> np.ndarray:
    """Fractional cell index of each pixel centre."""
    return (np.arange(n_pix) + 0.5) * n_cells / n_pix - 0.5


def resample(field: np.ndarray, pix: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling of a cell-centred grid onto ``pix`` pixels."""
    ny, nx = field.shape
    yy, xx = np.meshgrid(_pixel_coords(ny, pix[0]), _pixel_coords(nx, pix[1]), indexing="ij")
    return ndimage.map_coordinates(np.asarray(field, dtype=np.float64), np.stack([yy, xx]), order=1, mode="nearest")


def render_fields(fields: np.ndarray, cell_mask: np.ndarray, pix: tuple[int, int],
                  norm_ranges, t: float = 0.0) -> FrameImage:
    """Render ``fields`` ordered (xi, U, V) on cells to a normalised image.

    Bilinear sampling only mixes water cells; a pixel is water when the
    cell containing its centre is water.
    """
    _check_ranges(norm_ranges)
    ny, nx = cell_mask.shape
    hp, wp = pix
    yy, xx = np.meshgrid(_pixel_coords(ny, hp), _pixel_coords(nx, wp), indexing="ij")
    coords = np.stack([yy, xx])
    m = cell_mask.astype(np.float64)
    weight = ndimage.map_coordinates(m, coords, order=1, mode="nearest")
    rows = np.minimum(((np.arange(hp) + 0.5) * ny / hp).astype(int), ny - 1)
    cols = np.minimum(((np.arange(wp) + 0.5) * nx / wp).astype(int), nx - 1)
    pmask = cell_mask[np.ix_(rows, cols)]

    out = np.zeros((3, hp, wp), dtype=np.float64)
    safe = np.where(pmask, weight, 1.0)
    for ch, src in ((U, 1), (V, 2), (XI, 0)):
        val = ndimage.map_coordinates(fields[src] * m, coords, order=1, mode="nearest") / safe
        lo, hi = norm_ranges[ch]
        out[ch] = np.clip((val - lo) / (hi - lo), 0.0, 1.0)
    out[:, ~pmask] = 0.0
    return FrameImage(out.astype(np.float32), pmask, t, [tuple(r) for r in norm_ranges])


def render(state, pix: tuple[int, int], norm_ranges) -> FrameImage:
    """Render a simulator state."""
    fields = np.stack([state.xi, state.u, state.v])
    return render_fields(fields, state.mask, pix, norm_ranges, state.t)


def denormalize(data: np.ndarray, norm_ranges) -> np.ndarray:
    """Map ``[..., 3, H, W]`` normalised channels back to physical units."""
    lo = np.array([r[0] for r in norm_ranges]).reshape(3, 1, 1)
    hi = np.array([r[1] for r in norm_ranges]).reshape(3, 1, 1)
    return np.asarray(data, dtype=np.float64) * (hi - lo) + lo


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def export_png(image: FrameImage | np.ndarray, out_prefix) -> list[Path]:
    """Write ``<prefix>_rgb.png`` and one grayscale PNG per channel."""
    from PIL import Image

    data = image.data if isinstance(image, FrameImage) else np.asarray(image)
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    q = to_uint8(data)
    paths = [out_prefix.with_name(out_prefix.name + "_rgb.png")]
    Image.fromarray(np.ascontiguousarray(np.moveaxis(q, 0, -1))).save(paths[0])
    for ch, name in enumerate(CHANNELS):
        p = out_prefix.with_name(f"{out_prefix.name}_{name}.png")
        Image.fromarray(q[ch]).save(p)
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# pairing

def align_frames(coarse_times: np.ndarray, fine_times: np.ndarray, rtol: float = 1e-9) -> list[tuple[int, int]]:
    """Pair coarse frame ``n`` with fine frame ``2n``.

    The fine series must start at the same time with exactly half the
    coarse cadence; returns ``(n, 2n)`` for every coarse interval covered.
    """
    if len(coarse_times) < 2:
        raise DatasetError("coarse series needs at least two frames")
    cadence = coarse_times[1] - coarse_times[0]
    tol = rtol * max(abs(cadence), 1.0)
    for n, t in enumerate(coarse_times):
        expected = coarse_times[0] + n * cadence
        if abs(t - expected) > tol:
            raise DatasetError(f"coarse cadence is irregular: frame {n} at t={t} s, expected {expected} s")
    for k, t in enumerate(fine_times):
        expected = coarse_times[0] + k * cadence / 2
        if abs(t - expected) > tol:
            raise DatasetError(
                f"fine cadence is not half the coarse cadence: first mismatch at fine frame {k}, "
                f"t={t} s, expected {expected} s"
            )
    n_pairs = min(len(coarse_times) - 1, (len(fine_times) - 1) // 2)
    return [(n, 2 * n) for n in range(n_pairs)]


def compute_norm_ranges(coarse: CSF, frame_ids: Sequence[int], headroom: float = 0.01):
    """Per-channel ranges over water cells of the given coarse frames.

    U and V share a symmetric range; xi gets ``headroom`` of its span on
    both sides.
    """
    vmax, lo, hi = 0.0, np.inf, -np.inf
    m = coarse.mask
    for k in sorted(set(frame_ids)):
        f = coarse.frame(k)
        vmax = max(vmax, float(np.abs(f[1][m]).max()), float(np.abs(f[2][m]).max()))
        lo = min(lo, float(f[0][m].min()))
        hi = max(hi, float(f[0][m].max()))
    vmax = max(vmax * (1 + headroom), 1e-6)
    span = max(hi - lo, 1e-6)
    return [(-vmax, vmax), (-vmax, vmax), (lo - headroom * span, hi + headroom * span)]


def build_pairs(coarse: CSF, fine: CSF, pix: tuple[int, int], norm_ranges,
                indices: Sequence[int] | None = None) -> list[SamplePair]:
    """Emit aligned (t_n, t_n+1) -> (t_2n, t_2n+1, t_2n+2) sample pairs."""
    if not np.allclose(coarse.extent, fine.extent):
        raise DatasetError("coarse and fine series cover different domains")
    align = align_frames(coarse.times(), fine.times())
    if indices is not None:
        keep = set(indices)
        align = [a for a in align if a[0] in keep]
    ct, ft = coarse.times(), fine.times()
    cache: dict[tuple[str, int], FrameImage] = {}

    def img(src: CSF, tag: str, k: int, times) -> FrameImage:
        # consecutive pairs share their boundary frames
        key = (tag, k)
        if key not in cache:
            if len(cache) > 8:
                cache.clear()
            cache[key] = render_fields(src.frame(k), src.mask, pix, norm_ranges, float(times[k]))
        return cache[key]

    pairs = []
    for n, f0 in align:
        lr = [img(coarse, "c", n + i, ct) for i in range(2)]
        hr = [img(fine, "f", f0 + i, ft) for i in range(3)]
        mask = lr[0].mask & hr[0].mask
        stack_lr = np.stack([x.data for x in lr])
        stack_hr = np.stack([x.data for x in hr])
        stack_lr[..., ~mask] = 0.0
        stack_hr[..., ~mask] = 0.0
        pairs.append(SamplePair(stack_lr, stack_hr, mask, f"{n:06d}",
                                tuple(x.t for x in lr), tuple(x.t for x in hr)))
    return pairs


# --------------------------------------------------------------------------
# patching and augmentation

def crop_patch(sample: SamplePair, size: int = 64, rng: np.random.Generator | None = None) -> SamplePair:
    """Crop the same random ``size`` x ``size`` window from every frame.

    The window is drawn uniformly from positions that contain water.
    """
    rng = np.random.default_rng() if rng is None else rng
    h, w = sample.mask.shape
    if h < size or w < size:
        raise DatasetError(f"patch size {size} exceeds image {h}x{w}")
    if not sample.mask.any():
        raise DatasetError("sample has no water pixels")
    water = sliding_window_view(sample.mask, (size, size)).any(axis=(-2, -1))
    valid = np.flatnonzero(water)
    if valid.size == 0:
        raise DatasetError(f"no {size}x{size} window contains water")
    i, j = np.unravel_index(int(valid[rng.integers(valid.size)]), water.shape)
    sl = (slice(i, i + size), slice(j, j + size))
    return replace(sample, lr=sample.lr[..., sl[0], sl[1]].copy(),
                   hr=sample.hr[..., sl[0], sl[1]].copy(), mask=sample.mask[sl].copy())


def _flip_sign(x: np.ndarray, ch: int, mask: np.ndarray) -> None:
    x[:, ch] = np.where(mask, 1.0 - x[:, ch], 0.0)


def _transform(x: np.ndarray, mask: np.ndarray, hflip: bool, vflip: bool, rot_k: int):
    x, m = x.copy(), mask
    if hflip:
        x, m = x[..., ::-1], m[:, ::-1]
        _flip_sign(x, U, m)
    if vflip:
        x, m = x[..., ::-1, :], m[::-1, :]
        _flip_sign(x, V, m)
    for _ in range(rot_k % 4):
        # quarter turn from +x towards -y: (U, V) -> (V, -U)
        x, m = np.rot90(x, 1, axes=(-2, -1)), np.rot90(m)
        u_new = x[:, V].copy()
        x[:, V] = x[:, U]
        x[:, U] = u_new
        _flip_sign(x, V, m)
    return np.ascontiguousarray(x), np.ascontiguousarray(m)


def apply_augmentation(sample: SamplePair, hflip: bool = False, vflip: bool = False,
                       rot_k: int = 0, reverse: bool = False) -> SamplePair:
    """Deterministic flips, ``rot_k`` quarter turns and temporal reversal."""
    if rot_k % 4 and sample.mask.shape[0] != sample.mask.shape[1]:
        raise DatasetError("rotation needs a square patch")
    lr, mask = _transform(sample.lr, sample.mask, hflip, vflip, rot_k)
    hr, _ = _transform(sample.hr, sample.mask, hflip, vflip, rot_k)
    lr_t, hr_t = sample.lr_times, sample.hr_times
    if reverse:
        lr, hr = lr[::-1].copy(), hr[::-1].copy()
        lr_t, hr_t = lr_t[::-1], hr_t[::-1]
    return replace(sample, lr=lr, hr=hr, mask=mask, lr_times=lr_t, hr_times=hr_t)


def augment(sample: SamplePair, rng: np.random.Generator,
            enabled: Sequence[str] = AUGMENTATIONS) -> SamplePair:
    """Random augmentation with an independent coin per enabled transform."""
    coins = rng.random(4)
    rot = int(rng.integers(4))
    return apply_augmentation(
        sample,
        hflip="hflip" in enabled and coins[0] < 0.5,
        vflip="vflip" in enabled and coins[1] < 0.5,
        rot_k=rot if "rotate" in enabled and coins[2] < 0.5 else 0,
        reverse="reverse" in enabled and coins[3] < 0.5,
    )


# --------------------------------------------------------------------------
# persistence

def parse_split(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in str(text).split(":")]
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) <= 0:
        raise DatasetError(f"split must look like 6:2:2, got {text!r}")
    s = sum(parts)
    return tuple(p / s for p in parts)


def split_ids(ids: Sequence[str], ratios, seed: int) -> dict[str, list[str]]:
    """Disjoint random train/val/test lists with sizes rounded from ``ratios``."""
    ids = list(ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n = len(ids)
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train:n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val:]),
    }


def sample_path(root, sample_id: str) -> Path:
    return Path(root) / "samples" / f"{sample_id}.bin"


def save_sample(root, sample: SamplePair) -> Path:
    path = sample_path(root, sample.id)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = np.concatenate([sample.lr.ravel(), sample.hr.ravel(), sample.mask.ravel().astype(np.float32)])
    blob.astype("<f4").tofile(path)
    return path


def load_sample(root, sample_id: str, manifest: DatasetManifest | None = None) -> SamplePair:
    manifest = load_manifest(root) if manifest is None else manifest
    h, w = manifest.pix
    n = h * w
    blob = np.fromfile(sample_path(root, sample_id), dtype="<f4")
    if blob.size != 16 * n:
        raise DatasetError(f"sample {sample_id}: expected {16 * n} values, found {blob.size}")
    lr = blob[: 6 * n].reshape(2, 3, h, w)
    hr = blob[6 * n: 15 * n].reshape(3, 3, h, w)
    mask = blob[15 * n:].reshape(h, w) > 0.5
    prov = manifest.provenance.get("samples", {}).get(sample_id, {})
    return SamplePair(lr, hr, mask, sample_id, tuple(prov.get("lr_times", ())), tuple(prov.get("hr_times", ())))


def load_manifest(root) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    return DatasetManifest.from_json(json.loads(path.read_text()))


def make_dataset(coarse_dir, fine_dir, out, pix: tuple[int, int] | None = None, patch: int = 64,
                 split: str | Sequence[float] = "6:2:2", seed: int = 0,
                 augment_flags: Sequence[str] = AUGMENTATIONS) -> DatasetManifest:
    """Pair two CSF runs, split them, freeze ranges and write samples."""
    unknown = set(augment_flags) - set(AUGMENTATIONS)
    if unknown:
        raise DatasetError(f"unknown augmentations {sorted(unknown)}; choose from {AUGMENTATIONS}")
    coarse, fine = read_csf(coarse_dir), read_csf(fine_dir)
    if pix is None:
        pix = fine.shape
    ratios = parse_split(split) if isinstance(split, str) else tuple(split)
    align = align_frames(coarse.times(), fine.times())
    ids = [f"{n:06d}" for n, _ in align]
    splits = split_ids(ids, ratios, seed)
    train_frames = [int(i) + d for i in splits["train"] for d in (0, 1)] or [0, 1]
    norm_ranges = compute_norm_ranges(coarse, train_frames)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    prov = {"coarse": str(Path(coarse_dir).resolve()), "fine": str(Path(fine_dir).resolve()), "samples": {}}
    for sample in build_pairs(coarse, fine, pix, norm_ranges):
        save_sample(out, sample)
        prov["samples"][sample.id] = {"lr_times": list(sample.lr_times), "hr_times": list(sample.hr_times)}
    manifest = DatasetManifest(splits, ratios, norm_ranges, tuple(pix), patch, seed, list(augment_flags), prov)
    (out / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1))
    log.info("wrote %d samples to %s", len(ids), out)
    return manifest
