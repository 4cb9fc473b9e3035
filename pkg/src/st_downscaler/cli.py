"""Command-line entry point: ``st-downscaler <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical or
runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "ST_DOWNSCALER_SEED"

log = logging.getLogger("st_downscaler")


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


# --------------------------------------------------------------------------
# config documents with dotted overrides

def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` overrides; keys must already exist in ``doc``."""
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise UsageError(f"unknown config key {key!r}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise UsageError(f"unknown config key {key!r}")
        node[parts[-1]] = parse_value(value)
    return doc


def load_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})")


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}")


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    from .swe_sim import ConfigError, SimConfig, SimulationError, run, tidal_bay_config, total_mass

    base = asdict(tidal_bay_config("coarse"))
    base["constituents"] = [list(c) for c in base["constituents"]]
    doc = {"basin": "tidal-bay", **base}
    doc.update(load_json(args.config))
    doc = apply_overrides(doc, args.set)
    basin = doc.pop("basin")
    doc["constituents"] = tuple(tuple(c) for c in doc.get("constituents", ()))
    try:
        cfg = SimConfig(**doc)
    except (ConfigError, TypeError) as e:
        raise UsageError(f"invalid simulation config: {e}")
    if args.resolution == "fine":
        cfg = cfg.refined()
    try:
        frames = run(cfg, basin, resolve_seed(args.seed), out=args.out)
    except ConfigError as e:
        raise UsageError(str(e))
    except SimulationError as e:
        raise RuntimeFailure(str(e))
    m0, m1 = total_mass(frames[0], cfg), total_mass(frames[-1], cfg)
    print(f"frames: {len(frames)}  ({cfg.nx}x{cfg.ny}, dt={cfg.dt} s)")
    print(f"mass integral: {m0:.6e} -> {m1:.6e} m^3 (change {m1 - m0:+.3e})")
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    from .dataset import AUGMENTATIONS, DatasetError, make_dataset

    pix = tuple(int(p) for p in args.pix.split(",")) if args.pix else None
    try:
        augment = [a for a in args.augment.split(",") if a] if args.augment is not None else AUGMENTATIONS
        m = make_dataset(args.coarse, args.fine, args.out, pix=pix, patch=args.patch, split=args.split,
                         seed=resolve_seed(args.seed), augment_flags=augment)
    except (DatasetError, FileNotFoundError) as e:
        raise UsageError(str(e))
    print("samples: " + ", ".join(f"{k}={len(v)}" for k, v in m.splits.items()))
    return EXIT_OK


def _configs(args):
    from .model import ModelConfig
    from .trainer import TrainConfig

    model_doc = asdict(ModelConfig())
    model_doc.update(load_json(args.model_cfg))
    train_doc = asdict(TrainConfig())
    train_doc.update(load_json(args.train_cfg))
    doc = apply_overrides({"model": model_doc, "train": train_doc}, args.set)
    if args.seed is not None or os.environ.get(SEED_ENV) is not None:
        doc["train"]["seed"] = resolve_seed(args.seed)
    try:
        return ModelConfig(**doc["model"]), TrainConfig(**doc["train"])
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}")


def cmd_train(args) -> int:
    from .model import NonFiniteError
    from .plotting import plot_training_curves
    from .trainer import TrainingError, train

    model_cfg, train_cfg = _configs(args)
    try:
        res = train(model_cfg, train_cfg, args.data, args.out)
    except FileNotFoundError as e:
        raise UsageError(str(e))
    except (TrainingError, NonFiniteError) as e:
        raise RuntimeFailure(str(e))
    val_rows = _read_csv(Path(args.out) / "val_log.csv")
    if res.history:
        plot_training_curves(res.history, Path(args.out) / "training.png", val_rows)
    print(f"best val RMSE: {res.best_val_rmse:.6f}; checkpoints in {args.out}")
    return EXIT_OK


def _load_ckpt(path):
    from .model import load_checkpoint

    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except ValueError as e:
        raise UsageError(str(e))


def cmd_eval(args) -> int:
    from .trainer import evaluate

    model, _ = _load_ckpt(args.ckpt)
    try:
        reports = evaluate(model, args.data, args.split, args.out)
    except FileNotFoundError as e:
        raise UsageError(str(e))
    except ValueError as e:
        raise RuntimeFailure(str(e))
    print(f"{'method':<10}{'frames':<8}{'RMSE':>10}{'MAE':>10}{'SSIM':>10}{'GMSD':>10}")
    for method, rep in reports.items():
        for frames, agg in rep.summary().items():
            print(f"{method:<10}{frames:<8}{agg['rmse']:>10.5f}{agg['mae']:>10.5f}"
                  f"{agg['ssim']:>10.5f}{agg['gmsd']:>10.5f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    import torch

    from .csf import read_csf, read_frame, write_frame
    from .dataset import denormalize, export_png, render_fields, resample

    model, header = _load_ckpt(args.ckpt)
    extra = header.get("extra", {})
    if "norm_ranges" not in extra:
        raise UsageError("checkpoint carries no normalisation ranges")
    a, b = (Path(p) for p in args.frames)
    for p in (a, b):
        if not p.exists():
            raise UsageError(f"frame file not found: {p}")
    try:
        src = read_csf(a.parent)
    except FileNotFoundError as e:
        raise UsageError(str(e))
    ny, nx = src.shape
    pix = tuple(extra.get("pix", (ny, nx)))
    try:
        imgs = [render_fields(read_frame(p, ny, nx), src.mask, pix, extra["norm_ranges"]) for p in (a, b)]
        x = torch.from_numpy(np.stack([im.data for im in imgs])[None])
        with torch.no_grad():
            y = model(x).numpy()[0]
    except ValueError as e:
        raise RuntimeFailure(f"shape mismatch: {e}")
    mask = imgs[0].mask
    y = y * mask
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phys = denormalize(y, extra["norm_ranges"]) * mask
    meta = dict(src.meta)
    ly, lx = src.extent
    meta.update({"ny": pix[0], "nx": pix[1], "dy": ly / pix[0], "dx": lx / pix[1],
                 "dt": src.meta["dt"] / 2, "n_frames": 3, "output_stride": src.meta["output_stride"],
                 "source_frames": [str(a), str(b)]})
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    mask.astype("<f4").tofile(out / "mask.bin")
    resample(src.bathy, pix).astype("<f4").tofile(out / "bathy.bin")
    for t in range(3):
        u, v, xi = phys[t]
        write_frame(out / f"frame_{t:06d}.bin", xi, u, v)
        export_png(y[t], out / "preview" / f"frame_{t}")
    print(f"wrote 3 frames to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .trainer import run_ablation

    matrix = load_json(args.matrix)
    model_cfg, train_cfg = _configs(args)
    try:
        results = run_ablation(matrix, model_cfg, train_cfg, args.data, args.out)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e))
    for name, r in results.items():
        print(f"{name:<20} rmse={r['rmse']:.5f} intra={r['rmse_intra']:.5f} inter={r['rmse_inter']:.5f}")
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    if not path.exists() or path.stat().st_size == 0:
        return []
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            try:
                r[k] = float(v) if k != "iter" else int(v)
            except (TypeError, ValueError):
                pass
    return rows


def cmd_report(args) -> int:
    from .report import write_report

    try:
        n = write_report(args.eval_dir, args.out, max_figures=args.figures)
    except FileNotFoundError as e:
        raise UsageError(str(e))
    print(f"report rows: {n}; written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="st-downscaler", description="Coastal spatiotemporal downscaling toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the shallow-water simulator and write a CSF directory")
    s.add_argument("--config", help="JSON simulation config (defaults: tidal-bay coarse)")
    s.add_argument("--out", required=True, help="output CSF directory")
    s.add_argument("--resolution", choices=("coarse", "fine"), default="coarse",
                   help="fine doubles the cells per axis and halves dt")
    s.add_argument("--seed", type=int, help=f"basin seed (fallback ${SEED_ENV}, then 0)")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("make-dataset", help="pair coarse/fine CSF runs into a split sample set")
    s.add_argument("--coarse", required=True, help="coarse CSF directory")
    s.add_argument("--fine", required=True, help="fine CSF directory (half the coarse cadence)")
    s.add_argument("--out", required=True, help="dataset directory")
    s.add_argument("--patch", type=int, default=64, help="training patch size")
    s.add_argument("--split", default="6:2:2", help="train:val:test ratios")
    s.add_argument("--pix", help="rendered image size H,W (default: fine grid shape)")
    s.add_argument("--seed", type=int, help=f"split seed (fallback ${SEED_ENV}, then 0)")
    s.add_argument("--augment", help="comma-separated training augmentations from hflip,vflip,rotate,reverse "
                                      "(default: all; empty string: none)")
    s.set_defaults(func=cmd_make_dataset)

    def model_train_args(s):
        s.add_argument("--model-cfg", help="JSON model config")
        s.add_argument("--train-cfg", help="JSON training config")
        s.add_argument("--seed", type=int, help=f"training seed (fallback ${SEED_ENV})")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override, e.g. train.total_iters=100 or model.n_rcab=2")

    s = sub.add_parser("train", help="train DNNCS")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", required=True, help="output directory for logs and checkpoints")
    model_train_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint and the interpolation baseline")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--split", default="test", choices=("train", "val", "test"), help="split to evaluate")
    s.add_argument("--out", required=True, help="evaluation directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="predict three fine frames from two coarse CSF frames")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--frames", required=True, nargs=2, metavar=("A", "B"), help="two CSF frame files")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("ablate", help="train and compare a matrix of ablation flags")
    s.add_argument("--matrix", required=True, help="JSON list of {name, flags} cells")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", required=True, help="output directory")
    model_train_args(s)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", help="per-sample CSV, residual maps and figures from an eval directory")
    s.add_argument("--eval-dir", required=True, help="directory written by eval")
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--figures", type=int, default=3, help="number of comparison figures")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeFailure as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
