"""Reader and writer for CSF simulation directories.

Layout::

    meta.json          grid, time step, forcing and friction parameters
    mask.bin           ny*nx float32, 1 = water
    bathy.bin          ny*nx float32
    frame_000000.bin   xi, U, V concatenated (3*ny*nx float32)

All binaries are row-major little-endian float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DTYPE = np.dtype("<f4")


def _write(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=DTYPE).tofile(path)


def frame_name(k: int) -> str:
    return f"frame_{k:06d}.bin"


def write_csf(out, cfg, frames: Sequence, basin: str = "tidal-bay") -> Path:
    """Write simulator frames (``SimState`` sequence) to a CSF directory."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    first = frames[0]
    meta = {
        "nx": cfg.nx,
        "ny": cfg.ny,
        "dx": cfg.dx,
        "dy": cfg.dy,
        "dt": cfg.dt,
        "output_stride": cfg.output_stride,
        "constituents": [list(c) for c in cfg.constituents],
        "C_f": cfg.C_f,
        "f_c": cfg.f_c,
        "basin": basin,
        "boundary_layout": dict(cfg.boundary_layout),
        "n_frames": len(frames),
        "t0": float(first.t),
        "endianness": "little",
        "dtype": "f32",
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    _write(out / "mask.bin", first.mask.astype(np.float32))
    _write(out / "bathy.bin", first.h_b)
    for k, s in enumerate(frames):
        write_frame(out / frame_name(k), s.xi, s.u, s.v)
    return out


def write_frame(path, xi: np.ndarray, u: np.ndarray, v: np.ndarray) -> None:
    _write(Path(path), np.stack([xi, u, v]))


def read_frame(path, ny: int, nx: int) -> np.ndarray:
    """Return a ``[3, ny, nx]`` float64 array ordered (xi, U, V)."""
    data = np.fromfile(path, dtype=DTYPE)
    if data.size != 3 * ny * nx:
        raise ValueError(f"{path}: expected {3 * ny * nx} values, found {data.size}")
    return data.reshape(3, ny, nx).astype(np.float64)


@dataclass
class CSF:
    path: Path
    meta: dict
    mask: np.ndarray
    bathy: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.meta["ny"], self.meta["nx"]

    @property
    def n_frames(self) -> int:
        return int(self.meta["n_frames"])

    @property
    def cadence(self) -> float:
        """Physical time between saved frames (s)."""
        return self.meta["dt"] * self.meta["output_stride"]

    @property
    def extent(self) -> tuple[float, float]:
        """Domain size (Ly, Lx) in metres."""
        return self.meta["ny"] * self.meta["dy"], self.meta["nx"] * self.meta["dx"]

    def times(self) -> np.ndarray:
        return self.meta.get("t0", 0.0) + self.cadence * np.arange(self.n_frames)

    def frame(self, k: int) -> np.ndarray:
        ny, nx = self.shape
        return read_frame(self.path / frame_name(k), ny, nx)


def read_csf(path) -> CSF:
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise FileNotFoundError(f"{path} is not a CSF directory (no meta.json)")
    meta = json.loads(meta_file.read_text())
    ny, nx = meta["ny"], meta["nx"]
    mask = np.fromfile(path / "mask.bin", dtype=DTYPE).reshape(ny, nx) > 0.5
    bathy = np.fromfile(path / "bathy.bin", dtype=DTYPE).reshape(ny, nx).astype(np.float64)
    if "n_frames" not in meta:
        meta["n_frames"] = len(sorted(path.glob("frame_*.bin")))
    return CSF(path, meta, mask, bathy)
