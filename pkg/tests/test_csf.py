import json

import numpy as np
import pytest

from st_downscaler.csf import frame_name, read_csf, read_frame, write_csf
from st_downscaler.swe_sim import initial_state, run, tidal_bay_config


def test_round_trip_truncates_to_float32(tmp_path):
    cfg = tidal_bay_config(t_end=400.0, output_stride=10)
    frames = run(cfg, "tidal-bay-shoals", seed=1)
    write_csf(tmp_path, cfg, frames, "tidal-bay-shoals")
    csf = read_csf(tmp_path)
    assert csf.n_frames == len(frames) == 3
    assert csf.shape == (64, 64)
    np.testing.assert_array_equal(csf.times(), [0.0, 200.0, 400.0])
    np.testing.assert_array_equal(csf.mask, frames[0].mask)
    last = csf.frame(2)
    assert last.dtype == np.float64
    np.testing.assert_array_equal(last[0], frames[2].xi.astype(np.float32))
    np.testing.assert_array_equal(last[2], frames[2].v.astype(np.float32))


def test_meta_contents(tmp_path):
    cfg = tidal_bay_config(t_end=0.0)
    write_csf(tmp_path, cfg, [initial_state(cfg)])
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["endianness"] == "little" and meta["dtype"] == "f32"
    for key in ("nx", "ny", "dx", "dy", "dt", "output_stride", "constituents", "C_f", "f_c", "basin"):
        assert key in meta
    assert (tmp_path / frame_name(0)).stat().st_size == 3 * 64 * 64 * 4
    assert (tmp_path / "bathy.bin").stat().st_size == 64 * 64 * 4


def test_frame_size_mismatch(tmp_path):
    np.zeros(10, dtype="<f4").tofile(tmp_path / "f.bin")
    with pytest.raises(ValueError):
        read_frame(tmp_path / "f.bin", 4, 4)


def test_missing_meta(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_csf(tmp_path)
