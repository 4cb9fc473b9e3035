import math

import numpy as np
import pytest

from st_downscaler.swe_sim import (
    TIDAL_CONSTITUENTS,
    ConfigError,
    SimConfig,
    SimState,
    SimulationError,
    bottom_friction_coeff,
    initial_state,
    run,
    step,
    tidal_bay_config,
    tidal_elevation,
    total_mass,
)

CLOSED = {"west": "land", "east": "land", "south": "land", "north": "land"}


def closed_cfg(n=32, **kw):
    base = dict(nx=n, ny=n, dx=10_000.0 / n, dy=10_000.0 / n, dt=20.0 * 32 / n, t_end=0.0,
                boundary_layout=CLOSED)
    base.update(kw)
    return SimConfig(**base)


def gaussian_state(cfg, amp=0.1, cx=0.4, cy=0.55, width=0.12, basin="closed-basin"):
    s = initial_state(cfg, basin)
    x = (np.arange(cfg.nx) + 0.5) / cfg.nx
    y = (np.arange(cfg.ny) + 0.5) / cfg.ny
    X, Y = np.meshgrid(x, y)
    s.xi = amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * width**2))
    return s


# --- tidal forcing ---------------------------------------------------------

def test_tidal_elevation_at_zero_matches_hand_evaluation():
    hand = (0.075 * math.cos(3.40) + 0.095 * math.cos(3.60) + 0.1 * math.cos(5.93)
            + 0.395 * math.cos(0.0) + 0.06 * math.cos(0.75))
    assert hand == pytest.approx(0.375027, abs=1e-5)
    assert tidal_elevation(0.0) == pytest.approx(0.375027, abs=1e-5)


def test_tidal_elevation_empty_constituents():
    assert tidal_elevation(7.3, []) == 0.0


def test_tidal_elevation_bounded():
    t = np.random.default_rng(1).uniform(0, 1000, 10_000)
    assert np.abs(tidal_elevation(t)).max() <= 0.725


# --- friction --------------------------------------------------------------

@pytest.mark.parametrize("q,H,cf,expected", [(1.0, 2.0, 0.009, 0.00225), (0.0, 3.0, 0.009, 0.0),
                                             (1.0, 1.0, 0.004, 0.004)])
def test_bottom_friction(q, H, cf, expected):
    assert bottom_friction_coeff(q, H, cf) == pytest.approx(expected, rel=1e-12)


def test_bottom_friction_rejects_dry():
    with pytest.raises(SimulationError):
        bottom_friction_coeff(1.0, 0.0, 0.009)


# --- config validation -----------------------------------------------------

@pytest.mark.parametrize("kw", [dict(nx=3), dict(dt=0.0), dict(dx=-1.0), dict(H_min=0.0),
                                dict(constituents=((0.1, 0.0, 0.0),)),
                                dict(constituents=((-0.1, 12.0, 0.0),)),
                                dict(boundary_layout={"west": "sea", "east": "land", "south": "land",
                                                      "north": "land"})])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        closed_cfg(**kw)


def test_unknown_basin():
    with pytest.raises(ConfigError):
        initial_state(closed_cfg(), "atlantis")


# --- step invariants -------------------------------------------------------

def test_still_water_is_exactly_preserved():
    cfg = closed_cfg(16, f_c=1e-4, C_f=0.009)
    s = initial_state(cfg, "closed-basin")
    s.h_b = np.full_like(s.h_b, 1.5)
    for _ in range(200):
        s = step(s, cfg)
    for f in (s.xi, s.u, s.v):
        assert np.abs(f).max() <= 1e-12


def test_lake_at_rest_over_sloping_bathymetry():
    cfg = closed_cfg(32, f_c=3.19e-5, C_f=0.009)
    s = initial_state(cfg, "tidal-bay-shoals", seed=2)
    s.xi = np.where(s.mask, 0.2, 0.0)
    for _ in range(100):
        s = step(s, cfg)
    assert max(np.abs(s.u).max(), np.abs(s.v).max()) <= 1e-10


def test_mass_conservation_closed_basin():
    cfg = closed_cfg(32, f_c=3.19e-5, C_f=0.009)
    s = gaussian_state(cfg)
    m0 = total_mass(s, cfg)
    for _ in range(1000):
        s = step(s, cfg)
    assert abs(total_mass(s, cfg) - m0) / abs(m0) <= 1e-8


def test_mirror_symmetry():
    cfg = closed_cfg(24, C_f=0.009)
    s = gaussian_state(cfg, cx=0.3)
    m = s.copy()
    m.xi, m.u, m.v = s.xi[:, ::-1].copy(), -s.u[:, ::-1], s.v[:, ::-1].copy()
    m.h_b = s.h_b[:, ::-1].copy()
    for _ in range(60):
        s, m = step(s, cfg), step(m, cfg)
    assert np.abs(m.xi - s.xi[:, ::-1]).max() <= 1e-10
    assert np.abs(m.u + s.u[:, ::-1]).max() <= 1e-10
    assert np.abs(m.v - s.v[:, ::-1]).max() <= 1e-10


def _block_mean(a, k):
    n = a.shape[0] // k
    return a.reshape(n, k, n, k).mean(axis=(1, 3))


def test_refinement_reduces_error():
    T = 1200.0
    errs = []
    ref_cfg = closed_cfg(64, dt=5.0, t_end=T)
    ref = run(ref_cfg, state=gaussian_state(ref_cfg), basin="closed-basin")[-1].xi
    for n, dt in ((16, 20.0), (32, 10.0)):
        cfg = closed_cfg(n, dt=dt, t_end=T)
        xi = run(cfg, state=gaussian_state(cfg), basin="closed-basin")[-1].xi
        errs.append(np.sqrt(np.mean((xi - _block_mean(ref, 64 // n)) ** 2)))
    assert errs[1] / errs[0] < 1.0


def test_cfl_violation_reports_cell():
    cfg = closed_cfg(16, dt=500.0)
    with pytest.raises(SimulationError, match="CFL violation at cell"):
        step(initial_state(cfg, "closed-basin"), cfg)


def test_non_finite_aborts():
    cfg = closed_cfg(16)
    s = initial_state(cfg, "closed-basin")
    s.u = s.u.copy()
    s.u[3, 3] = np.nan
    with pytest.raises(SimulationError):
        step(s, cfg)


def test_open_boundary_follows_forcing():
    cfg = tidal_bay_config(t_end=3600.0)
    frames = run(cfg)
    last = frames[-1]
    assert last.xi[:, 0].mean() == pytest.approx(tidal_elevation(1.0), abs=5e-3)
    assert np.isclose(frames[0].xi, tidal_elevation(0.0)).all()


def test_mask_and_land_zero(small_csf):
    from st_downscaler.csf import read_csf

    csf = read_csf(small_csf[0])
    f = csf.frame(csf.n_frames - 1)
    assert (~csf.mask).any()
    assert np.all(f[:, ~csf.mask] == 0.0)


# --- run -------------------------------------------------------------------

def test_run_frame_count():
    cfg = closed_cfg(16, dt=20.0, t_end=200.0, output_stride=5)
    frames = run(cfg, "closed-basin")
    assert [f.t for f in frames] == [0.0, 100.0, 200.0]


def test_run_is_deterministic():
    cfg = tidal_bay_config(t_end=1200.0, output_stride=20)
    a, b = run(cfg, "tidal-bay-shoals", seed=4), run(cfg, "tidal-bay-shoals", seed=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.xi, y.xi) and np.array_equal(x.u, y.u) and np.array_equal(x.v, y.v)


def test_fine_run_doubles_frame_pattern():
    coarse = tidal_bay_config(t_end=1200.0, output_stride=3)
    fine = coarse.refined()
    assert fine.dt == coarse.dt / 2 and fine.nx == 2 * coarse.nx
    nc, nf = len(run(coarse)), len(run(fine))
    assert nf == 2 * nc - 1
