"""Structured-grid finite-volume solver for the 2D shallow-water equations.

Conservative variables are the elevation ``xi`` and the depth-integrated
velocities ``U = H u`` and ``V = H v`` with total depth ``H = h_b + xi``.
Interface fluxes are Rusanov (local Lax-Friedrichs) on hydrostatically
reconstructed states, so a lake at rest stays at rest over any bathymetry.
Each step is dimensionally split (x sweep, then y sweep); every sweep is
advanced with two-stage SSP Runge-Kutta. Bottom friction and Coriolis are
applied afterwards as a pointwise semi-implicit update.

Arrays are indexed ``[row, col] = [y, x]``; row 0 is the southern edge and
column 0 the western edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

GRAVITY = 9.81

# (amplitude m, divisor h, phase rad) for cos(t / divisor + phase), t in hours
TIDAL_CONSTITUENTS: tuple[tuple[float, float, float], ...] = (
    (0.075, 25.82, 3.40),
    (0.095, 23.94, 3.60),
    (0.1, 12.66, 5.93),
    (0.395, 12.42, 0.0),
    (0.06, 12.00, 0.75),
)

EDGES = ("west", "east", "south", "north")


class SimulationError(RuntimeError):
    """Numerical failure while stepping (CFL violation, non-finite values)."""


class ConfigError(ValueError):
    """Invalid simulator configuration."""


@dataclass(frozen=True)
class SimConfig:
    nx: int
    ny: int
    dx: float
    dy: float
    dt: float
    t_end: float
    g: float = GRAVITY
    f_c: float = 0.0
    C_f: float = 0.0
    H_min: float = 0.05
    output_stride: int = 1
    constituents: tuple[tuple[float, float, float], ...] = ()
    boundary_layout: dict[str, str] = field(
        default_factory=lambda: {e: "land" for e in EDGES}
    )

    def __post_init__(self) -> None:
        if self.nx < 4 or self.ny < 4:
            raise ConfigError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ConfigError("dx and dy must be positive")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_end < 0:
            raise ConfigError("t_end must be non-negative")
        if not self.H_min > 0:
            raise ConfigError("H_min must be positive")
        if self.output_stride < 1:
            raise ConfigError("output_stride must be >= 1")
        for i, c in enumerate(self.constituents):
            if len(c) != 3:
                raise ConfigError(f"constituent {i} must be (amplitude, period, phase)")
            amp, period, _ = c
            if amp < 0:
                raise ConfigError(f"constituent {i}: amplitude must be >= 0")
            if not period > 0:
                raise ConfigError(f"constituent {i}: period must be > 0")
        for edge in EDGES:
            tag = self.boundary_layout.get(edge)
            if tag not in ("open", "land"):
                raise ConfigError(f"boundary edge {edge!r} must be 'open' or 'land', got {tag!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def refined(self) -> "SimConfig":
        """Same domain at twice the cell count per axis and half the time step."""
        return replace(self, nx=2 * self.nx, ny=2 * self.ny, dx=self.dx / 2,
                       dy=self.dy / 2, dt=self.dt / 2)


@dataclass
class SimState:
    xi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    h_b: np.ndarray
    mask: np.ndarray
    t: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.xi.copy(), self.u.copy(), self.v.copy(),
                        self.h_b, self.mask, self.t)

    @property
    def depth(self) -> np.ndarray:
        return self.h_b + self.xi


def tidal_elevation(t_hours, constituents: Sequence[tuple[float, float, float]] = TIDAL_CONSTITUENTS):
    """Sum of cosine constituents ``a * cos(t / d + phi)`` with t in hours."""
    total = np.zeros_like(np.asarray(t_hours, dtype=np.float64))
    for amp, divisor, phase in constituents:
        total = total + amp * np.cos(np.asarray(t_hours, dtype=np.float64) / divisor + phase)
    if total.ndim == 0:
        return float(total)
    return total


def bottom_friction_coeff(q_mag, H, C_f: float):
    """Quadratic friction coefficient ``C_f |q| / H**2`` (units 1/s)."""
    H = np.asarray(H, dtype=np.float64)
    if np.any(H <= 0):
        raise SimulationError("bottom friction evaluated at non-positive depth")
    out = C_f * np.asarray(q_mag, dtype=np.float64) / H**2
    return float(out) if out.ndim == 0 else out


def _boundary_xi(cfg: SimConfig, t: float) -> float:
    return tidal_elevation(t / 3600.0, cfg.constituents)


def _pad_x(xi, un, ut, hb, mask, west: str, east: str, xi_hat: float):
    """Add one ghost column on each side.

    ``un`` is the velocity normal to the x-faces, ``ut`` the tangential one.
    Land ghosts mirror the adjacent cell with the normal component negated;
    open ghosts carry the prescribed elevation with zero-gradient velocity.
    """
    def pad(a):
        return np.concatenate([a[:, :1], a, a[:, -1:]], axis=1)

    xi_p, un_p, ut_p, hb_p = pad(xi), pad(un), pad(ut), pad(hb)
    m_p = np.concatenate([mask[:, :1], mask, mask[:, -1:]], axis=1)
    for col, tag in ((0, west), (-1, east)):
        if tag == "land":
            un_p[:, col] = -un_p[:, col]
        else:
            xi_p[:, col] = np.where(m_p[:, col], xi_hat, 0.0)
    return xi_p, un_p, ut_p, hb_p, m_p


def _sweep_rhs(xi, un, ut, hb, mask, west, east, xi_hat, dx, g):
    """Tendencies of (xi, un, ut) from fluxes through faces normal to axis 1."""
    xi_p, un_p, ut_p, hb_p, m_p = _pad_x(xi, un, ut, hb, mask, west, east, xi_hat)

    xl, xr = xi_p[:, :-1], xi_p[:, 1:]
    ul, ur = un_p[:, :-1], un_p[:, 1:]
    tl, tr = ut_p[:, :-1], ut_p[:, 1:]
    bl, br = hb_p[:, :-1], hb_p[:, 1:]
    ml, mr = m_p[:, :-1], m_p[:, 1:]

    # faces between water and land act as reflective walls
    left_land = ~ml & mr
    right_land = ml & ~mr
    xl = np.where(left_land, xr, xl)
    ul = np.where(left_land, -ur, ul)
    tl = np.where(left_land, tr, tl)
    bl = np.where(left_land, br, bl)
    xr = np.where(right_land, xl, xr)
    ur = np.where(right_land, -ul, ur)
    tr = np.where(right_land, tl, tr)
    br = np.where(right_land, bl, br)
    active = ml | mr

    Hl = np.where(active, bl + xl, 1.0)
    Hr = np.where(active, br + xr, 1.0)
    vel_nl, vel_nr = ul / Hl, ur / Hr
    vel_tl, vel_tr = tl / Hl, tr / Hr

    hb_star = np.minimum(bl, br)
    Hls = np.maximum(0.0, xl + hb_star)
    Hrs = np.maximum(0.0, xr + hb_star)
    Uls, Urs = Hls * vel_nl, Hrs * vel_nr
    Tls, Trs = Hls * vel_tl, Hrs * vel_tr

    a = np.maximum(np.abs(vel_nl) + np.sqrt(g * Hls), np.abs(vel_nr) + np.sqrt(g * Hrs))
    f_mass = 0.5 * (Uls + Urs) - 0.5 * a * (Hrs - Hls)
    f_norm = (0.5 * (Uls * vel_nl + 0.5 * g * Hls**2 + Urs * vel_nr + 0.5 * g * Hrs**2)
              - 0.5 * a * (Urs - Uls))
    f_tang = 0.5 * (Uls * vel_tl + Urs * vel_tr) - 0.5 * a * (Trs - Tls)

    f_mass = np.where(active, f_mass, 0.0)
    f_tang = np.where(active, f_tang, 0.0)
    # pressure seen by each side includes the hydrostatic correction
    f_norm_l = np.where(active, f_norm + 0.5 * g * (Hl**2 - Hls**2), 0.0)
    f_norm_r = np.where(active, f_norm + 0.5 * g * (Hr**2 - Hrs**2), 0.0)

    d_xi = -(f_mass[:, 1:] - f_mass[:, :-1]) / dx
    d_un = -(f_norm_l[:, 1:] - f_norm_r[:, :-1]) / dx
    d_ut = -(f_tang[:, 1:] - f_tang[:, :-1]) / dx
    return (np.where(mask, d_xi, 0.0), np.where(mask, d_un, 0.0), np.where(mask, d_ut, 0.0))


def _sweep(xi, un, ut, hb, mask, west, east, xi_hat0, xi_hat1, dx, dt, g):
    """One SSP-RK2 (Heun) update for a single directional sweep."""
    k_xi, k_un, k_ut = _sweep_rhs(xi, un, ut, hb, mask, west, east, xi_hat0, dx, g)
    xi1, un1, ut1 = xi + dt * k_xi, un + dt * k_un, ut + dt * k_ut
    k_xi, k_un, k_ut = _sweep_rhs(xi1, un1, ut1, hb, mask, west, east, xi_hat1, dx, g)
    return (0.5 * xi + 0.5 * (xi1 + dt * k_xi),
            0.5 * un + 0.5 * (un1 + dt * k_un),
            0.5 * ut + 0.5 * (ut1 + dt * k_ut))


def check_cfl(state: SimState, cfg: SimConfig) -> tuple[float, float]:
    """Return per-direction Courant numbers; raise on violation."""
    m = state.mask
    H = np.where(m, state.depth, 1.0)
    c = np.sqrt(cfg.g * np.maximum(H, 0.0))
    cx = np.where(m, (np.abs(state.u) / H + c) * cfg.dt / cfg.dx, 0.0)
    cy = np.where(m, (np.abs(state.v) / H + c) * cfg.dt / cfg.dy, 0.0)
    worst = max(float(cx.max()), float(cy.max()))
    if worst >= 1.0:
        arr = cx if cx.max() >= cy.max() else cy
        j, i = np.unravel_index(int(np.argmax(arr)), arr.shape)
        speed = float(arr[j, i]) * (cfg.dx if arr is cx else cfg.dy) / cfg.dt
        raise SimulationError(
            f"CFL violation at cell (row={j}, col={i}): Courant {worst:.3f}, wave speed {speed:.3f} m/s"
        )
    return float(cx.max()), float(cy.max())


def step(state: SimState, cfg: SimConfig) -> SimState:
    """Advance ``state`` by one time step ``cfg.dt``."""
    check_cfl(state, cfg)
    bl = cfg.boundary_layout
    t0, t1 = state.t, state.t + cfg.dt
    any_open = any(bl[e] == "open" for e in EDGES)
    xh0 = _boundary_xi(cfg, t0) if any_open else 0.0
    xh1 = _boundary_xi(cfg, t1) if any_open else 0.0
    hb, m = state.h_b, state.mask

    xi, u, v = _sweep(state.xi, state.u, state.v, hb, m, bl["west"], bl["east"],
                      xh0, xh1, cfg.dx, cfg.dt, cfg.g)
    # y sweep on transposed arrays: V is normal, U tangential
    xi_t, v_t, u_t = _sweep(xi.T, v.T, u.T, hb.T, m.T, bl["south"], bl["north"],
                            xh0, xh1, cfg.dy, cfg.dt, cfg.g)
    xi, u, v = xi_t.T.copy(), u_t.T.copy(), v_t.T.copy()

    xi = np.where(m, np.maximum(xi, cfg.H_min - hb), 0.0)
    H = np.where(m, hb + xi, 1.0)
    if cfg.C_f != 0.0 or cfg.f_c != 0.0:
        tau = bottom_friction_coeff(np.hypot(u, v), H, cfg.C_f)
        a = 1.0 + cfg.dt * tau
        b = cfg.dt * cfg.f_c
        det = a * a + b * b
        u, v = (a * u + b * v) / det, (a * v - b * u) / det
    u = np.where(m, u, 0.0)
    v = np.where(m, v, 0.0)

    if not (np.isfinite(xi).all() and np.isfinite(u).all() and np.isfinite(v).all()):
        raise SimulationError(f"non-finite field value after step at t={t1:.1f} s")
    return SimState(xi, u, v, hb, m, t1)


# --------------------------------------------------------------------------
# synthetic basins

DOMAIN_SIZE = 10_000.0
BASINS: dict[str, Callable] = {}


def _basin(name):
    def deco(fn):
        BASINS[name] = fn
        return fn
    return deco


def _cell_centres(cfg: SimConfig):
    x = (np.arange(cfg.nx) + 0.5) * cfg.dx
    y = (np.arange(cfg.ny) + 0.5) * cfg.dy
    return np.meshgrid(x, y)


@_basin("tidal-bay")
def _tidal_bay(cfg: SimConfig, rng: np.random.Generator):
    """Open west edge, depth sloping linearly from 2 m there to 0.5 m at the east shore."""
    X, _ = _cell_centres(cfg)
    Lx = cfg.nx * cfg.dx
    hb = 2.0 - 1.5 * X / Lx
    mask = np.ones((cfg.ny, cfg.nx), dtype=bool)
    return hb, mask


@_basin("tidal-bay-shoals")
def _tidal_bay_shoals(cfg: SimConfig, rng: np.random.Generator):
    """Tidal bay with a seeded set of Gaussian shoals and one island."""
    hb, mask = _tidal_bay(cfg, rng)
    X, Y = _cell_centres(cfg)
    Lx, Ly = cfg.nx * cfg.dx, cfg.ny * cfg.dy
    for _ in range(6):
        cx, cy = rng.uniform(0.3, 0.9) * Lx, rng.uniform(0.1, 0.9) * Ly
        r = rng.uniform(0.04, 0.1) * Lx
        hb = hb - rng.uniform(0.2, 0.35) * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * r**2))
    hb = np.maximum(hb, 0.4)
    island = ((X - 0.6 * Lx) / (0.08 * Lx)) ** 2 + ((Y - 0.5 * Ly) / (0.15 * Ly)) ** 2 < 1.0
    mask = mask & ~island
    return hb, mask


@_basin("closed-basin")
def _closed_basin(cfg: SimConfig, rng: np.random.Generator):
    """Same sloping bathymetry as the tidal bay, every edge closed."""
    return _tidal_bay(cfg, rng)


def initial_state(cfg: SimConfig, basin: str = "tidal-bay", seed: int = 0) -> SimState:
    """Water at rest at the forcing level of t=0 (zero without open edges)."""
    if basin not in BASINS:
        raise ConfigError(f"unknown basin {basin!r}; choose from {sorted(BASINS)}")
    rng = np.random.default_rng(seed)
    hb, mask = BASINS[basin](cfg, rng)
    any_open = any(cfg.boundary_layout[e] == "open" for e in EDGES)
    level = _boundary_xi(cfg, 0.0) if any_open else 0.0
    xi = np.where(mask, level, 0.0)
    zeros = np.zeros_like(xi)
    hb = np.asarray(hb, dtype=np.float64)
    return SimState(xi, zeros, zeros.copy(), hb, mask, 0.0)


def tidal_bay_config(resolution: str = "coarse", t_end: float = 24 * 3600.0,
                     output_stride: int = 12, C_f: float = 0.009, f_c: float = 3.19e-5) -> SimConfig:
    """Default 10 km x 10 km tidal-bay setup; ``fine`` doubles cells and halves dt."""
    n = 64
    cfg = SimConfig(nx=n, ny=n, dx=DOMAIN_SIZE / n, dy=DOMAIN_SIZE / n, dt=20.0,
                    t_end=t_end, f_c=f_c, C_f=C_f, output_stride=output_stride,
                    constituents=TIDAL_CONSTITUENTS,
                    boundary_layout={"west": "open", "east": "land", "south": "land", "north": "land"})
    if resolution == "fine":
        return cfg.refined()
    if resolution != "coarse":
        raise ConfigError(f"resolution must be 'coarse' or 'fine', got {resolution!r}")
    return cfg


def run(cfg: SimConfig, basin: str = "tidal-bay", seed: int = 0,
        out: str | Path | None = None, state: SimState | None = None) -> list[SimState]:
    """Integrate to ``cfg.t_end`` and return every ``output_stride``-th state.

    When ``out`` is given the frames are also written as a CSF directory.
    """
    if state is None:
        state = initial_state(cfg, basin, seed)
    frames = [state.copy()]
    for n in range(1, cfg.n_steps + 1):
        state = step(state, cfg)
        if n % cfg.output_stride == 0:
            frames.append(state)
    if out is not None:
        from .csf import write_csf
        write_csf(out, cfg, frames, basin=basin)
    return frames


def total_mass(state: SimState, cfg: SimConfig) -> float:
    """Discrete integral of the elevation over water cells (m^3)."""
    return float(np.sum(np.where(state.mask, state.xi, 0.0)) * cfg.dx * cfg.dy)

