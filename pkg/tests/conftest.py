import numpy as np
import pytest
import torch

from st_downscaler.dataset import make_dataset
from st_downscaler.swe_sim import SimConfig, TIDAL_CONSTITUENTS, run

SMALL_LAYOUT = {"west": "open", "east": "land", "south": "land", "north": "land"}


def small_config(n=16, dt=40.0, t_end=2400.0, stride=6):
    return SimConfig(nx=n, ny=n, dx=10_000.0 / n, dy=10_000.0 / n, dt=dt, t_end=t_end,
                     f_c=3.19e-5, C_f=0.009, output_stride=stride,
                     constituents=TIDAL_CONSTITUENTS, boundary_layout=SMALL_LAYOUT)


@pytest.fixture(scope="session")
def small_csf(tmp_path_factory):
    """Coarse 16x16 and fine 32x32 tidal runs with an island (11 / 21 frames)."""
    root = tmp_path_factory.mktemp("csf")
    cfg = small_config()
    run(cfg, "tidal-bay-shoals", seed=3, out=root / "coarse")
    run(cfg.refined(), "tidal-bay-shoals", seed=3, out=root / "fine")
    return root / "coarse", root / "fine"


@pytest.fixture(scope="session")
def small_data(small_csf, tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    make_dataset(*small_csf, out, pix=(32, 32), patch=16, seed=1)
    return out


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    np.random.seed(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    acc = next((m for n, m in list(sys.modules.items()) if n.endswith("test_acceptance")), None)
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.format_line(i))
