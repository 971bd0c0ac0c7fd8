import numpy as np
import pytest

from nls_virial.invariants.params_invariants import Field, make_params
from nls_virial.solvers.groundstate import solve_ground_state
from nls_virial.utils.spectral import Grid


def random_field(rng, grid, params, modes=6, envelope=2.0, complex_valued=True):
    """低波數隨機係數乘上 Gaussian 包絡，場在盒子邊緣已完全衰減"""
    values = np.zeros(grid.shape, dtype=complex)
    for _ in range(modes):
        k = rng.uniform(-2.0, 2.0, size=grid.dim)
        coefficient = rng.normal() + (1j * rng.normal() if complex_valued else 0.0)
        values += coefficient * np.exp(1j * sum(kj * x for kj, x in zip(k, grid.coords)))
    if not complex_valued:
        values = values.real
    shift = rng.uniform(-1.0, 1.0, size=grid.dim)
    gauss = np.exp(-sum((x - s) ** 2 for x, s in zip(grid.coords, shift)) / envelope ** 2)
    return Field(values * gauss, grid, params)


@pytest.fixture(scope="session")
def params_1d():
    return make_params(1, 7)


@pytest.fixture(scope="session")
def grid_1d():
    return Grid(1, 20.0, 512)


@pytest.fixture(scope="session")
def Q_1d(params_1d, grid_1d):
    return solve_ground_state(params_1d, grid_1d)


@pytest.fixture(scope="session")
def Q_1d_fine(params_1d):
    return solve_ground_state(params_1d, Grid(1, 20.0, 1024))


@pytest.fixture(scope="session")
def Q_1d_blowup(params_1d):
    # 爆破測試需要解析到寬度縮小十餘倍的剖面
    return solve_ground_state(params_1d, Grid(1, 20.0, 4096))


@pytest.fixture(scope="session")
def params_2d():
    return make_params(2, 5)


@pytest.fixture(scope="session")
def Q_2d(params_2d):
    return solve_ground_state(params_2d, Grid(2, 12.0, 256))


@pytest.fixture(scope="session")
def Q_3d():
    return solve_ground_state(make_params(3, 3), Grid(3, 12.0, 128))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
