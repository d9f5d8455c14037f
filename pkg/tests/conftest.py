import numpy as np
import pytest

from src.core.psf import gaussian_psf, tabulated_psf
from src.limits.fisher import SourceParams
from src.measurement.povm import build_phi_family
from src.modes.basis import build_basis


@pytest.fixture(scope="session")
def gaussian():
    return gaussian_psf(1.0)


@pytest.fixture(scope="session")
def basis(gaussian):
    return build_basis(gaussian, 0.0, 30)


@pytest.fixture(scope="session")
def phi_spec():
    return build_phi_family(9 * np.pi / 20, 0.0)


@pytest.fixture(scope="session")
def tabulated():
    x = np.linspace(-10.0, 10.0, 2001)
    y = (2 * np.pi) ** -0.25 * np.exp(-x ** 2 / 4)
    return tabulated_psf(x, y, source="sampled-gaussian")


@pytest.fixture
def theta():
    return SourceParams(s0=0.0, s=0.1, q=0.3)


@pytest.fixture
def psf_table_file(tmp_path):
    x = np.linspace(-10.0, 10.0, 2001)
    y = (2 * np.pi) ** -0.25 * np.exp(-x ** 2 / 4)
    path = tmp_path / "psf.txt"
    np.savetxt(path, np.column_stack([x, y]))
    return path
