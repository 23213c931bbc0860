import numpy as np
import pytest

from maxdamp.grid import assemble_complex, build_grid
from maxdamp.materials import MaterialPreset, SigmaSpec, sample_materials


@pytest.fixture(scope="session")
def grid8():
    return build_grid(8, 1.0)


@pytest.fixture(scope="session")
def cplx8(grid8):
    return assemble_complex(grid8)


@pytest.fixture(scope="session")
def asm8(grid8):
    eps = MaterialPreset("constant", (1.0,))
    return sample_materials(grid8, eps, eps, SigmaSpec(1.0, 0.25, "indicator"))


@pytest.fixture(scope="session")
def asm8_free(grid8):
    eps = MaterialPreset("constant", (1.0,))
    return sample_materials(grid8, eps, eps, SigmaSpec(0.0, 0.25, "indicator"))


@pytest.fixture(scope="session")
def grid3():
    return build_grid(3, 1.0)


@pytest.fixture(scope="session")
def cplx3(grid3):
    return assemble_complex(grid3)


@pytest.fixture(scope="session")
def asm3(grid3):
    eps = MaterialPreset("constant", (1.0,))
    return sample_materials(grid3, eps, eps, SigmaSpec(1.0, 0.2, "indicator"))


def random_masked_edges(cplx, rng):
    return np.where(cplx.pec_edge_mask, rng.standard_normal(cplx.grid.edge_count), 0.0)
