import numpy as np
import pytest

from stabmhd.mesh import build_face_connectivity, generate_cube_mesh, generate_lshape_mesh


@pytest.fixture(scope="session")
def cube1():
    return generate_cube_mesh(1)


@pytest.fixture(scope="session")
def cube2():
    return generate_cube_mesh(2)


@pytest.fixture(scope="session")
def lshape1():
    return generate_lshape_mesh(1)


@pytest.fixture(scope="session")
def faces2(cube2):
    return build_face_connectivity(cube2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
