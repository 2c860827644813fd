"""Shared systems on the Union Jack box."""

import numpy as np
import pytest

from smagfem import assembly
from smagfem.mesh import BoundaryTag, Mesh, build_periodicity, build_union_jack
from smagfem.spaces import BoundaryCondition, build_system

BOX = (0.0, 2.0 * np.pi, 0.0, 2.0 * np.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def periodic_system():
    """4x4 Union Jack on (0, 2pi)^2, periodic in x and y."""
    return build_system(build_periodicity(build_union_jack(4, 4, BOX), ("x", "y")), {})


@pytest.fixture
def wall_system():
    """4x4 Union Jack on the unit square, no-slip walls."""
    return build_system(build_union_jack(4, 4), {BoundaryTag.WALL: BoundaryCondition.strong()})


@pytest.fixture
def free_system():
    """4x4 Union Jack on the unit square, unconstrained (Neumann) boundary."""
    return build_system(build_union_jack(4, 4), {BoundaryTag.WALL: BoundaryCondition.neumann()})


@pytest.fixture
def slip_system():
    return build_system(build_union_jack(4, 4), {BoundaryTag.WALL: BoundaryCondition.normal_only()})


@pytest.fixture
def one_triangle():
    tags = {(0, 1): BoundaryTag.WALL, (1, 2): BoundaryTag.WALL, (0, 2): BoundaryTag.WALL}
    return Mesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]], tags)


@pytest.fixture(autouse=True)
def serial_assembly():
    saved_chunk = assembly.CHUNK_SIZE
    assembly.set_assembly_threads(1)
    yield
    assembly.CHUNK_SIZE = saved_chunk
    assembly.set_assembly_threads(1)


def affine(a, b):
    """Vector function x -> a + b x."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def f(points, t=0.0):
        return a + points @ b.T

    return f
