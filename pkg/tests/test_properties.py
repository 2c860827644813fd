"""Randomized property suites for the Smagorinsky tensor and the convective form."""

import numpy as np
import pytest

from smagfem import properties
from smagfem.spaces import Field


@pytest.fixture
def gen():
    return np.random.default_rng(7)


@pytest.mark.parametrize("suite, n", [
    (properties.monotonicity_suite, 2000),
    (properties.continuity_suite, 2000),
    (properties.homogeneity_suite, 100),
    (properties.cross_antisymmetry_suite, 100),
    (properties.curl_identity_suite, 10),
    (properties.skew_symmetry_suite, 5),
    (properties.spsd_suite, 20),
    (properties.rotation_invariance_suite, 2),
])
def test_suite_passes(suite, n, gen):
    result = suite(gen, n)
    assert result.passed, result.detail
    assert result.samples > 0


def test_determinism_suite(gen):
    result = properties.determinism_suite(gen)
    assert result.passed, result.detail


def test_divergence_free_basis(gen):
    system = properties.periodic_system(4)
    basis = properties.divergence_free_basis(system)
    D = properties.pointwise_divergence_matrix(system)
    assert basis.shape[0] == system.n_velocity
    assert basis.shape[1] > 0
    assert np.max(np.abs(D @ basis)) < 1e-10
    u = properties.project_divergence_free(system, basis, Field("velocity", gen.normal(size=system.n_velocity)))
    assert np.max(np.abs(D @ u.coeffs)) < 1e-10


def test_run_all_quick():
    results = properties.run_all(seed=3, quick=True)
    assert len(results) == 9
    assert all(r.passed for r in results), [r.name for r in results if not r.passed]
