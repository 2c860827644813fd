"""Monitored quantities and the run report."""

import math

import numpy as np
import pytest

from smagfem.assembly import FormParams
from smagfem.diagnostics import (Flag, ReportRecord, RunReport, convergence_slope, divergence_norms,
                                 error_norms, gradient_norm, kinetic_energy, max_vorticity, stab_seminorm,
                                 vorticity)
from smagfem.mesh import import_mesh
from smagfem.spaces import Field, interpolate

from .conftest import affine
from .test_assembly import TWO_TRIANGLES, neumann

ROTATION = affine([0.0, 0.0], [[0.0, -1.0], [1.0, 0.0]])
STRETCH = affine([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
SHEAR = affine([0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]])


def test_kinetic_energy_of_constant_flow(periodic_system):
    u = interpolate(periodic_system, affine([1.0, 0.0], np.zeros((2, 2))))
    assert kinetic_energy(periodic_system, u) == pytest.approx(0.5 * 4.0 * np.pi ** 2, rel=1e-12)


def test_vorticity_of_rotation(free_system):
    u = interpolate(free_system, ROTATION)
    omega = vorticity(free_system, u)
    assert omega.space == "element"
    assert len(omega) == free_system.mesh.n_triangles
    np.testing.assert_allclose(omega.coeffs, 2.0, atol=1e-12)
    assert max_vorticity(free_system, u) == pytest.approx(2.0)


def test_divergence_norms(free_system):
    weak, pointwise = divergence_norms(free_system, interpolate(free_system, STRETCH))
    assert pointwise == pytest.approx(2.0, rel=1e-12)
    assert weak > 0.0
    weak, pointwise = divergence_norms(free_system, interpolate(free_system, ROTATION))
    assert weak < 1e-12
    assert pointwise < 1e-12


def test_gradient_norm(free_system):
    assert gradient_norm(free_system, interpolate(free_system, SHEAR)) == pytest.approx(1.0, rel=1e-12)


def test_stab_seminorm(free_system):
    u = interpolate(free_system, SHEAR)
    assert stab_seminorm(free_system, u, u, FormParams(mu=1.0)) == 0.0
    # Smagorinsky energy of an affine field: gamma * sum |T|^2 |grad u|^3 with |grad u| = 1.
    expected = math.sqrt(0.1 * np.sum(free_system.areas ** 2))
    assert stab_seminorm(free_system, u, u, FormParams(gamma=0.1)) == pytest.approx(expected, rel=1e-10)


def test_error_norms_vanish_on_affine_fields(free_system):
    exact = affine([0.5, -1.0], [[2.0, 1.0], [0.0, -3.0]])
    u = interpolate(free_system, exact)
    l2, h1 = error_norms(free_system, u, exact)
    assert l2 < 1e-12
    assert h1 < 1e-8
    gradient = lambda points, t: np.broadcast_to([[2.0, 1.0], [0.0, -3.0]], (len(points), 2, 2))
    l2, h1 = error_norms(free_system, u, exact, exact_gradient=gradient)
    assert h1 < 1e-12


def test_error_norms_of_zero_field(free_system):
    exact = affine([1.0, 0.0], np.zeros((2, 2)))
    l2, h1 = error_norms(free_system, free_system.zero_velocity(), exact)
    assert l2 == pytest.approx(1.0, rel=1e-12)
    assert h1 < 1e-8


def test_error_norms_reject_non_finite_exact(free_system):
    bad = lambda points, t: np.full((len(points), 2), np.nan)
    with pytest.raises(ValueError, match="not finite"):
        error_norms(free_system, free_system.zero_velocity(), bad, 1.0)


def test_convergence_slope():
    hs = [1.0, 0.5, 0.25, 0.125]
    assert convergence_slope(hs, [h ** 2 for h in hs]) == pytest.approx(2.0)
    assert convergence_slope(hs[:2], [3.0 * h for h in hs[:2]]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        convergence_slope([1.0], [1.0])
    with pytest.raises(ValueError):
        convergence_slope([0.5, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        convergence_slope([1.0, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError):
        convergence_slope([1.0, 0.5], [1.0, 2.0, 3.0])


def test_report_summary_and_drifts():
    report = RunReport(case="mms_ns", mu=0.1)
    report.add(ReportRecord(step=0, t=0.0, energy=1.0, max_vorticity=1.0, div_weak=0.0,
                            div_pointwise=0.0, stab_seminorm=0.0))
    report.step_energies += [1.0, 1.1, 1.1]
    np.testing.assert_allclose(report.energy_drifts(), [0.1, 0.0], atol=1e-15)
    summary = report.summary()
    assert summary["flag"] == "OK"
    assert summary["final"]["flag"] == "OK"
    assert summary["initial_energy"] == 1.0
    assert summary["final_errors"] is None
    report.abort("energy", 0.5, 5)
    assert report.flag == Flag.INSTABILITY
    assert report.summary()["abort_reason"] == "energy"
    assert RunReport(case="x").energy_drifts().size == 0


@pytest.mark.parametrize("c", [-2.5, 0.0, 3.0])
def test_stab_seminorm_is_absolutely_homogeneous(slip_system, rng, c):
    params = FormParams(mu=0.01, gamma=0.1, gamma0=0.2, gamma1=1.0)
    w = Field("velocity", rng.normal(size=slip_system.n_velocity))
    u = rng.normal(size=slip_system.n_velocity)
    base = stab_seminorm(slip_system, u, w, params)
    assert base > 0.0
    assert stab_seminorm(slip_system, c * u, w, params) == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-14)


def test_stab_seminorm_single_face_jump():
    system = neumann(import_mesh(TWO_TRIANGLES))
    w = interpolate(system, affine([1.0, 0.0], np.zeros((2, 2))))
    u = np.zeros(system.n_velocity)
    u[2 * system.node_of_vertex[1]] = 1.0
    L = math.sqrt(2.0)
    expected = math.sqrt(1.0 * L ** 2 / (1.0 + 1.0) * L * 0.5)
    assert stab_seminorm(system, u, w, FormParams(gamma0=1.0, U=1.0)) == pytest.approx(expected, rel=1e-12)
