"""Saddle solves, time stepping and convergence studies."""

from dataclasses import replace

import numpy as np
import pytest

from smagfem import solver
from smagfem.assembly import (FormParams, assemble_divergence, assemble_mass, assemble_rhs,
                              assemble_viscous)
from smagfem.cases import get_case
from smagfem.config import config_for_case
from smagfem.diagnostics import Flag, error_norms
from smagfem.errors import InstabilityError, SolverError
from smagfem.mesh import BoundaryTag, build_periodicity, build_union_jack
from smagfem.solver import (SaddleSystem, TimeState, bdf_step, check_manufactured, convergence_study,
                            linearization_field, run_simulation, solve_linear_model, solve_saddle,
                            solve_stokes)
from smagfem.spaces import BoundaryCondition, Field, build_system, interpolate

from .conftest import BOX, affine


def constant(system, value):
    return Field("velocity", np.tile(value, system.n_nodes).astype(float))


def test_zero_rhs_gives_zero_solution(wall_system):
    u, p = solve_stokes(wall_system, 1.0)
    assert not np.any(u.coeffs)
    assert not np.any(p.coeffs)


def test_recovers_manufactured_pair(wall_system, rng):
    system = wall_system
    A = (assemble_mass(system) + assemble_viscous(system, 1.0)).tocsr()
    B = assemble_divergence(system)
    u_true = system.prolong(rng.normal(size=system.n_free_velocity)).coeffs
    p_true = rng.normal(size=system.n_pressure)
    p_true[system.pressure_pinned] = 0.0
    u, p = solve_saddle(SaddleSystem(system, A, B, A @ u_true - B.T @ p_true, -B @ u_true))
    np.testing.assert_allclose(u.coeffs, u_true, atol=1e-8)
    assert p.coeffs[system.pressure_pinned] == 0.0
    P = system.prolongation
    # Pressure is determined up to modes B^T cannot see.
    np.testing.assert_allclose(P.T @ (B.T @ p.coeffs), P.T @ (B.T @ p_true), atol=1e-8)


def test_stokes_matches_dense_oracle():
    system = build_system(build_union_jack(2, 2), {BoundaryTag.WALL: BoundaryCondition.strong()})
    f = affine([1.0, 2.0], [[0.0, 1.0], [-1.0, 0.0]])
    u, _ = solve_stokes(system, 1.0, f)
    P = system.prolongation.toarray()
    Pp = system.pressure_prolongation.toarray()
    A = P.T @ assemble_viscous(system, 1.0).toarray() @ P
    Bt = Pp.T @ assemble_divergence(system).toarray() @ P
    K = np.block([[A, -Bt.T], [-Bt, np.zeros((Bt.shape[0], Bt.shape[0]))]])
    r = np.concatenate([P.T @ assemble_rhs(system, f).coeffs, np.zeros(Bt.shape[0])])
    z = np.linalg.lstsq(K, r, rcond=None)[0]
    np.testing.assert_allclose(u.coeffs, P @ z[:A.shape[0]], atol=1e-9)


def test_stokes_is_weakly_divergence_free(wall_system):
    f = affine([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]])
    u, p = solve_stokes(wall_system, 0.5, f)
    assert np.any(u.coeffs)
    assert np.linalg.norm(assemble_divergence(wall_system) @ u.coeffs) <= 1e-9 * np.linalg.norm(u.coeffs)
    assert p.coeffs[0] == 0.0


def test_stokes_channel_pressure_drop():
    mesh = build_union_jack(4, 2, (0.0, 2.0, 0.0, 1.0),
                            side_tags={"left": BoundaryTag.INFLOW, "right": BoundaryTag.OUTFLOW})
    profile = lambda points, t=0.0: np.column_stack([4.0 * points[:, 1] * (1.0 - points[:, 1]),
                                                     np.zeros(len(points))])
    system = build_system(mesh, {BoundaryTag.INFLOW: BoundaryCondition.strong(profile),
                                 BoundaryTag.WALL: BoundaryCondition.strong(),
                                 BoundaryTag.OUTFLOW: BoundaryCondition.neumann()})
    assert system.pressure_pinned is None
    u, p = solve_stokes(system, 1.0)
    left = system.mesh.macro_parent[np.argmin(system.mesh.vertices[system.mesh.triangles].mean(axis=1)[:, 0])]
    right = system.mesh.macro_parent[np.argmax(system.mesh.vertices[system.mesh.triangles].mean(axis=1)[:, 0])]
    assert p.coeffs[left] > p.coeffs[right]
    inflow = np.isclose(system.node_coords[:, 0], 0.0)
    np.testing.assert_allclose(u.nodal[inflow], profile(system.node_coords[inflow]))


def test_stokes_needs_viscosity(wall_system):
    with pytest.raises(ValueError):
        solve_stokes(wall_system, 0.0)


def test_bdf_step_keeps_zero_state(periodic_system):
    zero = periodic_system.zero_velocity()
    state = TimeState(0.0, zero, Field("pressure", np.zeros(periodic_system.n_pressure)), 0)
    params = FormParams(mu=0.1, gamma=0.1)
    state = bdf_step(state, periodic_system, params, None, 0.1, order=1)
    state = bdf_step(state, periodic_system, params, None, 0.1, order=2)
    assert state.step_index == 2
    assert state.t == pytest.approx(0.2)
    assert not np.any(state.u_prev.coeffs)


def test_bdf2_mass_only_reduction(periodic_system):
    now = constant(periodic_system, [1.0, 2.0])
    before = constant(periodic_system, [0.5, 1.0])
    state = TimeState(0.1, now, Field("pressure", np.zeros(periodic_system.n_pressure)), 1, before)
    new = bdf_step(state, periodic_system, FormParams(), None, 0.1, order=2)
    expected = (4.0 * now.coeffs - before.coeffs) / 3.0
    np.testing.assert_allclose(new.u_prev.coeffs, expected, rtol=1e-9)
    assert new.u_prevprev is now


def test_bdf_step_validation(periodic_system):
    zero = periodic_system.zero_velocity()
    state = TimeState(0.0, zero, Field("pressure", np.zeros(periodic_system.n_pressure)), 0)
    with pytest.raises(ValueError):
        bdf_step(state, periodic_system, FormParams(), None, 0.0)
    with pytest.raises(ValueError):
        bdf_step(state, periodic_system, FormParams(), None, 0.1, order=3)
    with pytest.raises(ValueError, match="two history levels"):
        bdf_step(state, periodic_system, FormParams(), None, 0.1, order=2)


def test_linearization_field(periodic_system):
    now = constant(periodic_system, [1.0, 0.0])
    before = constant(periodic_system, [0.0, 1.0])
    p = Field("pressure", np.zeros(periodic_system.n_pressure))
    state = TimeState(0.2, now, p, 2, before)
    assert linearization_field(state, "previous") is now
    np.testing.assert_allclose(linearization_field(state, "extrapolated").nodal[0], [2.0, -1.0])
    assert linearization_field(TimeState(0.0, now, p, 0), "extrapolated") is now
    with pytest.raises(ValueError):
        linearization_field(state, "newton")


def test_run_manufactured_navier_stokes():
    config = config_for_case("mms_ns", nx=8, ny=8, dt=0.05, t_end=0.1)
    seen = []
    report = run_simulation(config, lambda record, system, u, p: seen.append(record.step))
    assert seen == [0, 1, 2]
    assert [r.step for r in report.records] == [0, 1, 2]
    assert report.steps == 2
    assert report.flag == Flag.OK
    assert report.mu == pytest.approx(min(10.0, report.h))
    l2, h1 = report.final_errors
    assert 0.0 < l2 < 1.0
    assert h1 > 0.0
    for r in report.records:
        assert r.div_weak <= 1e-8 * (1.0 + r.energy)
    assert len(report.step_energies) == 3


def test_run_zero_steps():
    report = run_simulation(config_for_case("shear_layer", nx=8, ny=8, t_end=0.0))
    assert report.steps == 0
    assert len(report.records) == 1
    assert report.records[0].energy > 0.0
    assert report.final_errors is None


def test_run_records_instability(monkeypatch):
    def explode(state, *args, **kwargs):
        raise InstabilityError("non-finite velocity or pressure", state.t + 0.01, state.step_index + 1)

    monkeypatch.setattr(solver, "bdf_step", explode)
    report = run_simulation(config_for_case("shear_layer", nx=4, ny=4, t_end=0.05))
    assert report.aborted
    assert report.flag == Flag.INSTABILITY
    assert report.records[-1].flag == Flag.INSTABILITY
    assert np.isnan(report.records[-1].energy)
    assert report.abort_reason == "non-finite velocity or pressure"


def test_run_rejects_linear_case():
    with pytest.raises(ValueError):
        run_simulation(config_for_case("mms_linear"))


def test_linear_model_convergence():
    study = convergence_study("mms_linear", levels=2, base_n=8)
    assert len(study.rows) == 2
    assert study.rows[1].l2 < study.rows[0].l2
    assert study.slope_l2 > 1.0
    assert "slope L2" in study.table()


def test_convergence_study_validation():
    with pytest.raises(ValueError):
        convergence_study("shear_layer")
    with pytest.raises(ValueError):
        convergence_study("mms_linear", levels=1)


def test_linear_model_with_streamwise_invariant_solution():
    system = build_system(build_periodicity(build_union_jack(16, 16, BOX), ("x", "y")), {})
    exact = lambda points, t=0.0: np.column_stack([np.sin(points[:, 1]), np.zeros(len(points))])
    beta = interpolate(system, affine([1.0, 0.0], np.zeros((2, 2))))
    u, _ = solve_linear_model(system, beta, 4.0, 0.0, lambda points, t=0.0: 4.0 * exact(points, t))
    l2, _ = error_norms(system, u, exact)
    assert l2 < 0.1 * np.pi * np.sqrt(2.0)
    assert np.linalg.norm(assemble_divergence(system) @ u.coeffs) < 1e-9 * np.linalg.norm(u.coeffs)


def test_convergence_study_checks_the_forcing_first(monkeypatch):
    case = get_case("mms_linear")
    good = case.forcing
    corrupted = replace(case, forcing=lambda sigma: (lambda points, t=0.0: 1.01 * good(sigma)(points, t)))
    monkeypatch.setattr(solver, "get_case", lambda case_id: corrupted)

    def no_solve(config):
        raise AssertionError("a level was solved before the forcing check")

    monkeypatch.setattr(solver, "_linear_level", no_solve)
    with pytest.raises(ValueError, match="forcing does not match"):
        convergence_study("mms_linear", levels=2)


def test_manufactured_cases_pass_the_forcing_check():
    for case_id, coefficient in (("mms_ns", 0.5), ("mms_linear", 4.0)):
        case = get_case(case_id)
        assert check_manufactured(case, config_for_case(case_id), coefficient) <= solver.PDE_RESIDUAL_TOL


def test_run_records_failed_linear_solve(monkeypatch):
    def diverge(state, *args, **kwargs):
        raise SolverError("saddle solve missed its residual target", residual=3.5e-4)

    monkeypatch.setattr(solver, "bdf_step", diverge)
    report = run_simulation(config_for_case("shear_layer", nx=4, ny=4, dt=0.01, t_end=0.05))
    assert report.aborted
    assert report.records[-1].flag == Flag.INSTABILITY
    assert report.records[-1].t == pytest.approx(0.01)
    assert "relative residual 3.500e-04" in report.abort_reason
