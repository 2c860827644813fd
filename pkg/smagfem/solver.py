"""Saddle-point solves, BDF time stepping and run orchestration.

Sign convention: momentum ``A u - B^T p = F``, continuity ``-B u = G``, so
``p`` is the physical (kinematic) pressure. Unknowns are reduced to the free
velocity coefficients ``u = P x + g(t)`` and the unpinned pressures.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (FormParams, assemble_convection, assemble_divergence, assemble_jump_penalty,
                       assemble_linear_model, assemble_mass, assemble_nitsche, assemble_pressure_mass,
                       assemble_rhs, assemble_smagorinsky, assemble_viscous)
from .cases import get_case
from .config import SimConfig, config_for_case
from .diagnostics import (Flag, ReportRecord, RunReport, convergence_slope, divergence_norms,
                          error_norms, kinetic_energy, max_vorticity, stab_seminorm)
from .errors import InstabilityError, SingularSystemError, SolverError
from .spaces import Field, FESystem, VectorFunction, build_system, interpolate, l2_project

logger = logging.getLogger(__name__)

# Relative residual accepted from the direct solve.
RESIDUAL_TOL = 1e-9
# Manufactured forcing must satisfy the PDE to this max-norm residual.
PDE_RESIDUAL_TOL = 1e-6
PDE_RESIDUAL_SAMPLES = 100
# Pressure regularization relative to the velocity block's largest diagonal entry.
PRESSURE_REGULARIZATION = 1e-12

BDF_ALPHA0 = {1: 1.0, 2: 1.5}


@dataclass(frozen=True, eq=False)
class TimeState:
    t: float
    u_prev: Field
    p_prev: Field
    step_index: int
    u_prevprev: Optional[Field] = None


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """Full-size blocks; constraints are applied inside :func:`solve_saddle`."""

    system: FESystem
    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: Optional[np.ndarray] = None
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class StaticOperators:
    """Operators that do not depend on the advecting field."""

    mass: sp.csr_matrix
    viscous: sp.csr_matrix
    divergence: sp.csr_matrix
    boundary: sp.csr_matrix

    @classmethod
    def build(cls, system: FESystem, params: FormParams) -> "StaticOperators":
        BC, S1 = assemble_nitsche(system, params.mu, params.gamma1, params.U)
        return cls(mass=assemble_mass(system), viscous=assemble_viscous(system, params.mu),
                   divergence=assemble_divergence(system), boundary=(BC + S1).tocsr())


def _suspected_cause(system: FESystem) -> str:
    if system.pressure_pinned is None and not any(
            c.mode.value == "neumann" for c in system.bc.values()):
        return "pressure level undetermined (missing pin)"
    return "rank-deficient divergence block or singular velocity block"


def solve_saddle(saddle: SaddleSystem) -> tuple[Field, Field]:
    """Direct sparse LU of the reduced indefinite system."""
    system = saddle.system
    P = system.prolongation
    Pp = system.pressure_prolongation
    g = system.lifting(saddle.t)
    rhs_p = np.zeros(system.n_pressure) if saddle.rhs_p is None else np.asarray(saddle.rhs_p, dtype=float)

    A = (P.T @ saddle.A @ P).tocsr()
    Bt = (Pp.T @ saddle.B @ P).tocsr()
    diag = np.abs(A.diagonal())
    scale = diag.max() if diag.size and diag.max() > 0.0 else 1.0
    Mp = Pp.T @ assemble_pressure_mass(system) @ Pp
    eps = PRESSURE_REGULARIZATION * scale / max(float(system.mesh.macro_areas.max()), np.finfo(float).tiny)
    K = sp.bmat([[A, -Bt.T], [-Bt, -eps * Mp]], format="csc")
    r = np.concatenate([P.T @ (saddle.rhs_u - saddle.A @ g),
                        Pp.T @ (rhs_p + saddle.B @ g)])

    if not np.any(r):
        z = np.zeros(K.shape[0])
    else:
        try:
            z = spla.splu(K).solve(r)
        except RuntimeError as exc:
            raise SingularSystemError(f"saddle factorization failed ({exc})", _suspected_cause(system)) from exc
        if not np.all(np.isfinite(z)):
            raise SingularSystemError("saddle solve produced non-finite values", _suspected_cause(system))
        residual = np.linalg.norm(K @ z - r) / np.linalg.norm(r)
        if residual > RESIDUAL_TOL:
            raise SolverError("saddle solve missed its residual target", residual=residual)
    n = A.shape[0]
    u = Field("velocity", P @ z[:n] + g)
    p = Field("pressure", Pp @ z[n:])
    return u, p


def solve_stokes(system: FESystem, mu: float, f: Optional[VectorFunction] = None,
                 t: float = 0.0) -> tuple[Field, Field]:
    """Steady Stokes: ``mu (grad u, grad v) - (p, div v) = (f, v)``, ``div u = 0``."""
    if mu <= 0.0:
        raise ValueError(f"Stokes solve needs mu > 0, got {mu}")
    rhs = assemble_rhs(system, f, t).coeffs if f is not None else np.zeros(system.n_velocity)
    A = assemble_viscous(system, mu)
    return solve_saddle(SaddleSystem(system, A, assemble_divergence(system), rhs, t=t))


def solve_linear_model(system: FESystem, beta: Field, sigma: float, gamma: float,
                       f: VectorFunction) -> tuple[Field, Field]:
    """Stabilized steady transport, constrained to weakly divergence-free fields."""
    A = assemble_linear_model(system, beta, sigma, gamma)
    rhs = assemble_rhs(system, f).coeffs
    return solve_saddle(SaddleSystem(system, A, assemble_divergence(system), rhs))


def linearization_field(state: TimeState, mode: str) -> Field:
    """Advecting field: ``u^n`` or the extrapolant ``2 u^n - u^{n-1}``."""
    if mode == "previous" or state.u_prevprev is None:
        return state.u_prev
    if mode == "extrapolated":
        return Field("velocity", 2.0 * state.u_prev.coeffs - state.u_prevprev.coeffs)
    raise ValueError(f"Unknown linearization: {mode}")


def bdf_step(state: TimeState, system: FESystem, params: FormParams, f: Optional[VectorFunction],
             dt: float, order: int = 2, linearization: str = "previous",
             operators: Optional[StaticOperators] = None) -> TimeState:
    """Advance one step with one linearized solve.

    Solves ``(alpha0/dt) M u + C(w) u + mu K u + S_smag(w) u + S0(w) u + BC u + S1 u
    - B^T p = f + history`` and ``-B u = 0``.
    """
    if not dt > 0.0:
        raise ValueError(f"Time step must be > 0, got {dt}")
    if order not in BDF_ALPHA0:
        raise ValueError(f"BDF order must be 1 or 2, got {order}")
    if order == 2 and state.u_prevprev is None:
        raise ValueError("BDF2 needs two history levels")
    ops = operators or StaticOperators.build(system, params)
    w = linearization_field(state, linearization)
    t_new = (state.step_index + 1) * dt

    A = (BDF_ALPHA0[order] / dt) * ops.mass + ops.viscous + ops.boundary + assemble_convection(system, w)
    if params.gamma > 0.0:
        A = A + assemble_smagorinsky(system, w, params.gamma)
    if params.gamma0 > 0.0:
        A = A + assemble_jump_penalty(system, w, params.gamma0, params.U)

    if order == 1:
        history = state.u_prev.coeffs
    else:
        history = 2.0 * state.u_prev.coeffs - 0.5 * state.u_prevprev.coeffs
    rhs = ops.mass @ history / dt
    if f is not None:
        rhs = rhs + assemble_rhs(system, f, t_new).coeffs

    u, p = solve_saddle(SaddleSystem(system, A.tocsr(), ops.divergence, rhs, t=t_new))
    if not (np.all(np.isfinite(u.coeffs)) and np.all(np.isfinite(p.coeffs))):
        raise InstabilityError("non-finite velocity or pressure", t_new, state.step_index + 1)
    return TimeState(t=t_new, u_prev=u, p_prev=p, step_index=state.step_index + 1,
                     u_prevprev=state.u_prev)


OutputCallback = Callable[[ReportRecord, FESystem, Field, Field], None]


def _record(step, t, system, u, w_stab, params, ops, flag=Flag.OK) -> ReportRecord:
    weak, pointwise = divergence_norms(system, u, ops.divergence)
    return ReportRecord(step=step, t=t, energy=kinetic_energy(system, u, ops.mass),
                        max_vorticity=max_vorticity(system, u), div_weak=weak,
                        div_pointwise=pointwise,
                        stab_seminorm=stab_seminorm(system, u, w_stab, params), flag=flag)


def initial_state(config: SimConfig, system: FESystem, mu: float) -> Field:
    case = get_case(config.case)
    if case.stokes_initial:
        logger.info("computing the steady Stokes initial state")
        u0, _ = solve_stokes(system, mu if mu > 0.0 else 1.0)
        return u0
    if case.initial is None:
        return system.zero_velocity()
    return l2_project(system, case.initial, 0.0)


def run_simulation(config: SimConfig, on_output: Optional[OutputCallback] = None) -> RunReport:
    """BDF1 first step, BDF2 afterwards; instability is recorded, not raised."""
    started = time.perf_counter()
    case = get_case(config.case)
    if case.kind != "navier_stokes":
        raise ValueError(f"Case {case.id} is a steady linear problem; use the convergence study")
    mesh = case.build_mesh(config)
    system = build_system(mesh, case.boundary_conditions(config))
    mu = case.viscosity(config, mesh)
    params = FormParams(mu=mu, gamma=config.gamma, gamma0=config.gamma0,
                        gamma1=config.gamma1, U=config.U)
    f = case.forcing_for(mu)
    ops = StaticOperators.build(system, params)
    logger.info("run %s: %d free velocity DOFs, mu=%g gamma=%g dt=%g steps=%d",
                case.id, system.n_free_velocity, mu, config.gamma, config.dt, config.n_steps)

    u0 = initial_state(config, system, mu)
    state = TimeState(t=0.0, u_prev=u0, p_prev=Field("pressure", np.zeros(system.n_pressure)), step_index=0)
    report = RunReport(case=case.id, mu=mu)
    first = _record(0, 0.0, system, u0, u0, params, ops)
    report.add(first)
    report.step_energies.append(first.energy)
    if on_output is not None:
        on_output(first, system, state.u_prev, state.p_prev)
    threshold = config.energy_abort_factor * max(first.energy, np.finfo(float).tiny)
    stab_prev = first.stab_seminorm ** 2

    for step in range(1, config.n_steps + 1):
        order = 1 if step == 1 else 2
        try:
            state = bdf_step(state, system, params, f, config.dt, order, config.linearization, ops)
            energy = kinetic_energy(system, state.u_prev, ops.mass)
            if energy > threshold:
                raise InstabilityError(f"kinetic energy {energy:.3e} exceeds {config.energy_abort_factor:g} "
                                       f"times the initial energy", state.t, step)
        except InstabilityError as exc:
            logger.error("%s", exc)
            report.abort(exc.reason, exc.t, exc.step)
            break
        except SolverError as exc:
            # Message carries the residual or the suspected cause.
            logger.error("linear solve failed at step %d: %s", step, exc)
            report.abort(f"linear solve failed: {exc}", step * config.dt, step)
            break
        report.step_energies.append(energy)
        stab = stab_seminorm(system, state.u_prev, state.u_prev, params) ** 2
        report.stab_integral += 0.5 * config.dt * (stab_prev + stab)
        stab_prev = stab
        logger.debug("step %d t=%.6g energy=%.17g", step, state.t, energy)
        if step % config.output_every == 0 or step == config.n_steps:
            record = _record(step, state.t, system, state.u_prev, state.u_prev, params, ops)
            report.add(record)
            if on_output is not None:
                on_output(record, system, state.u_prev, state.p_prev)

    report.steps = state.step_index
    if case.is_verification and not report.aborted:
        report.final_errors = error_norms(system, state.u_prev, case.exact, state.t, case.exact_gradient)
    report.h = mesh.h
    report.wall_time = time.perf_counter() - started
    logger.info("run %s finished: %d steps, flag %s, %.2fs", case.id, report.steps,
                report.flag.value, report.wall_time)
    return report


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    h: float
    l2: float
    h1: float


@dataclass(frozen=True)
class ConvergenceStudy:
    case: str
    rows: tuple
    slope_l2: float
    slope_h1: float

    def table(self) -> str:
        lines = [f"{'n':>6} {'h':>12} {'L2 error':>14} {'H1 error':>14}"]
        lines += [f"{r.n:>6d} {r.h:>12.5e} {r.l2:>14.6e} {r.h1:>14.6e}" for r in self.rows]
        lines.append(f"slope L2 = {self.slope_l2:.3f}, slope H1 = {self.slope_h1:.3f}")
        return "\n".join(lines)


def _linear_level(config: SimConfig) -> ConvergenceRow:
    case = get_case(config.case)
    system = build_system(case.build_mesh(config), case.boundary_conditions(config))
    beta = interpolate(system, case.beta)
    u, _ = solve_linear_model(system, beta, config.sigma, config.gamma, case.forcing_for(config.sigma))
    l2, h1 = error_norms(system, u, case.exact, 0.0, case.exact_gradient)
    return ConvergenceRow(config.nx, system.mesh.h, l2, h1)


def _unsteady_level(config: SimConfig) -> ConvergenceRow:
    report = run_simulation(config)
    if report.aborted:
        raise InstabilityError(report.abort_reason, report.records[-1].t, report.steps)
    l2, h1 = report.final_errors
    return ConvergenceRow(config.nx, report.h, l2, h1)


def check_manufactured(case, config: SimConfig, coefficient: float) -> float:
    """Worst finite-difference PDE residual of the case's (exact, forcing) pair at seeded samples.

    Raises ``ValueError`` above ``PDE_RESIDUAL_TOL``.
    """
    rng = np.random.default_rng(config.seed)
    x0, x1, y0, y1 = case.domain
    points = np.column_stack([rng.uniform(x0, x1, PDE_RESIDUAL_SAMPLES),
                              rng.uniform(y0, y1, PDE_RESIDUAL_SAMPLES)])
    times = rng.uniform(0.0, max(config.t_end, config.dt), PDE_RESIDUAL_SAMPLES) \
        if case.kind == "navier_stokes" else np.zeros(PDE_RESIDUAL_SAMPLES)
    worst = float(np.max(case.pde_residual(points, times, coefficient)))
    if worst > PDE_RESIDUAL_TOL:
        raise ValueError(f"Case {case.id}: forcing does not match the exact solution "
                         f"(PDE residual {worst:.3e} at coefficient {coefficient:g})")
    logger.debug("case %s: PDE residual %.3e at coefficient %g", case.id, worst, coefficient)
    return worst


def convergence_study(case_id: str, levels: int = 4, base_n: int = 8,
                      **overrides) -> ConvergenceStudy:
    """Errors on Union Jack levels ``base_n * 2^k``; unsteady runs halve dt with h."""
    case = get_case(case_id)
    if not case.is_verification:
        raise ValueError(f"Case {case.id} has no exact solution")
    if levels < 2:
        raise ValueError(f"A convergence study needs at least 2 levels, got {levels}")
    base = config_for_case(case.id, **overrides)
    configs = [config_for_case(case.id, **{**overrides, "nx": base_n * 2 ** k, "ny": base_n * 2 ** k,
                                           "dt": base.dt / 2 ** k}) for k in range(levels)]
    for level in configs:
        coefficient = level.sigma if case.kind == "linear" else case.viscosity(level, case.build_mesh(level))
        check_manufactured(case, level, coefficient)
    rows = []
    for k, level in enumerate(configs):
        row = _linear_level(level) if case.kind == "linear" else _unsteady_level(level)
        logger.info("level %d: n=%d h=%.4g l2=%.4e h1=%.4e", k, row.n, row.h, row.l2, row.h1)
        rows.append(row)
    hs = [r.h for r in rows]
    return ConvergenceStudy(case=case.id, rows=tuple(rows),
                            slope_l2=convergence_slope(hs, [r.l2 for r in rows]),
                            slope_h1=convergence_slope(hs, [r.h1 for r in rows]))
