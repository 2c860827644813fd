"""Randomized property suites for the tensor algebra and the assembled forms.

Each suite returns a :class:`PropertyResult`; ``run_all`` is what the
``validate`` command and the MCP ``validate_properties`` tool execute.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import assembly
from .assembly import (FormParams, assemble_convection, assemble_divergence, assemble_jump_penalty,
                       assemble_mass, assemble_nitsche, assemble_smagorinsky)
from .mesh import BoundaryTag, build_periodicity, build_union_jack
from .spaces import BoundaryCondition, Field, FESystem, build_system, interpolate
from .tensors import (AffineField3, continuity_gaps, curl_advection_identity_residual, matrix_cross,
                      monotonicity_residuals, p_flux, tolerance, tolerances)

logger = logging.getLogger(__name__)

PERIODIC_BOX = (0.0, 2.0 * np.pi, 0.0, 2.0 * np.pi)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    samples: int
    worst: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "samples": self.samples,
                "worst": self.worst, "detail": self.detail}


def _random_tensors(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, (n, d, d))


def monotonicity_suite(rng: np.random.Generator, n: int = 100_000) -> PropertyResult:
    """``4 (|X|X - |Z|Z):(X - Z) >= |X - Z|^3`` on random 2x2 and 3x3 pairs."""
    worst = np.inf
    for d in (2, 3):
        X, Z = _random_tensors(rng, n, d), _random_tensors(rng, n, d)
        worst = min(worst, float(np.min(monotonicity_residuals(X, Z) / tolerances(X, Z))))
    return PropertyResult("monotonicity", worst >= -1.0, 2 * n, worst, "min residual / tolerance")


def continuity_suite(rng: np.random.Generator, n: int = 100_000) -> PropertyResult:
    """``||X|X - |Z|Z| <= (|X| + |Z|) |X - Z|`` on random pairs."""
    worst = np.inf
    for d in (2, 3):
        X, Z = _random_tensors(rng, n, d), _random_tensors(rng, n, d)
        worst = min(worst, float(np.min(continuity_gaps(X, Z) / tolerances(X, Z))))
    return PropertyResult("continuity", worst >= -1.0, 2 * n, worst, "min gap / tolerance")


def homogeneity_suite(rng: np.random.Generator, n: int = 1000) -> PropertyResult:
    worst = 0.0
    for _ in range(n):
        G = rng.uniform(-1.0, 1.0, (2, 2))
        s = rng.uniform(0.0, 3.0)
        diff = np.max(np.abs(p_flux(s * G) - s * s * p_flux(G)))
        worst = max(worst, float(diff / tolerance(s * G)))
    return PropertyResult("p_flux homogeneity", worst <= 1.0, n, worst, "max error / tolerance")


def cross_antisymmetry_suite(rng: np.random.Generator, n: int = 1000) -> PropertyResult:
    worst = 0.0
    for _ in range(n):
        A = rng.uniform(-1.0, 1.0, (3, 3))
        worst = max(worst, float(np.max(np.abs(matrix_cross(A, A)))))
    return PropertyResult("matrix_cross(A, A) = 0", worst <= 1e-12, n, worst)


def curl_identity_suite(rng: np.random.Generator, n: int = 100) -> PropertyResult:
    worst = max(curl_advection_identity_residual(AffineField3.random(rng), AffineField3.random(rng))
                for _ in range(n))
    return PropertyResult("curl-advection identity", worst <= 1e-12, n, float(worst))


def periodic_system(n: int = 4) -> FESystem:
    return build_system(build_periodicity(build_union_jack(n, n, PERIODIC_BOX), ("x", "y")), {})


def slip_system(n: int = 4) -> FESystem:
    """Unit square, normal-only walls (exercises the Nitsche terms)."""
    return build_system(build_union_jack(n, n), {BoundaryTag.WALL: BoundaryCondition.normal_only()})


def pointwise_divergence_matrix(system: FESystem) -> sp.csr_matrix:
    """Rows: elementwise divergence as a function of the full velocity vector."""
    nt = system.mesh.n_triangles
    rows = np.repeat(np.arange(nt), 6)
    vals = system.grads.reshape(nt, 6)
    return sp.csr_matrix((vals.ravel(), (rows, system.element_dofs.ravel())),
                         shape=(nt, system.n_velocity))


def divergence_free_basis(system: FESystem) -> np.ndarray:
    """Orthonormal basis (free coordinates) of pointwise divergence-free fields."""
    D = (pointwise_divergence_matrix(system) @ system.prolongation).toarray()
    return scipy.linalg.null_space(D)


def random_stream_field(rng: np.random.Generator, modes: int = 3):
    """Periodic field ``curl psi`` for a random trigonometric stream function."""
    k = rng.integers(1, 3, size=(modes, 2))
    amp = rng.normal(size=modes)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=modes)

    def velocity(points, t=0.0):
        arg = points @ k.T + phase
        dpsi = amp * np.cos(arg)
        return np.column_stack([(dpsi * k[:, 1]).sum(axis=1), -(dpsi * k[:, 0]).sum(axis=1)])

    return velocity


def project_divergence_free(system: FESystem, basis: np.ndarray, u: Field) -> Field:
    x = system.restrict(u)
    return system.prolong(basis @ (basis.T @ x))


def skew_symmetry_suite(rng: np.random.Generator, n: int = 100,
                        system: Optional[FESystem] = None) -> PropertyResult:
    """``w^T C(w) w = 0`` for pointwise divergence-free periodic ``w``."""
    system = system or periodic_system()
    basis = divergence_free_basis(system)
    M = assemble_mass(system)
    worst = 0.0
    for _ in range(n):
        w = project_divergence_free(system, basis, interpolate(system, random_stream_field(rng)))
        c = w.coeffs
        value = abs(float(c @ (assemble_convection(system, w) @ c)))
        l2 = np.sqrt(c @ (M @ c))
        grad = np.sqrt(np.sum(system.areas * np.sum(system.gradients(w) ** 2, axis=(1, 2))))
        # Gradient floored at 1e-3 |w| for near-constant fields.
        scale = l2 * max(grad, 1e-3 * l2) * np.max(np.abs(c))
        worst = max(worst, value / max(scale, np.finfo(float).tiny))
    return PropertyResult("convection skew symmetry", worst <= 1e-10, n, worst,
                          f"{basis.shape[1]} divergence-free modes")


def spsd_suite(rng: np.random.Generator, n: int = 1000) -> PropertyResult:
    """Random quadratic forms of the stabilization operators are >= 0."""
    worst = np.inf
    count = 0
    for system in (periodic_system(), slip_system()):
        w = Field("velocity", rng.normal(size=system.n_velocity))
        _, S1 = assemble_nitsche(system, 0.1, 1.0, 1.0)
        for S in (assemble_smagorinsky(system, w, 0.5), assemble_jump_penalty(system, w, 0.5, 1.0), S1):
            V = rng.normal(size=(system.n_velocity, n))
            energies = np.einsum("in,in->n", V, S @ V)
            scale = np.einsum("in,in->n", V, V) * max(abs(S).max(), np.finfo(float).tiny)
            worst = min(worst, float(np.min(energies / scale)))
            count += n
    return PropertyResult("stabilization operators SPSD", worst >= -1e-12, count, worst,
                          "min v^T S v / (|v|^2 max|S|)")


def rotation_invariance_suite(rng: np.random.Generator, n: int = 10) -> PropertyResult:
    """The eddy-viscosity operator sees ``w`` only through ``|grad w|_F``."""
    system = periodic_system()
    worst = 0.0
    for _ in range(n):
        w = rng.normal(size=(system.n_nodes, 2))
        angle = rng.uniform(0.0, 2.0 * np.pi)
        R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        moved = w @ R.T + rng.normal(size=2)
        S = assemble_smagorinsky(system, w.ravel(), 1.0)
        S_moved = assemble_smagorinsky(system, moved.ravel(), 1.0)
        worst = max(worst, float(abs(S - S_moved).max() / abs(S).max()))
    return PropertyResult("Smagorinsky rotation invariance", worst <= 1e-12, n, worst)


def determinism_suite(rng: np.random.Generator) -> PropertyResult:
    """Repeated and threaded assembly give bit-identical matrices."""
    system = periodic_system(8)
    w = Field("velocity", rng.normal(size=system.n_velocity))
    params = FormParams(mu=0.1, gamma=0.5, gamma0=0.5, U=1.0)
    saved_chunk, saved_threads = assembly.CHUNK_SIZE, assembly.get_assembly_threads()

    def build():
        return [assemble_convection(system, w), assemble_smagorinsky(system, w, params.gamma),
                assemble_jump_penalty(system, w, params.gamma0, params.U), assemble_divergence(system)]

    try:
        serial = build()
        again = build()
        assembly.CHUNK_SIZE = 16
        assembly.set_assembly_threads(4)
        threaded = build()
    finally:
        assembly.CHUNK_SIZE = saved_chunk
        assembly.set_assembly_threads(saved_threads)

    def same(a, b):
        return (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
                and np.array_equal(a.data, b.data))

    repeat_ok = all(same(a, b) for a, b in zip(serial, again))
    # Chunking changes the work split, not the triplet order.
    thread_ok = all(same(a, b) for a, b in zip(serial, threaded))
    return PropertyResult("deterministic assembly", repeat_ok and thread_ok, 3, 0.0,
                          f"repeat={repeat_ok} threaded={thread_ok}")


def run_all(seed: int = 0, quick: bool = False) -> list[PropertyResult]:
    rng = np.random.default_rng(seed)
    scale = 10 if quick else 1
    results = [
        monotonicity_suite(rng, 100_000 // scale),
        continuity_suite(rng, 100_000 // scale),
        homogeneity_suite(rng, 1000 // scale),
        cross_antisymmetry_suite(rng, 1000 // scale),
        curl_identity_suite(rng, 100 // scale),
        skew_symmetry_suite(rng, 100 // scale),
        spsd_suite(rng, 1000 // scale),
        rotation_invariance_suite(rng),
        determinism_suite(rng),
    ]
    for r in results:
        log = logger.info if r.passed else logger.error
        log("property %-34s %s (worst %.3e over %d samples)", r.name, "ok" if r.passed else "FAILED",
            r.worst, r.samples)
    return results
