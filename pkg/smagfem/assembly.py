"""Bilinear and linear forms of the stabilized scheme.

Every operator is returned as a ``scipy.sparse.csr_matrix`` over the full
(node-merged) velocity DOF set, DOFs interleaved as ``2 * node + component``.
Triplets are generated chunk by chunk in fixed element/face order and
concatenated in chunk order, so serial and threaded assembly give
bit-identical matrices.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .spaces import DEGREE4, EDGE_POINTS, EDGE_WEIGHTS, Field, FESystem, VectorFunction, _coeffs
from .tensors import frobenius_norms

logger = logging.getLogger(__name__)

SparseOperator = sp.csr_matrix

# Elements (or faces) per assembly chunk.
CHUNK_SIZE = 4096
# Floor for the face-mean of |beta| in the linear model jump weight.
BETA_FLOOR = 1e-12

_assembly_threads = 1


def set_assembly_threads(n: int) -> None:
    """Number of worker threads used for chunked assembly (1 = serial)."""
    global _assembly_threads
    if int(n) < 1:
        raise ValueError(f"Assembly thread count must be >= 1, got {n}")
    _assembly_threads = int(n)


def get_assembly_threads() -> int:
    return _assembly_threads


@dataclass(frozen=True)
class FormParams:
    """Physical and stabilization parameters of the momentum operator."""

    mu: float = 0.0
    gamma: float = 0.0
    gamma0: float = 0.0
    gamma1: float = 0.0
    U: float = 1.0

    def __post_init__(self):
        for name in ("mu", "gamma", "gamma0", "gamma1", "U"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"Form parameter {name} must be finite and >= 0, got {value}")


def _gather(n_items: int, kernel: Callable[[np.ndarray], tuple]) -> tuple:
    chunks = [np.arange(s, min(s + CHUNK_SIZE, n_items)) for s in range(0, n_items, CHUNK_SIZE)]
    if _assembly_threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=_assembly_threads) as pool:
            parts = list(pool.map(kernel, chunks))
    else:
        parts = [kernel(c) for c in chunks]
    if not parts:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0)
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def _to_csr(triplets: tuple, shape: tuple) -> sp.csr_matrix:
    rows, cols, vals = triplets
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def _scatter(row_dofs: np.ndarray, col_dofs: np.ndarray, local: np.ndarray) -> tuple:
    rows = np.broadcast_to(row_dofs[:, :, None], local.shape)
    cols = np.broadcast_to(col_dofs[:, None, :], local.shape)
    return rows.ravel(), cols.ravel(), local.ravel()


def _vector_block(local: np.ndarray) -> np.ndarray:
    """Scalar (k, n, n) element matrices -> componentwise (k, 2n, 2n) blocks."""
    k, n, _ = local.shape
    out = np.zeros((k, 2 * n, 2 * n))
    out[:, 0::2, 0::2] = local
    out[:, 1::2, 1::2] = local
    return out


def _element_operator(system: FESystem, local_fn: Callable[[np.ndarray], np.ndarray]) -> sp.csr_matrix:
    dofs = system.element_dofs

    def kernel(idx):
        return _scatter(dofs[idx], dofs[idx], local_fn(idx))

    n = system.n_velocity
    return _to_csr(_gather(system.mesh.n_triangles, kernel), (n, n))


def _zero(system: FESystem) -> sp.csr_matrix:
    return sp.csr_matrix((system.n_velocity, system.n_velocity))


_REF_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _scalar_mass(areas: np.ndarray) -> np.ndarray:
    return areas[:, None, None] * _REF_MASS


def _scalar_stiffness(system: FESystem, idx: np.ndarray) -> np.ndarray:
    G = system.grads[idx]
    return system.areas[idx, None, None] * np.einsum("tid,tjd->tij", G, G)


def assemble_mass(system: FESystem) -> SparseOperator:
    """Velocity mass matrix; local block (|T|/12) [[2,1,1],[1,2,1],[1,1,2]] per component."""
    return _element_operator(system, lambda idx: _vector_block(_scalar_mass(system.areas[idx])))


def assemble_viscous(system: FESystem, mu: float) -> SparseOperator:
    """``mu * (grad u, grad v)``."""
    if mu < 0.0:
        raise ValueError(f"Viscosity must be >= 0, got {mu}")
    if mu == 0.0:
        return _zero(system)
    return _element_operator(system, lambda idx: mu * _vector_block(_scalar_stiffness(system, idx)))


def assemble_convection(system: FESystem, w: Union[Field, np.ndarray]) -> SparseOperator:
    """``C(w)[i, j] = integral of ((w . grad) phi_j) . phi_i``, non-skew form.

    w is affine on each element, so the product of w with a test function is
    integrated exactly with the local mass matrix.
    """
    w_nodal = _coeffs(w).reshape(-1, 2)[system.element_nodes]

    def local(idx):
        Mw = np.einsum("tik,tkd->tid", _scalar_mass(system.areas[idx]), w_nodal[idx])
        return _vector_block(np.einsum("tid,tjd->tij", Mw, system.grads[idx]))

    return _element_operator(system, local)


def smagorinsky_viscosity(system: FESystem, w: Union[Field, np.ndarray], gamma: float) -> np.ndarray:
    """Elementwise eddy viscosity ``gamma * |T| * |grad w|_F``."""
    return gamma * system.areas * frobenius_norms(system.gradients(w))


def assemble_smagorinsky(system: FESystem, w: Union[Field, np.ndarray], gamma: float) -> SparseOperator:
    """Stiffness weighted by the frozen eddy viscosity of ``w``."""
    if gamma < 0.0:
        raise ValueError(f"Smagorinsky constant must be >= 0, got {gamma}")
    if gamma == 0.0:
        return _zero(system)
    nu = smagorinsky_viscosity(system, w, gamma)
    return _element_operator(
        system, lambda idx: nu[idx, None, None] * _vector_block(_scalar_stiffness(system, idx)))


def _jump_faces(system: FESystem):
    """Faces seen from two triangles: interior faces plus periodic pairs.

    Returns left and right triangles, endpoint nodes, unit normals (out of
    the left triangle) and lengths.
    """
    mesh = system.mesh
    interior = mesh.interior_faces
    slave, master = mesh.periodic_faces[:, 0], mesh.periodic_faces[:, 1]
    faces = np.concatenate([interior, slave])
    left = mesh.face_left[faces]
    right = np.concatenate([mesh.face_right[interior], mesh.face_left[master]])
    nodes = system.node_of_vertex[mesh.faces[faces]]
    return left, right, nodes, mesh.face_normals[faces], mesh.h_per_face[faces]


def _assemble_streamline_jump(system: FESystem, w: Union[Field, np.ndarray],
                              weight: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> sp.csr_matrix:
    """Sum over faces of ``weight * integral [[t . (w . grad) u]] [[t . (w . grad) v]]``.

    ``weight(h_F, mean_F |w|)`` returns one coefficient per face.
    """
    left, right, nodes, normals, lengths = _jump_faces(system)
    w_nodal = _coeffs(w).reshape(-1, 2)
    dofs = system.element_dofs
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    s = EDGE_POINTS

    def kernel(idx):
        wa, wb = w_nodal[nodes[idx, 0]], w_nodal[nodes[idx, 1]]
        wq = (1.0 - s)[None, :, None] * wa[:, None, :] + s[None, :, None] * wb[:, None, :]
        mean_w = np.einsum("q,fq->f", EDGE_WEIGHTS, np.linalg.norm(wq, axis=2))
        coef = weight(lengths[idx], mean_w) * lengths[idx]
        a_left = np.einsum("fqd,fjd->fqj", wq, system.grads[left[idx]])
        a_right = np.einsum("fqd,fjd->fqj", wq, system.grads[right[idx]])
        t = tangents[idx][:, None, None, :]
        J = np.concatenate([(a_left[..., None] * t).reshape(len(idx), len(s), 6),
                            -(a_right[..., None] * t).reshape(len(idx), len(s), 6)], axis=2)
        local = coef[:, None, None] * np.einsum("q,fqa,fqb->fab", EDGE_WEIGHTS, J, J)
        face_dofs = np.concatenate([dofs[left[idx]], dofs[right[idx]]], axis=1)
        return _scatter(face_dofs, face_dofs, local)

    n = system.n_velocity
    return _to_csr(_gather(len(left), kernel), (n, n))


def assemble_jump_penalty(system: FESystem, w: Union[Field, np.ndarray], gamma0: float,
                          U: float) -> SparseOperator:
    """Face penalty s0 with weight ``gamma0 * h_F^2 / (mean_F |w| + U)``."""
    if gamma0 < 0.0:
        raise ValueError(f"gamma0 must be >= 0, got {gamma0}")
    if gamma0 == 0.0:
        return _zero(system)
    if U <= 0.0:
        raise ValueError(f"Characteristic velocity U must be > 0 when gamma0 > 0, got {U}")
    return _assemble_streamline_jump(system, w, lambda h, mean_w: gamma0 * h ** 2 / (mean_w + U))


def _boundary_face_data(system: FESystem):
    mesh = system.mesh
    faces = system.normal_only_faces
    tri = mesh.face_left[faces]
    normals = mesh.face_normals[faces]
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    on_face = (mesh.triangles[tri][:, :, None] == mesh.faces[faces][:, None, :]).any(axis=2)
    return faces, tri, normals, tangents, on_face.astype(float), mesh.h_per_face[faces]


def assemble_nitsche(system: FESystem, mu: float, gamma1: float,
                     U: float) -> tuple[SparseOperator, SparseOperator]:
    """Weak tangential condition on normal-only boundaries.

    Returns ``(BC_sym, S1)`` with
    ``BC_sym(u, v) = -(mu grad u n, t v) - (mu grad v n, t u)`` on the boundary
    and ``S1(u, v) = gamma1 max(mu / h_F, U) (t u, t v)``, where ``t`` is the
    projection onto the tangent line.
    """
    if mu < 0.0 or gamma1 < 0.0 or U < 0.0:
        raise ValueError(f"Nitsche parameters must be >= 0, got mu={mu}, gamma1={gamma1}, U={U}")
    faces, tri, normals, tangents, on_face, lengths = _boundary_face_data(system)
    n = system.n_velocity
    if len(faces) == 0:
        return _zero(system), _zero(system)
    dofs = system.element_dofs[tri]

    BC = _zero(system)
    if mu > 0.0:
        gn = np.einsum("fjd,fd->fj", system.grads[tri], normals)
        m = on_face * (lengths / 2.0)[:, None]
        X = -mu * np.einsum("fi,fa,fb,fj->fiajb", m, tangents, tangents, gn).reshape(-1, 6, 6)
        BC = _to_csr(_scatter(dofs, dofs, X + X.transpose(0, 2, 1)), (n, n))

    S1 = _zero(system)
    if gamma1 > 0.0:
        coef = gamma1 * np.maximum(mu / lengths, U)
        Mf = (lengths / 6.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3)) \
            * on_face[:, :, None] * on_face[:, None, :]
        local = coef[:, None, None] * np.einsum("fij,fa,fb->fiajb", Mf, tangents, tangents).reshape(-1, 6, 6)
        S1 = _to_csr(_scatter(dofs, dofs, local), (n, n))
    return BC, S1


def assemble_divergence(system: FESystem) -> SparseOperator:
    """``B[q, (j, c)] = integral over macro q of d_c phi_j``."""
    dofs = system.element_dofs
    macro = system.mesh.macro_parent

    def kernel(idx):
        vals = (system.areas[idx, None, None] * system.grads[idx]).reshape(len(idx), 6)
        rows = np.broadcast_to(macro[idx, None], vals.shape)
        return rows.ravel(), dofs[idx].ravel(), vals.ravel()

    return _to_csr(_gather(system.mesh.n_triangles, kernel), (system.n_pressure, system.n_velocity))


def assemble_pressure_mass(system: FESystem) -> SparseOperator:
    return sp.diags(system.mesh.macro_areas).tocsr()


def assemble_rhs(system: FESystem, f: VectorFunction, t: float = 0.0) -> Field:
    """Load vector ``(f, phi_i)`` by the 6-point rule.

    The vector covers every velocity DOF; strong boundary data enter the
    solve through the lifting, not through this vector.
    """
    rule = DEGREE4
    points = system.quadrature_points(rule)
    nt, nq, _ = points.shape
    values = np.asarray(f(points.reshape(-1, 2), t), dtype=float).reshape(nt, nq, 2)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"forcing is not finite at all quadrature points (t={t})")
    local = system.areas[:, None, None] * np.einsum("q,qi,tqc->tic", rule.weights, rule.points, values)
    b = np.bincount(system.element_dofs.ravel(), weights=local.reshape(nt, 6).ravel(),
                    minlength=system.n_velocity)
    return Field("velocity", b)


def assemble_linear_model(system: FESystem, beta: Union[Field, np.ndarray], sigma: float,
                          gamma: float = 1.0) -> SparseOperator:
    """Operator of the stabilized linear transport model.

    ``-(u, (beta . grad) v) + sigma (u, v) + gamma s(u, v)`` where ``s`` pairs
    the eddy-viscosity stiffness with ``delta^2 = |T|`` and the face jump
    term weighted by ``h_F^2 / mean_F |beta|``.
    """
    if not sigma > 0.0:
        raise ValueError(f"Reaction coefficient sigma must be > 0, got {sigma}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    op = sigma * assemble_mass(system) - assemble_convection(system, beta).T
    if gamma > 0.0:
        op = op + gamma * (assemble_smagorinsky(system, beta, 1.0)
                           + _assemble_streamline_jump(
                               system, beta, lambda h, mean_b: h ** 2 / np.maximum(mean_b, BETA_FLOOR)))
    logger.debug("linear model operator: sigma=%g gamma=%g nnz=%d", sigma, gamma, op.nnz)
    return op.tocsr()


def stabilization_operator(system: FESystem, w: Union[Field, np.ndarray],
                           params: FormParams) -> SparseOperator:
    """Smagorinsky stiffness at ``w`` plus s0 and s1; the seminorm's energy matrix."""
    _, S1 = assemble_nitsche(system, params.mu, params.gamma1, params.U)
    return (assemble_smagorinsky(system, w, params.gamma)
            + assemble_jump_penalty(system, w, params.gamma0, params.U) + S1).tocsr()
