"""Velocity/pressure spaces of the macro element pair.

Velocity: continuous piecewise affine vectors on the refined mesh, DOFs
interleaved as ``2 * node + component``. Pressure: one constant per macro
cell. Periodic slave vertices share their master's node; strong and
normal-only constraints are applied through a prolongation ``P`` from the
free unknowns to the full velocity vector, ``u = P x + g(t)``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .mesh import BoundaryTag, Mesh

logger = logging.getLogger(__name__)

VectorFunction = Callable[[np.ndarray, float], np.ndarray]

# Two unit normals closer than this (1 - |n1.n2|) are treated as one direction.
CORNER_TOL = 1e-8


class BCMode(str, Enum):
    STRONG_DIRICHLET = "strong_dirichlet"
    NORMAL_ONLY = "normal_only"
    NEUMANN = "neumann"
    PERIODIC = "periodic"


# Higher value wins at vertices shared by boundaries with different modes.
MODE_PRIORITY = {BCMode.NEUMANN: 0, BCMode.NORMAL_ONLY: 1, BCMode.STRONG_DIRICHLET: 2}


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary mode plus the prescribed value for strong Dirichlet data."""

    mode: BCMode
    value: Optional[VectorFunction] = None

    @classmethod
    def strong(cls, value: Optional[VectorFunction] = None) -> "BoundaryCondition":
        return cls(BCMode.STRONG_DIRICHLET, value)

    @classmethod
    def normal_only(cls) -> "BoundaryCondition":
        return cls(BCMode.NORMAL_ONLY)

    @classmethod
    def neumann(cls) -> "BoundaryCondition":
        return cls(BCMode.NEUMANN)

    @classmethod
    def periodic(cls) -> "BoundaryCondition":
        return cls(BCMode.PERIODIC)


class ConstraintKind(str, Enum):
    STRONG_ZERO = "strong_zero"
    STRONG_VALUE = "strong_value"
    NORMAL_ZERO = "normal_zero"
    PERIODIC_SLAVE = "periodic_slave"


@dataclass(frozen=True)
class Constraint:
    dof: int
    kind: ConstraintKind
    master: Optional[int] = None
    tag: Optional[BoundaryTag] = None


@dataclass(frozen=True)
class Quadrature:
    """Rule on the reference triangle: barycentric points, weights summing to 1."""

    name: str
    points: np.ndarray
    weights: np.ndarray


def _symmetric_rule(name, orbits):
    points, weights = [], []
    for a, w in orbits:
        b = 1.0 - 2.0 * a
        for p in ((a, a, b), (a, b, a), (b, a, a)):
            points.append(p)
            weights.append(w)
    return Quadrature(name, np.array(points), np.array(weights))


# 3-point rule, exact for degree 2.
DEGREE2 = _symmetric_rule("degree2", [(1.0 / 6.0, 1.0 / 3.0)])
# 6-point Dunavant rule, exact for degree 4.
DEGREE4 = _symmetric_rule("degree4", [
    (0.445948490915965, 0.223381589678011),
    (0.091576213509771, 0.109951743655322),
])
# 2-point Gauss-Legendre on [0, 1], exact for degree 3 along faces.
EDGE_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_WEIGHTS = np.array([0.5, 0.5])


@dataclass(frozen=True, eq=False)
class Field:
    """Coefficient vector over a velocity, pressure or element-scalar space."""

    space: str
    coeffs: np.ndarray

    def __post_init__(self):
        if self.space not in ("velocity", "pressure", "element"):
            raise ValueError(f"Unknown field space: {self.space}")
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    @property
    def nodal(self) -> np.ndarray:
        """Velocity coefficients as an (n_nodes, 2) view."""
        return self.coeffs.reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.coeffs)


def _coeffs(u: Union[Field, np.ndarray]) -> np.ndarray:
    return u.coeffs if isinstance(u, Field) else np.asarray(u, dtype=float)


@dataclass(frozen=True, eq=False)
class FESystem:
    """DOF maps, constraints and element geometry for one mesh."""

    mesh: Mesh
    node_of_vertex: np.ndarray
    node_coords: np.ndarray
    bc: Mapping[BoundaryTag, BoundaryCondition]
    constraints: tuple
    prolongation: sp.csr_matrix
    strong_dofs: np.ndarray
    strong_tags: tuple
    strong_owner: np.ndarray
    normal_only_faces: np.ndarray
    pressure_pinned: Optional[int]
    grads: np.ndarray
    areas: np.ndarray
    quadrature: Mapping[str, str] = field(default_factory=lambda: {
        "bilinear": DEGREE2.name, "nonlinear": DEGREE4.name, "error": DEGREE4.name})

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_free_velocity(self) -> int:
        return self.prolongation.shape[1]

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_macro

    @property
    def n_free_pressure(self) -> int:
        return self.n_pressure - (self.pressure_pinned is not None)

    @property
    def element_nodes(self) -> np.ndarray:
        """Node indices of every triangle, shape (n_triangles, 3)."""
        return self.node_of_vertex[self.mesh.triangles]

    @property
    def element_dofs(self) -> np.ndarray:
        """Velocity DOFs of every triangle, shape (n_triangles, 6), node-major."""
        nodes = self.element_nodes
        return np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 6)

    def velocity_dofs(self, vertex: int) -> tuple[int, int]:
        n = int(self.node_of_vertex[vertex])
        return 2 * n, 2 * n + 1

    @property
    def pressure_prolongation(self) -> sp.csr_matrix:
        keep = np.array([q for q in range(self.n_pressure) if q != self.pressure_pinned], dtype=int)
        return sp.csr_matrix((np.ones(len(keep)), (keep, np.arange(len(keep)))),
                             shape=(self.n_pressure, len(keep)))

    def lifting(self, t: float = 0.0) -> np.ndarray:
        """Full velocity vector holding the strong boundary values at time ``t``."""
        g = np.zeros(self.n_velocity)
        for tag in self.strong_tags:
            value = self.bc[tag].value
            if value is None:
                continue
            dofs = self.strong_dofs[self.strong_owner == self.strong_tags.index(tag)]
            nodes = dofs[::2] // 2
            g[dofs] = np.asarray(value(self.node_coords[nodes], t), dtype=float).reshape(-1)
        return g

    def restrict(self, u: Union[Field, np.ndarray], t: float = 0.0) -> np.ndarray:
        """Free coefficients of a constrained velocity vector."""
        return self.prolongation.T @ (_coeffs(u) - self.lifting(t))

    def prolong(self, x: np.ndarray, t: float = 0.0) -> Field:
        return Field("velocity", self.prolongation @ x + self.lifting(t))

    def apply_constraints(self, u: Union[Field, np.ndarray], t: float = 0.0) -> Field:
        """Project onto the constrained set: strong values, tangential-only traces."""
        return self.prolong(self.restrict(u, t), t)

    def zero_velocity(self) -> Field:
        return Field("velocity", np.zeros(self.n_velocity))

    def quadrature_points(self, rule: Quadrature) -> np.ndarray:
        """Physical quadrature points, shape (n_triangles, n_points, 2)."""
        p = self.mesh.vertices[self.mesh.triangles]
        return np.einsum("qk,tkd->tqd", rule.points, p)

    def evaluate(self, u: Union[Field, np.ndarray], rule: Quadrature) -> np.ndarray:
        """Velocity values at quadrature points, shape (n_triangles, n_points, 2)."""
        nodal = _coeffs(u).reshape(-1, 2)[self.element_nodes]
        return np.einsum("qk,tkc->tqc", rule.points, nodal)

    def gradients(self, u: Union[Field, np.ndarray]) -> np.ndarray:
        """Elementwise velocity gradients G[t, c, d] = d_d u_c."""
        nodal = _coeffs(u).reshape(-1, 2)[self.element_nodes]
        return np.einsum("tkc,tkd->tcd", nodal, self.grads)


def element_geometry(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients (n_triangles, 3, 2) and areas."""
    p = mesh.vertices[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    g0 = -(g1 + g2)
    return np.stack([g0, g1, g2], axis=1), 0.5 * det


def _resolve_modes(mesh: Mesh, bc_modes: Mapping) -> dict[BoundaryTag, BoundaryCondition]:
    resolved = {}
    for tag, cond in bc_modes.items():
        tag = BoundaryTag.parse(tag) if isinstance(tag, str) else BoundaryTag(tag)
        if isinstance(cond, (str, BCMode)):
            cond = BoundaryCondition(BCMode(cond))
        resolved[tag] = cond
    present = set(mesh.boundary_tags.values())
    for tag in present:
        periodic_tag = tag in (BoundaryTag.PERIODIC_X, BoundaryTag.PERIODIC_Y)
        if periodic_tag:
            if tag in resolved and resolved[tag].mode != BCMode.PERIODIC:
                raise ValueError(f"Boundary {tag.value} is paired periodically; mode must be periodic")
            resolved[tag] = BoundaryCondition.periodic()
        elif tag not in resolved:
            raise ValueError(f"No boundary condition given for boundary '{tag.value}'")
        elif resolved[tag].mode == BCMode.PERIODIC:
            raise ValueError(f"Boundary {tag.value} is not paired; call build_periodicity first")
    return resolved


def build_system(mesh: Mesh, bc_modes: Mapping) -> FESystem:
    """Build DOF maps and constraints for ``mesh`` under per-tag boundary modes.

    At vertices shared by boundaries with different modes the priority is
    strong_dirichlet > normal_only > neumann.
    """
    bc = _resolve_modes(mesh, bc_modes)
    masters, node_of_vertex = np.unique(mesh.periodic_master, return_inverse=True)
    node_of_vertex = node_of_vertex.reshape(-1)
    node_coords = mesh.vertices[masters]
    n_nodes = len(masters)

    # Per node: strongest mode, strong tag and normal-only normals.
    mode_of_node: dict[int, BCMode] = {}
    tag_of_node: dict[int, BoundaryTag] = {}
    normals_of_node: dict[int, list] = {}
    normals = mesh.face_normals
    tag_order = list(BoundaryTag)
    normal_faces = []
    for f in sorted(mesh.boundary_tags):
        tag = mesh.boundary_tags[f]
        mode = bc[tag].mode
        if mode == BCMode.PERIODIC:
            continue
        if mode == BCMode.NORMAL_ONLY:
            normal_faces.append(f)
        for v in mesh.faces[f]:
            node = int(node_of_vertex[v])
            if mode == BCMode.NORMAL_ONLY:
                normals_of_node.setdefault(node, []).append(normals[f])
            current = mode_of_node.get(node)
            if current is None or MODE_PRIORITY[mode] > MODE_PRIORITY[current]:
                if current is not None:
                    logger.warning("boundary modes meet at node %d %s: %s overrides %s",
                                   node, tuple(node_coords[node]), mode.value, current.value)
                mode_of_node[node] = mode
                tag_of_node[node] = tag
            elif mode == current == BCMode.STRONG_DIRICHLET and \
                    tag_order.index(tag) < tag_order.index(tag_of_node[node]):
                tag_of_node[node] = tag

    constraints = []
    rows, cols, vals = [], [], []
    strong_dofs, strong_owner = [], []
    strong_tags = tuple(sorted({tag_of_node[n] for n, m in mode_of_node.items()
                                if m == BCMode.STRONG_DIRICHLET}, key=tag_order.index))
    col = 0
    for node in range(n_nodes):
        mode = mode_of_node.get(node)
        dofs = (2 * node, 2 * node + 1)
        if mode == BCMode.STRONG_DIRICHLET:
            tag = tag_of_node[node]
            kind = ConstraintKind.STRONG_ZERO if bc[tag].value is None else ConstraintKind.STRONG_VALUE
            for d in dofs:
                constraints.append(Constraint(d, kind, tag=tag))
                strong_dofs.append(d)
                strong_owner.append(strong_tags.index(tag))
            continue
        if mode == BCMode.NORMAL_ONLY:
            ns = np.array(normals_of_node[node])
            n0 = ns[0]
            if np.any(1.0 - np.abs(ns @ n0) > CORNER_TOL):
                # Corner between differently oriented slip boundaries.
                for d in dofs:
                    constraints.append(Constraint(d, ConstraintKind.STRONG_ZERO, tag=tag_of_node[node]))
                    strong_dofs.append(d)
                    strong_owner.append(-1)
                continue
            n = ns.sum(axis=0)
            n /= np.linalg.norm(n)
            tangent = np.array([-n[1], n[0]])
            constraints.append(Constraint(dofs[0], ConstraintKind.NORMAL_ZERO, tag=tag_of_node[node]))
            rows += list(dofs)
            cols += [col, col]
            vals += list(tangent)
            col += 1
            continue
        for d in dofs:
            rows.append(d)
            cols.append(col)
            vals.append(1.0)
            col += 1

    for v in mesh.slave_vertices:
        for d, m in zip((2 * v, 2 * v + 1), (2 * mesh.periodic_master[v], 2 * mesh.periodic_master[v] + 1)):
            constraints.append(Constraint(int(d), ConstraintKind.PERIODIC_SLAVE, master=int(m)))

    prolongation = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n_nodes, col))
    has_outflow = any(c.mode == BCMode.NEUMANN and tag in mesh.boundary_tags.values()
                      for tag, c in bc.items())
    pinned = None if has_outflow else 0
    if pinned is not None:
        logger.debug("no Neumann boundary: pressure DOF 0 pinned")
    grads, areas = element_geometry(mesh)
    system = FESystem(mesh=mesh, node_of_vertex=node_of_vertex, node_coords=node_coords,
                      bc=bc, constraints=tuple(constraints), prolongation=prolongation,
                      strong_dofs=np.array(strong_dofs, dtype=int), strong_tags=strong_tags,
                      strong_owner=np.array(strong_owner, dtype=int),
                      normal_only_faces=np.array(normal_faces, dtype=int),
                      pressure_pinned=pinned, grads=grads, areas=areas)
    logger.info("FE system: %d nodes, %d free velocity DOFs, %d pressure DOFs (pinned: %s)",
                n_nodes, system.n_free_velocity, system.n_pressure, pinned)
    return system


def interpolate(system: FESystem, f: VectorFunction, t: float = 0.0) -> Field:
    """Nodal interpolant of ``f(points, t)``, constraints applied afterwards."""
    values = np.asarray(f(system.node_coords, t), dtype=float).reshape(system.n_nodes, 2)
    if not np.all(np.isfinite(values)):
        raise ValueError("interpolated function is not finite at all nodes")
    return system.apply_constraints(values.reshape(-1), t)


def l2_project(system: FESystem, f: VectorFunction, t: float = 0.0) -> Field:
    """L2 projection of ``f`` onto the constrained velocity space."""
    from .assembly import assemble_mass, assemble_rhs

    M = assemble_mass(system)
    b = assemble_rhs(system, f, t).coeffs
    P = system.prolongation
    g = system.lifting(t)
    A = (P.T @ M @ P).tocsc()
    rhs = P.T @ (b - M @ g)
    x = spla.spsolve(A, rhs) if A.shape[0] else np.zeros(0)
    x = np.atleast_1d(x)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    residual = np.linalg.norm(A @ x - rhs) / scale
    if not np.isfinite(residual) or residual > 1e-10:
        raise SolverError("L2 projection did not converge", residual=residual)
    return Field("velocity", P @ x + g)
