"""Built-in benchmark and verification cases.

Benchmark cases (``shear_layer``, ``cylinder``) carry initial data and
boundary conditions only. Verification cases (``mms_ns``, ``mms_linear``)
also carry an exact solution, its gradient and the matching forcing; the
forcing is checked against the PDE by finite differences.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Mapping, Optional

import numpy as np

from .mesh import (CHANNEL, BoundaryTag, Mesh, build_cylinder_channel, build_periodicity,
                   build_union_jack, load_mesh, macro_refine)
from .spaces import BCMode, BoundaryCondition, VectorFunction

if TYPE_CHECKING:
    from .config import SimConfig

logger = logging.getLogger(__name__)

PERIODIC_BOX = (0.0, 2.0 * np.pi, 0.0, 2.0 * np.pi)

# Shear layer thickness and perturbation amplitude.
SHEAR_RHO = np.pi / 15.0
SHEAR_DELTA_PERT = 0.05

# Finite-difference steps for first and second derivatives.
FD_STEP = 1e-5
FD_STEP2 = 1e-3


@dataclass(frozen=True, eq=False)
class CaseSpec:
    """Everything needed to set up one run besides the numerical parameters."""

    id: str
    title: str
    kind: str
    mesh_recipe: str
    domain: tuple
    periodic: tuple = ()
    bc: Mapping[BoundaryTag, BoundaryCondition] = field(default_factory=dict)
    initial: Optional[VectorFunction] = None
    stokes_initial: bool = False
    exact: Optional[VectorFunction] = None
    exact_gradient: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    forcing: Optional[Callable[[float], VectorFunction]] = None
    beta: Optional[VectorFunction] = None
    viscosity_capped: bool = False
    defaults: Mapping[str, object] = field(default_factory=dict)
    variants: Mapping[str, Mapping[str, object]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("navier_stokes", "linear"):
            raise ValueError(f"Unknown case kind: {self.kind}")
        if (self.exact is None) != (self.forcing is None):
            raise ValueError(f"Case {self.id}: exact solution and forcing come together")
        if self.kind == "linear" and (self.beta is None or self.exact is None):
            raise ValueError(f"Case {self.id}: the linear model needs beta and an exact solution")

    @property
    def is_verification(self) -> bool:
        return self.exact is not None

    def build_mesh(self, config: "SimConfig") -> Mesh:
        """Mesh for ``config``: a file if given, else this case's recipe."""
        if config.mesh_file:
            mesh = macro_refine(load_mesh(config.mesh_file), config.split)
        elif self.mesh_recipe == "union_jack":
            mesh = build_union_jack(config.nx, config.ny, self.domain)
        elif self.mesh_recipe == "cylinder":
            # nx: arc segments; ny: background cells across the channel height.
            height = CHANNEL[3] - CHANNEL[2]
            mesh = macro_refine(build_cylinder_channel(config.nx, height / config.ny), config.split)
        else:
            raise ValueError(f"Unknown mesh recipe: {self.mesh_recipe}")
        return build_periodicity(mesh, self.periodic)

    def boundary_conditions(self, config: "SimConfig") -> dict:
        """Case boundary conditions with the config's ``bc.<tag>`` overrides applied.

        Overriding a strong boundary with strong keeps the case's data.
        """
        conditions = dict(self.bc)
        for label, mode in config.bc.items():
            tag = BoundaryTag.parse(label)
            mode = BCMode(mode)
            current = conditions.get(tag)
            if current is not None and current.mode == mode:
                continue
            conditions[tag] = BoundaryCondition(mode)
        return conditions

    def viscosity(self, config: "SimConfig", mesh: Mesh) -> float:
        if self.viscosity_capped:
            return min(config.mu, config.U * mesh.h)
        return config.mu

    def forcing_for(self, coefficient: float) -> Optional[VectorFunction]:
        """Forcing for viscosity ``mu`` (Navier-Stokes) or reaction ``sigma`` (linear)."""
        return None if self.forcing is None else self.forcing(coefficient)

    def pde_residual(self, points: np.ndarray, times: np.ndarray, coefficient: float) -> np.ndarray:
        """Max-norm PDE residual of (exact, forcing) at each space-time sample.

        Derivatives of the exact solution are central finite differences.
        """
        if not self.is_verification:
            raise ValueError(f"Case {self.id} has no exact solution")
        f = self.forcing_for(coefficient)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        times = np.broadcast_to(np.asarray(times, dtype=float), (len(points),))
        out = np.empty(len(points))
        for k, (x, t) in enumerate(zip(points, times)):
            residual = _residual_ns(self.exact, x, t, coefficient) if self.kind == "navier_stokes" \
                else _residual_linear(self.exact, self.beta, x, t, coefficient)
            out[k] = np.max(np.abs(residual - f(x[None, :], t)[0]))
        return out


def _at(fn: VectorFunction, x: np.ndarray, t: float) -> np.ndarray:
    return np.asarray(fn(x[None, :], t), dtype=float)[0]


def _jacobian_fd(fn: VectorFunction, x: np.ndarray, t: float) -> np.ndarray:
    """J[c, d] = d_d fn_c."""
    J = np.empty((2, 2))
    for d in range(2):
        e = np.zeros(2)
        e[d] = FD_STEP
        J[:, d] = (_at(fn, x + e, t) - _at(fn, x - e, t)) / (2.0 * FD_STEP)
    return J


def _laplacian_fd(fn: VectorFunction, x: np.ndarray, t: float) -> np.ndarray:
    h = FD_STEP2
    centre = _at(fn, x, t)
    total = np.zeros(2)
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        total += (_at(fn, x + e, t) - 2.0 * centre + _at(fn, x - e, t)) / h ** 2
    return total


def _residual_ns(exact, x, t, mu):
    u = _at(exact, x, t)
    dudt = (_at(exact, x, t + FD_STEP) - _at(exact, x, t - FD_STEP)) / (2.0 * FD_STEP)
    return dudt + _jacobian_fd(exact, x, t) @ u - mu * _laplacian_fd(exact, x, t)


def _residual_linear(exact, beta, x, t, sigma):
    def flux_column(j):
        return lambda p, s: np.asarray(exact(p, s)) * np.asarray(beta(p, s))[:, j:j + 1]

    div = np.zeros(2)
    for j in range(2):
        div += _jacobian_fd(flux_column(j), x, t)[:, j]
    return div + sigma * _at(exact, x, t)


def _shear_layer_initial(points: np.ndarray, t: float = 0.0) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    ux = np.where(y <= np.pi, np.tanh((y - np.pi / 2.0) / SHEAR_RHO),
                  np.tanh((3.0 * np.pi / 2.0 - y) / SHEAR_RHO))
    return np.column_stack([ux, SHEAR_DELTA_PERT * np.sin(x)])


def inflow_profile(points: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Parabolic channel inflow (3/2 - 6 y^2, 0)."""
    y = points[:, 1]
    return np.column_stack([1.5 - 6.0 * y ** 2, np.zeros_like(y)])


def _decay(t: float) -> float:
    return float(np.exp(-t / 4.0))


def _mms_ns_exact(points: np.ndarray, t: float) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return _decay(t) * np.column_stack([np.cos(y), np.sin(x)])


def _mms_ns_gradient(points: np.ndarray, t: float) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    G = np.zeros((len(points), 2, 2))
    G[:, 0, 1] = -np.sin(y)
    G[:, 1, 0] = np.cos(x)
    return _decay(t) * G


def _mms_ns_forcing(mu: float) -> VectorFunction:
    def f(points: np.ndarray, t: float) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        g = _decay(t)
        convection = g * g * np.column_stack([-np.sin(x) * np.sin(y), np.cos(x) * np.cos(y)])
        return (mu - 0.25) * _mms_ns_exact(points, t) + convection
    return f


def _mms_linear_beta(points: np.ndarray, t: float = 0.0) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([np.cos(y), np.sin(x)])


def _mms_linear_exact(points: np.ndarray, t: float = 0.0) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([np.sin(y), np.cos(x)])


def _mms_linear_gradient(points: np.ndarray, t: float = 0.0) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    G = np.zeros((len(points), 2, 2))
    G[:, 0, 1] = np.cos(y)
    G[:, 1, 0] = -np.sin(x)
    return G


def _mms_linear_forcing(sigma: float) -> VectorFunction:
    def f(points: np.ndarray, t: float = 0.0) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        transport = np.sin(x) * np.cos(y)
        return np.column_stack([transport + sigma * np.sin(y), -transport + sigma * np.cos(x)])
    return f


def shear_layer_case() -> CaseSpec:
    """Doubly periodic double shear layer, inviscid, unforced."""
    return CaseSpec(
        id="shear_layer",
        title="Double shear layer on (0, 2pi)^2",
        kind="navier_stokes",
        mesh_recipe="union_jack",
        domain=PERIODIC_BOX,
        periodic=("x", "y"),
        initial=_shear_layer_initial,
        defaults={"nx": 100, "ny": 100, "mu": 0.0, "gamma": 0.0, "dt": 0.01,
                  "t_end": 12.0, "output_every": 100},
        variants={"mild": {"gamma": 0.01}, "stabilized": {"gamma": 0.1}},
    )


def cylinder_case() -> CaseSpec:
    """Channel flow past a cylinder started from the steady Stokes state."""
    zero = BoundaryCondition.strong()
    return CaseSpec(
        id="cylinder",
        title="Vortex shedding behind a cylinder in (-1/2, 2) x (-1/2, 1/2)",
        kind="navier_stokes",
        mesh_recipe="cylinder",
        domain=CHANNEL,
        bc={BoundaryTag.INFLOW: BoundaryCondition.strong(inflow_profile),
            BoundaryTag.WALL: zero,
            BoundaryTag.CYLINDER: zero,
            BoundaryTag.OUTFLOW: BoundaryCondition.neumann()},
        stokes_initial=True,
        defaults={"nx": 48, "ny": 20, "mu": 3e-4, "gamma": 0.1, "dt": 0.01,
                  "t_end": 10.0, "output_every": 50, "split": "red"},
        variants={"unstable": {"mu": 1e-6, "gamma": 0.0},
                  "high_re_stabilized": {"mu": 1e-6, "gamma": 0.1}},
    )


def mms_ns_case() -> CaseSpec:
    """Decaying periodic Navier-Stokes solution with zero pressure."""
    return CaseSpec(
        id="mms_ns",
        title="Manufactured Navier-Stokes solution (cos y, sin x) exp(-t/4)",
        kind="navier_stokes",
        mesh_recipe="union_jack",
        domain=PERIODIC_BOX,
        periodic=("x", "y"),
        initial=_mms_ns_exact,
        exact=_mms_ns_exact,
        exact_gradient=_mms_ns_gradient,
        forcing=_mms_ns_forcing,
        viscosity_capped=True,
        defaults={"nx": 16, "ny": 16, "mu": 10.0, "gamma": 1.0, "gamma0": 0.0, "gamma1": 0.0,
                  "dt": 0.05, "t_end": 0.5, "output_every": 1, "linearization": "extrapolated"},
    )


def mms_linear_case() -> CaseSpec:
    """Stabilized steady transport with beta = (cos y, sin x)."""
    return CaseSpec(
        id="mms_linear",
        title="Manufactured linear transport problem, sigma = 4",
        kind="linear",
        mesh_recipe="union_jack",
        domain=PERIODIC_BOX,
        periodic=("x", "y"),
        exact=_mms_linear_exact,
        exact_gradient=_mms_linear_gradient,
        forcing=_mms_linear_forcing,
        beta=_mms_linear_beta,
        defaults={"nx": 16, "ny": 16, "gamma": 1.0, "sigma": 4.0, "t_end": 0.0},
    )


CASES: dict[str, CaseSpec] = {
    case.id: case for case in (shear_layer_case(), cylinder_case(), mms_ns_case(), mms_linear_case())
}


def get_case(case_id: str) -> CaseSpec:
    try:
        return CASES[case_id.strip().lower()]
    except KeyError:
        raise ValueError(f"Unknown case: {case_id} (known: {', '.join(CASES)})") from None
