"""Monitored quantities: energy, vorticity, divergence, stabilization, errors."""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .assembly import FormParams, assemble_divergence, assemble_mass, stabilization_operator
from .spaces import DEGREE4, Field, FESystem, VectorFunction, _coeffs
from .tensors import frobenius_norms

logger = logging.getLogger(__name__)

# Step for the finite-difference gradient of an exact solution given without one.
GRADIENT_FD_STEP = 1e-6


class Flag(str, Enum):
    OK = "OK"
    INSTABILITY = "INSTABILITY"


@dataclass(frozen=True)
class ReportRecord:
    step: int
    t: float
    energy: float
    max_vorticity: float
    div_weak: float
    div_pointwise: float
    stab_seminorm: float
    flag: Flag = Flag.OK


@dataclass
class RunReport:
    """Time series of one run plus run-level summary numbers."""

    case: str
    mu: float = 0.0
    records: list = field(default_factory=list)
    step_energies: list = field(default_factory=list)
    stab_integral: float = 0.0
    steps: int = 0
    wall_time: float = 0.0
    h: float = math.nan
    aborted: bool = False
    abort_reason: Optional[str] = None
    final_errors: Optional[tuple] = None

    def add(self, record: ReportRecord) -> None:
        if self.records and record.t < self.records[-1].t:
            raise ValueError(f"report times must be monotone: {record.t} after {self.records[-1].t}")
        self.records.append(record)

    def abort(self, reason: str, t: float, step: int) -> None:
        self.aborted = True
        self.abort_reason = reason
        nan = math.nan
        self.add(ReportRecord(step=step, t=t, energy=nan, max_vorticity=nan, div_weak=nan,
                              div_pointwise=nan, stab_seminorm=nan, flag=Flag.INSTABILITY))

    @property
    def flag(self) -> Flag:
        return Flag.INSTABILITY if self.aborted else Flag.OK

    def energy_drifts(self) -> np.ndarray:
        """Per-step energy increments relative to the previous step's energy."""
        e = np.asarray(self.step_energies, dtype=float)
        if len(e) < 2:
            return np.zeros(0)
        return np.diff(e) / np.maximum(e[:-1], np.finfo(float).tiny)

    def summary(self) -> dict:
        last = self.records[-1] if self.records else None
        return {
            "case": self.case,
            "flag": self.flag.value,
            "abort_reason": self.abort_reason,
            "steps": self.steps,
            "mu": self.mu,
            "h": self.h,
            "wall_time": self.wall_time,
            "stab_integral": self.stab_integral,
            "initial_energy": self.step_energies[0] if self.step_energies else None,
            "final": {k: (v.value if isinstance(v, Enum) else v) for k, v in asdict(last).items()}
            if last else None,
            "final_errors": list(self.final_errors) if self.final_errors else None,
        }


def kinetic_energy(system: FESystem, u: Union[Field, np.ndarray],
                   mass: Optional[sp.spmatrix] = None) -> float:
    """``1/2 u^T M u``."""
    c = _coeffs(u)
    M = mass if mass is not None else assemble_mass(system)
    return 0.5 * float(c @ (M @ c))


def vorticity(system: FESystem, u: Union[Field, np.ndarray]) -> Field:
    """Elementwise constant ``d_x u_y - d_y u_x``."""
    G = system.gradients(u)
    return Field("element", G[:, 1, 0] - G[:, 0, 1])


def max_vorticity(system: FESystem, u: Union[Field, np.ndarray]) -> float:
    return float(np.max(np.abs(vorticity(system, u).coeffs), initial=0.0))


def gradient_norm(system: FESystem, u: Union[Field, np.ndarray]) -> float:
    """L2 norm of the (elementwise constant) velocity gradient."""
    return float(np.sqrt(np.sum(system.areas * frobenius_norms(system.gradients(u)) ** 2)))


def divergence_norms(system: FESystem, u: Union[Field, np.ndarray],
                     divergence: Optional[sp.spmatrix] = None) -> tuple[float, float]:
    """(weak, pointwise): ``|B u|`` and the L2 norm of the elementwise divergence."""
    B = divergence if divergence is not None else assemble_divergence(system)
    weak = float(np.linalg.norm(B @ _coeffs(u)))
    G = system.gradients(u)
    div = G[:, 0, 0] + G[:, 1, 1]
    return weak, float(np.sqrt(np.sum(system.areas * div ** 2)))


def stab_seminorm(system: FESystem, u: Union[Field, np.ndarray], w: Union[Field, np.ndarray],
                  params: FormParams) -> float:
    """``|u|_s``: Smagorinsky energy frozen at ``w`` plus the s0 and s1 terms."""
    if params.gamma == 0.0 and params.gamma0 == 0.0 and params.gamma1 == 0.0:
        return 0.0
    c = _coeffs(u)
    energy = float(c @ (stabilization_operator(system, w, params) @ c))
    return math.sqrt(max(energy, 0.0))


def _gradient_fd(exact: VectorFunction, points: np.ndarray, t: float) -> np.ndarray:
    G = np.empty((len(points), 2, 2))
    for d in range(2):
        e = np.zeros(2)
        e[d] = GRADIENT_FD_STEP
        G[:, :, d] = (np.asarray(exact(points + e, t)) - np.asarray(exact(points - e, t))) \
            / (2.0 * GRADIENT_FD_STEP)
    return G


def error_norms(system: FESystem, u_h: Union[Field, np.ndarray], exact: VectorFunction, t: float = 0.0,
                exact_gradient: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
                ) -> tuple[float, float]:
    """L2 and H1-seminorm errors by the 6-point rule.

    Without ``exact_gradient`` the gradient is taken by central differences.
    """
    rule = DEGREE4
    points = system.quadrature_points(rule)
    nt, nq, _ = points.shape
    flat = points.reshape(-1, 2)
    values = np.asarray(exact(flat, t), dtype=float).reshape(nt, nq, 2)
    grads = exact_gradient(flat, t) if exact_gradient is not None else _gradient_fd(exact, flat, t)
    grads = np.asarray(grads, dtype=float).reshape(nt, nq, 2, 2)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(grads))):
        raise ValueError(f"exact solution is not finite at all quadrature points (t={t})")
    du = system.evaluate(u_h, rule) - values
    dG = system.gradients(u_h)[:, None] - grads
    weights = system.areas[:, None] * rule.weights[None, :]
    l2 = np.sqrt(np.sum(weights * np.sum(du ** 2, axis=2)))
    h1 = np.sqrt(np.sum(weights * np.sum(dG ** 2, axis=(2, 3))))
    return float(l2), float(h1)


def convergence_slope(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h) over all levels."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.shape != errors.shape or hs.ndim != 1 or len(hs) < 2:
        raise ValueError(f"need two equally long sequences of >= 2 entries, got {hs.shape} and {errors.shape}")
    if np.any(hs <= 0.0) or np.any(errors <= 0.0):
        raise ValueError("mesh sizes and errors must be positive")
    if np.any(np.diff(hs) >= 0.0):
        raise ValueError(f"mesh sizes must be strictly decreasing, got {hs.tolist()}")
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)
