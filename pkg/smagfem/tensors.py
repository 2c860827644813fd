"""Tensor algebra for the p = 3 flux of the Smagorinsky term.

The helpers here are used by the assembly code (elementwise Frobenius
norms of velocity gradients) and by the property suites that check the
monotonicity and continuity inequalities of the flux |G|_F G.
"""

from dataclasses import dataclass

import numpy as np

# Relative round-off allowance for cubic expressions in the inputs.
ROUNDOFF = 1e-12


def frobenius_norm(G: np.ndarray) -> float:
    """Return (sum_ij G_ij^2)^(1/2)."""
    G = np.asarray(G, dtype=float)
    return float(np.sqrt(np.sum(G * G)))


def frobenius_norms(G: np.ndarray) -> np.ndarray:
    """Vectorized Frobenius norm over a stack of tensors of shape (..., d, d)."""
    G = np.asarray(G, dtype=float)
    return np.sqrt(np.einsum("...ij,...ij->...", G, G))


def p_flux(G: np.ndarray) -> np.ndarray:
    """Return |G|_F G, the flux of the p = 3 p-Laplacian."""
    G = np.asarray(G, dtype=float)
    return frobenius_norm(G) * G


def tolerance(*tensors: np.ndarray) -> float:
    """Round-off tolerance 1e-12 * (1 + max input norm)^3."""
    scale = max((frobenius_norm(T) for T in tensors), default=0.0)
    return ROUNDOFF * (1.0 + scale) ** 3


def _check_same_shape(X: np.ndarray, Z: np.ndarray) -> None:
    if X.shape != Z.shape or X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"expected two square tensors of equal size, got {X.shape} and {Z.shape}")
    if X.shape[0] not in (2, 3):
        raise ValueError(f"tensor dimension must be 2 or 3, got {X.shape[0]}")


def monotonicity_residual(X: np.ndarray, Z: np.ndarray) -> float:
    """4 (|X|X - |Z|Z) : (X - Z) - |X - Z|^3, non-negative for all X, Z."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    _check_same_shape(X, Z)
    D = X - Z
    return float(4.0 * np.sum((p_flux(X) - p_flux(Z)) * D) - frobenius_norm(D) ** 3)


def continuity_gap(X: np.ndarray, Z: np.ndarray) -> float:
    """(|X| + |Z|) |X - Z| - ||X|X - |Z|Z|, non-negative for all X, Z."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    _check_same_shape(X, Z)
    return float((frobenius_norm(X) + frobenius_norm(Z)) * frobenius_norm(X - Z)
                 - frobenius_norm(p_flux(X) - p_flux(Z)))


def matrix_cross(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise cross product of two 3x3 matrices.

    With rows A_i and B_i the components are
    c1 = A2.B3 - A3.B2, c2 = -(A1.B3 - A3.B1), c3 = A1.B2 - A2.B1.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != (3, 3) or B.shape != (3, 3):
        raise ValueError(f"matrix_cross needs 3x3 matrices, got {A.shape} and {B.shape}")
    return np.array([
        A[1] @ B[2] - A[2] @ B[1],
        -(A[0] @ B[2] - A[2] @ B[0]),
        A[0] @ B[1] - A[1] @ B[0],
    ])


def curl_from_jacobian(J: np.ndarray) -> np.ndarray:
    """Curl of a 3D field given its Jacobian J_ij = d_j v_i."""
    return np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])


@dataclass(frozen=True)
class AffineField3:
    """Field v(x) = offset + jacobian @ x on R^3; all derivatives are exact."""

    offset: np.ndarray
    jacobian: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        object.__setattr__(self, "jacobian", np.asarray(self.jacobian, dtype=float).reshape(3, 3))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "AffineField3":
        return cls(rng.uniform(-1.0, 1.0, 3), rng.uniform(-1.0, 1.0, (3, 3)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.offset + self.jacobian @ np.asarray(x, dtype=float)

    def curl(self) -> "AffineField3":
        """The curl of an affine field is constant."""
        return AffineField3(curl_from_jacobian(self.jacobian), np.zeros((3, 3)))

    def advected_by(self, beta: "AffineField3") -> "AffineField3":
        """(beta . grad) v, again affine: J_v beta(x)."""
        return AffineField3(self.jacobian @ beta.offset, self.jacobian @ beta.jacobian)


def curl_advection_identity_residual(beta: AffineField3, v: AffineField3,
                                     points: np.ndarray = None) -> float:
    """Max-norm of curl(beta.grad v) - beta.grad(curl v) - (grad beta)^t x grad v.

    Evaluated at ``points`` (default: 10 fixed sample points in the unit cube).
    """
    if points is None:
        points = np.linspace(0.0, 1.0, 10)[:, None] * np.array([1.0, 0.7, 0.3])
    lhs_field = v.advected_by(beta)
    curl_lhs = curl_from_jacobian(lhs_field.jacobian)
    curl_v = v.curl()
    cross = matrix_cross(beta.jacobian.T, v.jacobian)
    worst = 0.0
    for x in np.atleast_2d(points):
        transport = curl_v.jacobian @ beta(x)
        worst = max(worst, float(np.max(np.abs(curl_lhs - transport - cross))))
    return worst


def monotonicity_residuals(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Batched :func:`monotonicity_residual` over stacks of shape (n, d, d)."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    D = X - Z
    flux = frobenius_norms(X)[:, None, None] * X - frobenius_norms(Z)[:, None, None] * Z
    return 4.0 * np.einsum("nij,nij->n", flux, D) - frobenius_norms(D) ** 3


def continuity_gaps(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Batched :func:`continuity_gap` over stacks of shape (n, d, d)."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    nx, nz = frobenius_norms(X), frobenius_norms(Z)
    flux = nx[:, None, None] * X - nz[:, None, None] * Z
    return (nx + nz) * frobenius_norms(X - Z) - frobenius_norms(flux)


def tolerances(*stacks: np.ndarray) -> np.ndarray:
    """Per-sample :func:`tolerance` for stacks of shape (n, d, d)."""
    scale = np.max([frobenius_norms(S) for S in stacks], axis=0)
    return ROUNDOFF * (1.0 + scale) ** 3
