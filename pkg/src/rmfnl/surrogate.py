"""Convex majorizer of the nonconvex factorization objective.

At the current factors ``(U, V)`` each loss term ``phi(|c|)`` is replaced
by its tangent at the current residual, which turns the loss into a
reweighted l1 norm.  The coupling ``Ubar @ Vbar.T`` of the increments is
then bounded by diagonal quadratics built from the row/column sums of the
weights.  Everything is evaluated on the observed positions only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .penalty import derivative, value
from .sparse_core import gather_product

__all__ = [
    "FactorPair",
    "SurrogateContext",
    "build_context",
    "surrogate_value",
    "objective_value",
    "predict_on",
]


@dataclass
class FactorPair:
    """Factors ``U`` (m x r), ``V`` (n x r) and the ridge weight ``lam``."""

    U: np.ndarray
    V: np.ndarray
    lam: float

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise DimensionError(f"incompatible factors {self.U.shape} and {self.V.shape}")
        if self.U.shape[1] < 1:
            raise DimensionError("rank must be at least 1")
        if not self.lam >= 0:
            raise ParameterError(f"lambda must be nonnegative, got {self.lam}")

    @property
    def rank(self):
        return self.U.shape[1]

    def check_against(self, shape):
        if (self.U.shape[0], self.V.shape[0]) != tuple(shape):
            raise DimensionError(
                f"factors {self.U.shape}, {self.V.shape} do not match data shape {tuple(shape)}")

    def copy(self):
        return FactorPair(self.U.copy(), self.V.copy(), self.lam)


@dataclass(frozen=True)
class SurrogateContext:
    """Per-iteration surrogate quantities, all aligned with ``omega``.

    Attributes
    ----------
    wdot : ndarray (nnz,)
        l1 weights ``phi'(|residual|)``.
    lambda_r_sq, lambda_c_sq : ndarray (m,), (n,)
        Row and column sums of ``wdot``.
    a_r, a_c : ndarray
        ``1 / (lam + lambda_r_sq)`` and ``1 / (lam + lambda_c_sq)``.
    b : float
        Sum of tangent intercepts.
    residual : ndarray (nnz,)
        ``M - U V^T`` on the observed positions.
    """

    omega: object
    lam: float
    wdot: np.ndarray
    lambda_r_sq: np.ndarray
    lambda_c_sq: np.ndarray
    a_r: np.ndarray
    a_c: np.ndarray
    b: float
    residual: np.ndarray

    @property
    def nnz(self):
        return self.wdot.size

    def quad_floor(self):
        """Smallest diagonal entry of the two curvature matrices."""
        return float(min(self.lambda_r_sq.min(), self.lambda_c_sq.min()))


def predict_on(factors, omega):
    return gather_product(factors.U, factors.V, omega)


def build_context(data, factors, p):
    """Linearise the loss at the current residual.

    Cost is ``O(nnz * r + m + n)``; the dense product is never formed.
    """
    factors.check_against(data.shape)
    if factors.lam <= 0:
        raise ParameterError("the surrogate requires lambda > 0")
    omega = data.omega
    residual = data.values - predict_on(factors, omega)
    absr = np.abs(residual)
    wdot = np.asarray(derivative(p, absr), dtype=float)
    b = float(np.sum(np.asarray(value(p, absr)) - wdot * absr))
    m, n = omega.shape
    lr = np.bincount(omega.rows, weights=wdot, minlength=m)
    lc = np.bincount(omega.cols, weights=wdot, minlength=n)
    for arr in (wdot, lr, lc, residual):
        arr.setflags(write=False)
    return SurrogateContext(
        omega=omega,
        lam=float(factors.lam),
        wdot=wdot,
        lambda_r_sq=lr,
        lambda_c_sq=lc,
        a_r=1.0 / (factors.lam + lr),
        a_c=1.0 / (factors.lam + lc),
        b=b,
        residual=residual,
    )


def surrogate_value(ctx, factors, ubar, vbar):
    """Surrogate at the increment ``(ubar, vbar)``; equals the objective at zero."""
    ubar = np.asarray(ubar, dtype=float)
    vbar = np.asarray(vbar, dtype=float)
    if ubar.shape != factors.U.shape or vbar.shape != factors.V.shape:
        raise DimensionError(
            f"increments {ubar.shape}, {vbar.shape} do not match factors "
            f"{factors.U.shape}, {factors.V.shape}")
    omega = ctx.omega
    c = ctx.residual - gather_product(ubar, factors.V, omega) - gather_product(factors.U, vbar, omega)
    lam = factors.lam
    total = float(ctx.wdot @ np.abs(c))
    total += 0.5 * lam * (np.sum((factors.U + ubar) ** 2) + np.sum((factors.V + vbar) ** 2))
    total += 0.5 * float(ctx.lambda_r_sq @ np.sum(ubar * ubar, axis=1))
    total += 0.5 * float(ctx.lambda_c_sq @ np.sum(vbar * vbar, axis=1))
    return total + ctx.b


def objective_value(data, factors, p):
    """Sum of ``phi(|M - U V^T|)`` over observations plus the ridge term."""
    factors.check_against(data.shape)
    r = np.abs(data.values - predict_on(factors, data.omega))
    loss = float(np.sum(value(p, r)))
    return loss + 0.5 * factors.lam * (float(np.sum(factors.U ** 2)) + float(np.sum(factors.V ** 2)))
