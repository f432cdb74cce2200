"""Concave, smooth, strictly increasing losses applied to absolute residuals.

Each loss ``phi`` satisfies ``phi(0) = 0``, ``phi' > 0`` and ``phi'``
non-increasing on ``[0, inf)``.  MCP and SCAD are only available with the
``+ delta * a`` term that makes them strictly increasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PenaltyDomainError

KINDS = ("l1", "lsp", "geman", "laplace", "mcp", "scad")

_DEFAULT_THETA = {"l1": 1.0, "lsp": 1.0, "geman": 1.0, "laplace": 1.0, "mcp": 1.0, "scad": 2.5}
_DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class Penalty:
    """A loss ``phi`` with shape parameter ``theta`` and slope floor ``delta``.

    ``delta`` only enters MCP and SCAD.  SCAD requires ``theta > 2``.
    """

    kind: str = "lsp"
    theta: float = 1.0
    delta: float = _DEFAULT_DELTA

    def __post_init__(self):
        kind = str(self.kind).lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ParameterError(f"unknown loss {self.kind!r}; choose from {', '.join(KINDS)}")
        if not np.isfinite(self.theta) or self.theta <= 0:
            raise ParameterError(f"theta must be positive, got {self.theta}")
        if kind == "scad" and self.theta <= 2:
            raise ParameterError(f"SCAD needs theta > 2, got {self.theta}")
        if kind in ("mcp", "scad") and (not np.isfinite(self.delta) or self.delta <= 0):
            raise ParameterError(f"delta must be positive, got {self.delta}")

    def value(self, alpha):
        return value(self, alpha)

    def derivative(self, alpha):
        return derivative(self, alpha)

    def tangent_offset(self, beta):
        return tangent_offset(self, beta)

    def __str__(self):
        if self.kind == "l1":
            return "l1"
        if self.kind in ("mcp", "scad"):
            return f"{self.kind}(theta={self.theta:g}, delta={self.delta:g})"
        return f"{self.kind}(theta={self.theta:g})"


def make_penalty(name, theta=None, delta=None):
    """Penalty by name with the customary defaults filled in.

    Defaults are ``theta=1`` (``2.5`` for SCAD) and ``delta=0.05``.
    """
    kind = str(name).lower()
    if kind not in KINDS:
        raise ParameterError(f"unknown loss {name!r}; choose from {', '.join(KINDS)}")
    return Penalty(kind,
                   _DEFAULT_THETA[kind] if theta is None else float(theta),
                   _DEFAULT_DELTA if delta is None else float(delta))


def _check(alpha):
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise PenaltyDomainError("penalty argument must be nonnegative")
    return a


def _out(a, res):
    return float(res) if a.ndim == 0 else res


def value(p, alpha):
    """``phi(alpha)`` for ``alpha >= 0`` (scalar or array)."""
    a = _check(alpha)
    t, d = p.theta, p.delta
    k = p.kind
    if k == "l1":
        res = a * 1.0
    elif k == "lsp":
        res = np.log1p(a / t)
    elif k == "geman":
        res = a / (t + a)
    elif k == "laplace":
        res = -np.expm1(-a / t)
    elif k == "mcp":
        # the concave part saturates at theta/2; continuity at a = theta fixes it
        res = np.where(a <= t, (1.0 + d) * a - a * a / (2.0 * t), 0.5 * t + d * a)
    else:
        mid = (-a * a + 2.0 * t * a - 1.0) / (2.0 * (t - 1.0)) + d * a
        res = np.where(a <= 1.0, (1.0 + d) * a,
                       np.where(a <= t, mid, 0.5 * (1.0 + t) + d * a))
    return _out(a, res)


def derivative(p, alpha):
    """``phi'(alpha)``; strictly positive everywhere on ``[0, inf)``."""
    a = _check(alpha)
    t, d = p.theta, p.delta
    k = p.kind
    if k == "l1":
        res = np.ones_like(a)
    elif k == "lsp":
        res = 1.0 / (t + a)
    elif k == "geman":
        res = t / (t + a) ** 2
    elif k == "laplace":
        res = np.exp(-a / t) / t
    elif k == "mcp":
        res = np.where(a <= t, 1.0 + d - a / t, d)
    else:
        res = np.where(a <= 1.0, 1.0 + d,
                       np.where(a <= t, (t - a) / (t - 1.0) + d, d))
    return _out(a, res)


def tangent_offset(p, beta):
    """Intercept ``phi(beta) - phi'(beta) * beta`` of the tangent at ``beta``.

    For any ``alpha >= 0``,
    ``phi(alpha) <= phi'(beta) * alpha + tangent_offset(beta)``.
    """
    b = _check(beta)
    res = np.asarray(value(p, b)) - np.asarray(derivative(p, b)) * b
    return _out(b, res)
