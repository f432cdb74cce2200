"""Solve the surrogate through its box-constrained dual.

For a fixed surrogate the dual has one variable per observed entry:

    D(x) = 1/2 sum_i a_r[i] |(X V - lam U)_i|^2
         + 1/2 sum_j a_c[j] |(X^T U - lam V)_j|^2
         - <x, residual>,          |x_t| <= wdot_t,

with ``X`` the lift of ``x`` onto the observation pattern.  The minimiser
gives the primal increments in closed form.  Every evaluation costs
``O(nnz * r + (m + n) * r)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError, ParameterError
from .sparse_core import gather_product, sparse_dense_product

__all__ = [
    "DualConfig",
    "DualState",
    "SolverReport",
    "dual_bounds",
    "dual_gradient",
    "dual_objective",
    "project_box",
    "solve_dual",
    "recover_primal",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualConfig:
    inner_tol: float = 1e-6
    max_inner: int = 300
    power_iters: int = 10
    max_backtracks: int = 60
    warm_start: bool = False

    def __post_init__(self):
        if self.max_inner < 1:
            raise ParameterError(f"max_inner must be >= 1, got {self.max_inner}")
        if not self.inner_tol > 0:
            raise ParameterError(f"inner_tol must be positive, got {self.inner_tol}")


@dataclass
class DualState:
    x: np.ndarray
    y: np.ndarray
    momentum: float
    step: float
    iter: int = 0


@dataclass
class SolverReport:
    inner_iters: int
    final_dual_objective: float
    final_relative_change: float
    line_search_evals: int
    restarts: int = 0
    trace: list = field(default_factory=list, repr=False)


def dual_bounds(ctx):
    """Box half-widths of the dual feasible set: the l1 weights themselves."""
    return np.array(ctx.wdot)


def project_box(z, bounds):
    """Euclidean projection onto ``{x : |x_t| <= bounds_t}``."""
    z = np.asarray(z, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    if z.shape != bounds.shape:
        raise DimensionError(f"projection of {z.shape} onto a box of {bounds.shape}")
    return np.clip(z, -bounds, bounds)


def _check_x(ctx, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (ctx.nnz,):
        raise DimensionError(f"dual vector must have length {ctx.nnz}, got {x.shape}")
    return x


def _pre_scaling(ctx, factors, x):
    """``X V - lam U`` and ``X^T U - lam V``."""
    pair = (ctx.omega, x)
    gr = sparse_dense_product(pair, factors.V)
    gr -= ctx.lam * factors.U
    gc = sparse_dense_product(pair, factors.U, transpose=True)
    gc -= ctx.lam * factors.V
    return gr, gc


def _value_from(ctx, x, gr, gc):
    a1 = 0.5 * float(ctx.a_r @ np.einsum("ij,ij->i", gr, gr))
    a2 = 0.5 * float(ctx.a_c @ np.einsum("ij,ij->i", gc, gc))
    return a1 + a2 - float(x @ ctx.residual)


def _grad_from(ctx, factors, gr, gc):
    q = ctx.a_r[:, None] * gr
    p = ctx.a_c[:, None] * gc
    g = gather_product(q, factors.V, ctx.omega)
    g += gather_product(factors.U, p, ctx.omega)
    g -= ctx.residual
    return g


def dual_objective(ctx, factors, x):
    x = _check_x(ctx, x)
    gr, gc = _pre_scaling(ctx, factors, x)
    return _value_from(ctx, x, gr, gc)


def dual_gradient(ctx, factors, x):
    x = _check_x(ctx, x)
    gr, gc = _pre_scaling(ctx, factors, x)
    return _grad_from(ctx, factors, gr, gc)


def _value_and_grad(ctx, factors, x):
    gr, gc = _pre_scaling(ctx, factors, x)
    return _value_from(ctx, x, gr, gc), _grad_from(ctx, factors, gr, gc)


def recover_primal(ctx, factors, x):
    """Primal increments ``(a_r * (X V - lam U), a_c * (X^T U - lam V))``."""
    x = _check_x(ctx, x)
    gr, gc = _pre_scaling(ctx, factors, x)
    return ctx.a_r[:, None] * gr, ctx.a_c[:, None] * gc


def _lipschitz_estimate(ctx, factors, iters, rng):
    # the quadratic part's Hessian applied to v is grad(v) - grad(0)
    g0 = _grad_from(ctx, factors, *_pre_scaling(ctx, factors, np.zeros(ctx.nnz)))
    v = rng.standard_normal(ctx.nnz)
    v /= np.linalg.norm(v)
    L = 0.0
    for _ in range(max(1, iters)):
        hv = dual_gradient(ctx, factors, v) - g0
        L = float(np.linalg.norm(hv))
        if L == 0.0:
            break
        v = hv / L
    return L


def solve_dual(ctx, factors, config=None, x0=None, seed=0):
    """Accelerated projected gradient on the dual.

    Uses the (k-1)/(k+2) momentum sequence, backtracking on the quadratic
    upper bound and a function-value restart: when an extrapolated step
    would raise the objective, momentum is reset and a plain projected
    gradient step is taken from the last accepted iterate instead.  The
    accepted objective values therefore never increase.

    Returns
    -------
    x : ndarray
        Feasible dual point.
    report : SolverReport
    """
    config = config or DualConfig()
    bounds = dual_bounds(ctx)
    if x0 is None:
        x = np.zeros(ctx.nnz)
    else:
        x = project_box(_check_x(ctx, x0), bounds)
    rng = np.random.default_rng(seed)
    L = _lipschitz_estimate(ctx, factors, config.power_iters, rng)
    step = 1.0 / L if L > 0 else 1.0
    state = DualState(x=x, y=x.copy(), momentum=0.0, step=step)

    fx, gx = _value_and_grad(ctx, factors, x)
    if not np.isfinite(fx):
        raise NumericalError("dual objective is not finite at the start point", iteration=0)
    trace = [fx]
    evals = 0
    restarts = 0
    rel = np.inf
    x_prev = x.copy()
    k = 1
    while state.iter < config.max_inner:
        state.iter += 1
        beta = (k - 1.0) / (k + 2.0)
        y = x + beta * (x - x_prev)
        if gx is None and beta == 0:
            gx = dual_gradient(ctx, factors, x)
        if beta > 0:
            fy, gy = _value_and_grad(ctx, factors, y)
        else:
            fy, gy = fx, gx
        z, fz, n_ls = _backtrack(ctx, factors, y, fy, gy, bounds, state, config)
        evals += n_ls
        if fz > fx and beta > 0:
            restarts += 1
            k = 1
            if gx is None:
                gx = dual_gradient(ctx, factors, x)
            z, fz, n_ls = _backtrack(ctx, factors, x, fx, gx, bounds, state, config)
            evals += n_ls
        if not np.isfinite(fz):
            raise NumericalError("dual objective became non-finite", iteration=state.iter)
        if fz > fx:
            # only rounding can get here; keep the accepted point
            fz, z = fx, x
        rel = abs(fx - fz) / max(abs(fx), np.finfo(float).tiny)
        x_prev, x, fx = x, z, fz
        state.x, state.y, state.momentum = x, y, beta
        trace.append(fx)
        k += 1
        if rel < config.inner_tol:
            break
        gx = None
    report = SolverReport(
        inner_iters=state.iter,
        final_dual_objective=fx,
        final_relative_change=float(rel),
        line_search_evals=evals,
        restarts=restarts,
        trace=trace,
    )
    return x, report


def _backtrack(ctx, factors, y, fy, gy, bounds, state, config):
    """Projected gradient step from ``y``, halving the step until the
    quadratic upper bound holds.  Returns ``(z, f(z), evaluations)``."""
    step = state.step
    for n in range(1, config.max_backtracks + 1):
        z = project_box(y - step * gy, bounds)
        d = z - y
        fz = dual_objective(ctx, factors, z)
        if fz <= fy + float(gy @ d) + float(d @ d) / (2.0 * step) + 1e-12 * abs(fy):
            state.step = step
            return z, fz, n
        step *= 0.5
    state.step = step
    log.warning("line search hit %d halvings", config.max_backtracks)
    return z, fz, config.max_backtracks
