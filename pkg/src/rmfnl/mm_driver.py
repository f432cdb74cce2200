"""Majorization-minimization outer loop.

Each outer iteration linearises the loss at the current residual, solves
the resulting convex surrogate through its dual, and adds the recovered
increments to the factors.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as sla

from .dual_solver import DualConfig, recover_primal, solve_dual
from .errors import ConsistencyError, DimensionError, ParameterError
from .penalty import Penalty, make_penalty
from .surrogate import FactorPair, build_context, objective_value, surrogate_value

__all__ = [
    "GaussianInit",
    "ProvidedInit",
    "SpectralInit",
    "RmfnlConfig",
    "IterationRecord",
    "FitTrace",
    "auto_lambda",
    "initialize",
    "fit",
]

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-8
REFINEMENTS = 3


@dataclass(frozen=True)
class GaussianInit:
    seed: int = 0
    scale: float = 1.0


@dataclass(frozen=True)
class ProvidedInit:
    U: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class SpectralInit:
    """Top-``r`` singular pairs of the zero-filled data, rescaled by ``mn/nnz``.

    The factors split the singular values evenly, ``U = u sqrt(s)`` and
    ``V = v sqrt(s)``.  ``seed`` fixes the Lanczos start vector.
    """

    seed: int = 0


def auto_lambda(m, n):
    return 20.0 / (m + n)


@dataclass(frozen=True)
class RmfnlConfig:
    """Settings for one factorization run.

    ``lam="auto"`` resolves to ``20 / (m + n)`` once the data shape is known.
    """

    rank: int = 5
    lam: object = "auto"
    penalty: Penalty = field(default_factory=lambda: make_penalty("lsp"))
    outer_tol: float = 1e-4
    max_outer: int = 100
    inner: DualConfig = field(default_factory=DualConfig)
    init: object = field(default_factory=GaussianInit)
    decrease_check: bool = True
    # per-iteration increment norm below which a tolerance stop is trusted
    increment_tol: float = 1.0
    # optional loss for a first pass whose result seeds the main fit
    warmup: object = None

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")
        if not self.outer_tol > 0:
            raise ParameterError(f"outer_tol must be positive, got {self.outer_tol}")
        if int(self.max_outer) < 1:
            raise ParameterError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.lam != "auto":
            try:
                lam = float(self.lam)
            except (TypeError, ValueError):
                raise ParameterError(f"lambda must be 'auto' or a number, got {self.lam!r}") from None
            if not lam > 0:
                raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.warmup is not None and not isinstance(self.warmup, Penalty):
            object.__setattr__(self, "warmup", make_penalty(self.warmup))

    def resolve_lambda(self, shape):
        if self.lam == "auto":
            return auto_lambda(*shape)
        return float(self.lam)


@dataclass
class IterationRecord:
    iter: int
    objective: float
    surrogate: float
    u_inc: float
    v_inc: float
    inner_iters: int
    seconds: float
    gamma: float = float("nan")


COLUMNS = ("iter", "objective", "surrogate", "u_inc", "v_inc", "inner_iters", "seconds")


@dataclass
class FitTrace:
    """Per-iteration history.  Row 0 holds the starting objective."""

    records: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    warmup: "FitTrace | None" = None

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def objectives(self):
        return self.column("objective")

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.records:
            w.writerow([r.iter, repr(r.objective), repr(r.surrogate), repr(r.u_inc),
                        repr(r.v_inc), r.inner_iters, repr(r.seconds)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None):
        payload = {
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "records": [{k: v for k, v in asdict(r).items() if k in COLUMNS} for r in self.records],
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def initialize(m, n, r, init, lam=1.0, data=None):
    """Starting factors: seeded Gaussian draws, a copy of provided ones, or
    a spectral estimate (which needs ``data``)."""
    if min(m, n, r) < 1:
        raise DimensionError(f"invalid dimensions m={m}, n={n}, r={r}")
    if isinstance(init, SpectralInit):
        if data is None:
            raise ParameterError("spectral initialization needs the observed data")
        return FactorPair(*_spectral_factors(data, r, init.seed), lam)
    if isinstance(init, ProvidedInit):
        U = np.array(init.U, dtype=float)
        V = np.array(init.V, dtype=float)
        if U.shape != (m, r) or V.shape != (n, r):
            raise DimensionError(f"provided factors {U.shape}, {V.shape}; expected {(m, r)}, {(n, r)}")
        return FactorPair(U, V, lam)
    rng = np.random.default_rng(init.seed)
    U = init.scale * rng.standard_normal((m, r))
    V = init.scale * rng.standard_normal((n, r))
    return FactorPair(U, V, lam)


def _spectral_factors(data, r, seed):
    m, n = data.shape
    S = data.omega.csr(data.values) * (m * n / data.nnz)
    if r < min(m, n) - 1:
        v0 = np.random.default_rng(seed).standard_normal(min(m, n))
        u, s, vt = sla.svds(S, k=r, v0=v0)
        order = np.argsort(s)[::-1]
        u, s, vt = u[:, order], s[order], vt[order]
    else:
        u, s, vt = np.linalg.svd(S.toarray(), full_matrices=False)
        # pad with zero columns when r exceeds min(m, n)
        k = min(r, s.size)
        u = np.pad(u[:, :k], ((0, 0), (0, r - k)))
        vt = np.pad(vt[:k], ((0, r - k), (0, 0)))
        s = np.pad(s[:k], (0, r - k))
    root = np.sqrt(s)
    return u * root, vt.T * root


def fit(data, config=None, callback=None):
    """Factorize ``data`` by majorization-minimization.

    Parameters
    ----------
    data : ObservedMatrix
    config : RmfnlConfig
    callback : callable, optional
        Called as ``callback(k, factors, record)`` after every outer step.

    Returns
    -------
    factors : FactorPair
    trace : FitTrace

    Raises
    ------
    ConsistencyError
        With ``decrease_check`` on, if the objective rises by more than
        ``1e-8`` or the guaranteed decrease is not met.
    """
    config = config or RmfnlConfig()
    if config.warmup is not None:
        first, first_trace = fit(data, replace(config, penalty=config.warmup, warmup=None))
        factors, trace = fit(data, replace(config, init=ProvidedInit(first.U, first.V),
                                           warmup=None), callback)
        trace.warmup = first_trace
        return factors, trace
    m, n = data.shape
    lam = config.resolve_lambda(data.shape)
    p = config.penalty
    factors = initialize(m, n, config.rank, config.init, lam, data)

    trace = FitTrace()
    h = objective_value(data, factors, p)
    h_start = h
    trace.records.append(IterationRecord(0, h, h, 0.0, 0.0, 0, 0.0))
    # the ridge term alone bounds the factors for every later iterate
    radius_sq = 2.0 * h_start / lam
    x_prev = None

    for k in range(1, int(config.max_outer) + 1):
        t0 = time.perf_counter()
        ctx = build_context(data, factors, p)
        x0 = x_prev if (config.inner.warm_start and x_prev is not None) else None
        x, report = solve_dual(ctx, factors, config.inner, x0=x0, seed=k)
        gamma = 0.5 * ctx.quad_floor()
        inner_cfg = config.inner
        inner_total = report.inner_iters
        for attempt in range(REFINEMENTS + 1):
            ubar, vbar = recover_primal(ctx, factors, x)
            f_star = surrogate_value(ctx, factors, ubar, vbar)
            new = FactorPair(factors.U + ubar, factors.V + vbar, lam)
            h_new = objective_value(data, new, p)
            du = float(np.linalg.norm(ubar))
            dv = float(np.linalg.norm(vbar))
            enough = h - h_new >= gamma * (du * du + dv * dv) - MONOTONE_SLACK
            if (f_star <= h + MONOTONE_SLACK and enough) or attempt == REFINEMENTS:
                break
            # inexact dual solve: resume from x with a tighter tolerance
            inner_cfg = replace(inner_cfg, inner_tol=inner_cfg.inner_tol * 1e-2,
                                max_inner=2 * inner_cfg.max_inner)
            x, report = solve_dual(ctx, factors, inner_cfg, x0=x, seed=k)
            inner_total += report.inner_iters
        if f_star > h + MONOTONE_SLACK:
            log.warning("outer %d: increment rejected (surrogate %.6g > %.6g)", k, f_star, h)
            trace.records.append(IterationRecord(k, h, h, 0.0, 0.0, inner_total,
                                                 time.perf_counter() - t0))
            trace.converged = True
            trace.stop_reason = "no surrogate decrease"
            break
        rec = IterationRecord(k, h_new, f_star, du, dv, inner_total,
                              time.perf_counter() - t0, gamma)
        trace.records.append(rec)
        log.debug("outer %d: objective %.10g surrogate %.10g |dU| %.3g |dV| %.3g inner %d",
                  k, h_new, f_star, du, dv, report.inner_iters)

        if config.decrease_check:
            if h_new > h + MONOTONE_SLACK:
                raise ConsistencyError(
                    f"objective increased from {h!r} to {h_new!r}", iteration=k)
            if h - h_new < gamma * (du * du + dv * dv) - MONOTONE_SLACK:
                raise ConsistencyError(
                    f"decrease {h - h_new!r} below gamma*|increment|^2 = "
                    f"{gamma * (du * du + dv * dv)!r}", iteration=k)
            size_sq = float(np.sum(new.U ** 2) + np.sum(new.V ** 2))
            if size_sq > radius_sq * (1 + 1e-12) + MONOTONE_SLACK:
                raise ConsistencyError(
                    f"factor norm^2 {size_sq!r} outside the level-set bound {radius_sq!r}",
                    iteration=k)

        factors = new
        x_prev = x
        if callback is not None:
            callback(k, factors, rec)
        rel = abs(h - h_new) / max(1.0, abs(h))
        h = h_new
        if rel < config.outer_tol:
            trace.converged = True
            trace.stop_reason = "tolerance"
            if du + dv > config.increment_tol:
                log.warning("stopped by tolerance with increment norm %.3g > %.3g",
                            du + dv, config.increment_tol)
            break
    else:
        trace.stop_reason = "max_outer"
    return factors, trace
