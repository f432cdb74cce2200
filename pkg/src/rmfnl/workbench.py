"""Experiment plumbing: synthetic data, rating files, splits, attacks,
error metrics and an alternating ridge-regression baseline."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import AssumptionError, DimensionError, ParameterError, ParseError, RmfnlError
from .mm_driver import RmfnlConfig, SpectralInit
from .penalty import make_penalty
from .sparse_core import ObservedMatrix, gather_product
from .surrogate import FactorPair

__all__ = [
    "SyntheticSpec",
    "EvalMask",
    "SyntheticBundle",
    "observe_fraction",
    "generate_synthetic",
    "love_hate_attack",
    "split_observed",
    "rmse",
    "mae",
    "ingest_ratings",
    "load_mask",
    "write_triples",
    "l2_baseline_fit",
    "l2_objective",
    "read_spec_file",
    "protocol_config",
]

log = logging.getLogger(__name__)


def observe_fraction(m):
    """Observed share of entries for an ``m x m`` synthetic problem,
    ``10 ln(m) / m`` (22.1% at m=250, 6.9% at m=1000)."""
    return 10.0 * math.log(m) / m


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank-plus-noise-plus-outliers generator settings.

    ``noise_var`` is the variance of the dense Gaussian noise; the default
    ``0.01`` is a standard deviation of 0.1.
    ``observe`` defaults to ``observe_fraction(m)``; of the observed
    entries, ``train_share`` go to training and the rest to validation.
    """

    m: int = 250
    n: int = 0
    true_rank: int = 5
    noise_var: float = 0.01
    outlier_fraction: float = 0.05
    outlier_magnitude: float = 5.0
    observe: float = 0.0
    train_share: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ParameterError(f"m must be >= 2, got {self.m}")
        if self.n < 0 or self.true_rank < 1:
            raise ParameterError("n must be >= 0 and true_rank >= 1")
        if self.noise_var < 0:
            raise ParameterError(f"noise_var must be nonnegative, got {self.noise_var}")
        for name in ("outlier_fraction", "train_share"):
            v = getattr(self, name)
            if not 0 <= v < 1 and not (name == "train_share" and v == 1):
                raise ParameterError(f"{name} must lie in [0, 1), got {v}")
        if not 0 <= self.observe <= 1:
            raise ParameterError(f"observe must lie in [0, 1], got {self.observe}")

    @property
    def cols(self):
        return self.n or self.m

    @property
    def noise_sigma(self):
        return math.sqrt(self.noise_var)

    @property
    def observe_fraction(self):
        return self.observe or min(1.0, observe_fraction(self.m))


@dataclass(frozen=True)
class EvalMask:
    """Held-out positions and the reference values used to score them."""

    rows: np.ndarray
    cols: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        if not (len(self.rows) == len(self.cols) == len(self.truth)):
            raise DimensionError("mask arrays are not aligned")

    def __len__(self):
        return len(self.truth)

    def positions(self):
        return set(zip(self.rows.tolist(), self.cols.tolist()))


@dataclass
class SyntheticBundle:
    train: ObservedMatrix
    validation: EvalMask
    test: EvalMask
    clean: np.ndarray
    outlier_mask: np.ndarray
    spec: SyntheticSpec

    def __iter__(self):
        return iter((self.train, self.validation, self.test, self.clean))


def _mask_from_flat(flat, n, values):
    rows, cols = np.divmod(flat, n)
    return EvalMask(rows, cols, values[rows, cols])


def generate_synthetic(spec):
    """Draw ``M = U V^T + N + S`` and split it.

    Outliers are placed uniformly over all entries before observations are
    sampled.  The test mask is every unobserved entry scored against the
    clean product.  If the training part leaves a row or column empty, the
    draw is repeated with the next seed substream (up to 10 times).
    """
    m, n, r = spec.m, spec.cols, spec.true_rank
    streams = np.random.SeedSequence(spec.seed).spawn(10)
    for attempt, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        U = rng.standard_normal((m, r))
        V = rng.standard_normal((n, r))
        X = U @ V.T
        M = X + spec.noise_sigma * rng.standard_normal((m, n))
        n_out = int(round(spec.outlier_fraction * m * n))
        out_pos = rng.choice(m * n, size=n_out, replace=False)
        M.flat[out_pos] += spec.outlier_magnitude * rng.choice([-1.0, 1.0], size=n_out)
        outlier_mask = np.zeros((m, n), dtype=bool)
        outlier_mask.flat[out_pos] = True

        n_obs = int(round(spec.observe_fraction * m * n))
        observed = rng.choice(m * n, size=n_obs, replace=False)
        n_train = int(round(spec.train_share * n_obs))
        train_pos, valid_pos = observed[:n_train], observed[n_train:]
        rows, cols = np.divmod(train_pos, n)
        try:
            train = ObservedMatrix(rows, cols, M[rows, cols], (m, n))
        except AssumptionError as exc:
            log.info("synthetic draw %d rejected: %s", attempt, exc)
            continue
        unobserved = np.ones(m * n, dtype=bool)
        unobserved[observed] = False
        return SyntheticBundle(
            train=train,
            validation=_mask_from_flat(np.sort(valid_pos), n, M),
            test=_mask_from_flat(np.flatnonzero(unobserved), n, X),
            clean=X,
            outlier_mask=outlier_mask,
            spec=spec,
        )
    raise AssumptionError(f"10 synthetic draws all left an empty row or column ({spec})")


def love_hate_attack(data, item_fraction=0.03, seed=0):
    """Push every rating of randomly chosen items to the scale's min or max.

    ``ceil(item_fraction * n)`` items are picked; each one independently
    gets all its observed ratings set to the dataset minimum or maximum
    with equal probability.
    """
    if not 0 < item_fraction <= 1:
        raise ParameterError(f"item_fraction must lie in (0, 1], got {item_fraction}")
    n = data.shape[1]
    k = min(n, math.ceil(item_fraction * n - 1e-9))
    rng = np.random.default_rng(seed)
    items = np.sort(rng.choice(n, size=k, replace=False))
    love = rng.random(k) < 0.5
    lo, hi = float(data.values.min()), float(data.values.max())
    target = np.full(n, np.nan)
    target[items] = np.where(love, hi, lo)
    new_vals = target[data.omega.cols]
    values = np.where(np.isnan(new_vals), data.values, new_vals)
    return data.with_values(values)


def split_observed(data, shares=(0.5, 0.25, 0.25), seed=0):
    """Random train/validation/test split of an observed matrix.

    One randomly chosen entry of every row and every column is reserved for
    training first so the training matrix keeps full coverage; the
    remaining entries are then shuffled and cut to hit ``shares`` overall.

    Returns
    -------
    train : ObservedMatrix
    validation, test : EvalMask
    """
    shares = np.asarray(shares, dtype=float)
    if shares.shape != (3,) or np.any(shares < 0) or not np.isclose(shares.sum(), 1.0):
        raise ParameterError(f"split shares must be three nonnegative numbers summing to 1, got {shares}")
    rng = np.random.default_rng(seed)
    omega = data.omega
    nnz = omega.nnz
    perm = rng.permutation(nnz)
    forced = np.zeros(nnz, dtype=bool)
    # first occurrence in a random order = a random entry per row / column
    _, first_r = np.unique(omega.rows[perm], return_index=True)
    _, first_c = np.unique(omega.cols[perm], return_index=True)
    forced[perm[first_r]] = True
    forced[perm[first_c]] = True
    rest = perm[~forced[perm]]
    n_train = max(0, int(round(shares[0] * nnz)) - int(forced.sum()))
    n_valid = int(round(shares[1] * nnz))
    train_idx = np.concatenate([np.flatnonzero(forced), rest[:n_train]])
    valid_idx = np.sort(rest[n_train:n_train + n_valid])
    test_idx = np.sort(rest[n_train + n_valid:])
    train = ObservedMatrix(omega.rows[train_idx], omega.cols[train_idx],
                           data.values[train_idx], omega.shape)

    def mask(idx):
        return EvalMask(omega.rows[idx], omega.cols[idx], data.values[idx])

    return train, mask(valid_idx), mask(test_idx)


def _predict(factors, mask):
    if len(mask) == 0:
        raise ParameterError("cannot score an empty mask")
    U, V = factors.U, factors.V
    if mask.rows.max() >= U.shape[0] or mask.cols.max() >= V.shape[0]:
        raise DimensionError("mask positions fall outside the factor dimensions")
    return np.einsum("ij,ij->i", U[mask.rows], V[mask.cols])


def rmse(factors, mask):
    err = _predict(factors, mask) - mask.truth
    return float(np.sqrt(np.mean(err * err)))


def mae(factors, mask):
    return float(np.mean(np.abs(_predict(factors, mask) - mask.truth)))


_SPLIT = re.compile(r"::|\t|,|;|\s+")


def _read_triples(path, fmt):
    seps = {"tsv": "\t", "csv": ",", "ml": "::"}
    if fmt != "auto" and fmt not in seps:
        raise ParameterError(f"unknown ratings format {fmt!r}")
    users, items, ratings = [], [], []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(seps[fmt]) if fmt != "auto" else _SPLIT.split(line)
            if len(parts) < 3:
                raise ParseError(f"expected user, item, rating; got {line!r}", line=lineno)
            try:
                u, i, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                if lineno == 1 and not users:
                    continue
                raise ParseError(f"non-numeric field in {line!r}", line=lineno) from None
            if not math.isfinite(v):
                raise ParseError(f"rating is not finite in {line!r}", line=lineno)
            users.append(u)
            items.append(i)
            ratings.append(v)
    if not users:
        raise ParseError("no ratings found")
    return users, items, ratings


def ingest_ratings(path, fmt="auto", return_ids=False):
    """Read ``user item rating`` triples into an ``ObservedMatrix``.

    Parameters
    ----------
    path : str or Path
    fmt : {"auto", "tsv", "csv", "ml"}
        Field separator: tab, comma, ``::`` (MovieLens 1M/10M), or
        detected per line.  Extra fields (timestamps) are ignored; blank
        lines and ``#`` comments are skipped, and a non-numeric first line
        is treated as a header.
    return_ids : bool
        Also return the original user and item IDs for each row/column.

    Raises
    ------
    ParseError
        On a malformed line (with its number) or a repeated (user, item).
    """
    users, items, ratings = _read_triples(path, fmt)
    users = np.asarray(users)
    items = np.asarray(items)
    user_ids, rows = np.unique(users, return_inverse=True)
    item_ids, cols = np.unique(items, return_inverse=True)
    for ids, what in ((user_ids, "user"), (item_ids, "item")):
        gaps = int(ids.max() - ids.min() + 1 - ids.size)
        if gaps:
            log.warning("dropped %d %s id(s) with no ratings", gaps, what)
    try:
        data = ObservedMatrix(rows, cols, ratings, (user_ids.size, item_ids.size))
    except DimensionError as exc:
        raise ParseError(f"duplicate (user, item) rating: {exc}") from None
    if return_ids:
        return data, user_ids, item_ids
    return data


def load_mask(path, user_ids, item_ids, fmt="auto"):
    """Read held-out triples as an ``EvalMask`` indexed like a training set.

    ``user_ids``/``item_ids`` are the original IDs of the training rows and
    columns (as returned by ``ingest_ratings(..., return_ids=True)``).
    Triples whose user or item never occurs in training are dropped with a
    warning, since no factor row exists for them.
    """
    users, items, ratings = _read_triples(path, fmt)
    user_ids = np.asarray(user_ids)
    item_ids = np.asarray(item_ids)
    rows = np.searchsorted(user_ids, users).clip(max=user_ids.size - 1)
    cols = np.searchsorted(item_ids, items).clip(max=item_ids.size - 1)
    known = (user_ids[rows] == np.asarray(users)) & (item_ids[cols] == np.asarray(items))
    if not known.all():
        log.warning("dropped %d held-out rating(s) for unseen users or items",
                    int((~known).sum()))
    return EvalMask(rows[known], cols[known], np.asarray(ratings, dtype=float)[known])


def write_triples(path, rows, cols, values):
    """Write one-based ``row<TAB>col<TAB>value`` lines at full precision."""
    with open(Path(path), "w", encoding="utf-8") as fh:
        for i, j, v in zip(np.asarray(rows).tolist(), np.asarray(cols).tolist(),
                           np.asarray(values, dtype=float).tolist()):
            fh.write(f"{i + 1}\t{j + 1}\t{v!r}\n")


def l2_objective(data, factors):
    res = data.values - gather_product(factors.U, factors.V, data.omega)
    return 0.5 * float(res @ res) + 0.5 * factors.lam * float(
        np.sum(factors.U ** 2) + np.sum(factors.V ** 2))


def _ridge_rows(omega_rows, omega_cols, values, other, n_rows, lam):
    """Exact ridge solve for every row given the other factor."""
    r = other.shape[1]
    B = other[omega_cols]
    order = np.argsort(omega_rows, kind="stable")
    rr = omega_rows[order]
    B = B[order]
    starts = np.searchsorted(rr, np.arange(n_rows))
    gram = np.add.reduceat(B[:, :, None] * B[:, None, :], starts, axis=0)
    rhs = np.add.reduceat(B * values[order][:, None], starts, axis=0)
    gram += lam * np.eye(r)
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def l2_baseline_fit(data, rank, lam, iters=50, seed=0, tol=1e-6, return_trace=False):
    """Alternating ridge regression for the squared loss on observed entries.

    Each half-sweep minimises exactly over one factor, so the objective
    never increases.  ``lam`` is floored at ``1e-10`` to keep every normal
    system nonsingular.
    """
    if rank < 1:
        raise ParameterError(f"rank must be >= 1, got {rank}")
    m, n = data.shape
    lam_eff = max(float(lam), 1e-10)
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((m, rank))
    V = rng.standard_normal((n, rank))
    rows, cols, vals = data.omega.rows, data.omega.cols, data.values
    factors = FactorPair(U, V, lam_eff)
    trace = [l2_objective(data, factors)]
    for _ in range(int(iters)):
        U = _ridge_rows(rows, cols, vals, V, m, lam_eff)
        V = _ridge_rows(cols, rows, vals, U, n, lam_eff)
        factors = FactorPair(U, V, lam_eff)
        trace.append(l2_objective(data, factors))
        if abs(trace[-2] - trace[-1]) <= tol * max(1.0, abs(trace[-2])):
            break
    if return_trace:
        return factors, trace
    return factors


def protocol_config(loss="lsp", seed=0, theta=None, delta=None, **overrides):
    """Solver settings used for the synthetic experiments.

    Rank 5 and ``lam="auto"``; a spectral start followed by an l1 pass,
    which keeps the nonconvex fit out of the poor local minima a plain
    Gaussian start falls into.
    """
    kw = dict(rank=5, penalty=make_penalty(loss, theta, delta), init=SpectralInit(seed),
              warmup=None if loss == "l1" else "l1")
    kw.update(overrides)
    return RmfnlConfig(**kw)


def read_spec_file(path):
    """Parse a ``key = value`` synthetic spec file into a ``SyntheticSpec``."""
    kinds = {f.name: f.type for f in fields(SyntheticSpec)}
    kw = {}
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                key, sep, val = line.partition(":")
            key = key.strip().replace("-", "_")
            if not sep or key not in kinds:
                raise ParseError(f"unrecognised entry {line!r}", line=lineno)
            try:
                kw[key] = int(val) if kinds[key] in ("int", int) else float(val)
            except ValueError:
                raise ParseError(f"bad value for {key}: {val.strip()!r}", line=lineno) from None
    try:
        return SyntheticSpec(**kw)
    except RmfnlError:
        raise
    except TypeError as exc:
        raise ParseError(str(exc)) from None
