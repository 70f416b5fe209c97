"""Multivariate normal primitives.

SPD linear algebra, sampling, equi-coordinate probabilities
``P(X_1 < c, ..., X_M < c)`` and the max-statistic critical value.

Probabilities use the separation-of-variables transform with Genz–Bretz
variable reordering, integrated by a randomized rank-1 (Richtmyer) lattice
rule with tent periodization and antithetic pairs. The spread over
independent random shifts gives the reported standard error. Singular
covariances (more contrasts than dose groups) are integrated in their rank
dimension: rows that are linear in earlier pivots become extra bounds.
"""

from __future__ import annotations

import functools
import logging
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize, special

from .errors import DimensionTooLarge, NotPositiveDefinite

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20230811
N_RANDOMIZATIONS = 12
DEFAULT_ABS_TOL = 5e-4
DEFAULT_MAX_DIM = 25

_PRIMES = np.array(
    [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
     71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139],
    dtype=float,
)
_TINY = 1e-300


class ProbEstimate(NamedTuple):
    value: float
    std_error: float


def as_rng(rng=None) -> np.random.Generator:
    """Coerce a seed or generator into a ``Generator``; ``None`` means the fixed default seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(DEFAULT_SEED if rng is None else rng)


def _square(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.max(np.abs(m)), 1.0) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=1e-12, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    return m


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises:
        NotPositiveDefinite: if a pivot is not strictly positive.
    """
    m = _square(m)
    try:
        factor = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diag(factor) > 0):
        raise NotPositiveDefinite("non-positive Cholesky pivot")
    return factor


def log_det(m) -> float:
    return float(2.0 * np.sum(np.log(np.diag(cholesky(m)))))


def spd_inverse(m) -> np.ndarray:
    m = _square(m)
    factor = cholesky(m)
    inv = linalg.cho_solve((factor, True), np.eye(m.shape[0]))
    return 0.5 * (inv + inv.T)


def is_spd(m) -> bool:
    try:
        cholesky(m)
    except (NotPositiveDefinite, ValueError):
        return False
    return True


def mvn_sample(mean, cov, rng, size=None) -> np.ndarray:
    """Draw ``mean + L z`` with ``z`` standard normal; shape ``(size, dim)`` or ``(dim,)``."""
    mean = np.asarray(mean, dtype=float)
    factor = cholesky(cov)
    if factor.shape[0] != mean.shape[0]:
        raise ValueError("mean and covariance dimensions differ")
    rng = as_rng(rng)
    shape = (mean.shape[0],) if size is None else (size, mean.shape[0])
    z = rng.standard_normal(shape)
    return mean + z @ factor.T


class _Factor(NamedTuple):
    b: np.ndarray   # bounds of the pivot rows, in pivot order
    L: np.ndarray   # (rank, rank) lower-triangular factor of the pivot rows
    extra: list     # per pivot i: (bounds, coefficient rows of length i+1) of dependent rows


_INFEASIBLE = _Factor(np.array([-np.inf]), np.ones((1, 1)), [(np.empty(0), np.empty((0, 1)))])


def _factorize(b: np.ndarray, cov: np.ndarray, eps: float = 1e-10) -> _Factor:
    """Rank-revealing Cholesky with Genz–Bretz priority (most restrictive row first).

    Rows whose conditional variance falls below ``eps`` times their variance
    are linear in the earlier pivots; each becomes a one-sided bound on the
    last pivot it loads on.
    """
    m = b.shape[0]
    diag = np.diag(cov).copy()
    if np.any(diag <= 0):
        raise NotPositiveDefinite("non-positive variance")
    if np.linalg.eigvalsh(cov / np.sqrt(np.outer(diag, diag)))[0] < -1e-8:
        raise NotPositiveDefinite("covariance is not positive semidefinite")
    order = list(range(m))
    L = np.zeros((m, m))
    y = np.zeros(m)
    rank = 0
    for i in range(m):
        rest = np.array(order[i:])
        s = diag[rest] - np.sum(L[rest, :i] ** 2, axis=1)
        live = s > eps * diag[rest]
        if not np.any(live):
            break
        bt = np.full(rest.shape[0], np.inf)
        bt[live] = (b[rest[live]] - L[rest[live], :i] @ y[:i]) / np.sqrt(s[live])
        j = int(np.argmin(np.where(live, special.ndtr(bt), np.inf)))
        order[i], order[i + j] = order[i + j], order[i]
        piv = order[i]
        L[piv, i] = np.sqrt(s[j])
        others = order[i + 1:]
        if others:
            L[others, i] = (cov[others, piv] - L[others, :i] @ L[piv, :i]) / L[piv, i]
        phi = special.ndtr(bt[j])
        # mean of a standard normal truncated to (-inf, bt]
        y[i] = -np.exp(-0.5 * bt[j] ** 2) / np.sqrt(2 * np.pi) / phi if phi > 1e-300 else bt[j]
        rank += 1
    pivots = order[:rank]
    extra_b = [[] for _ in range(rank)]
    extra_c = [[] for _ in range(rank)]
    for row in order[rank:]:
        coef = L[row, :rank]
        big = np.nonzero(np.abs(coef) > 1e-8 * np.sqrt(diag[row]))[0]
        if big.size == 0:
            # numerically constant row: feasible everywhere or nowhere
            if b[row] <= 0:
                return _INFEASIBLE
            continue
        last = int(big[-1])
        extra_b[last].append(b[row])
        extra_c[last].append(coef[: last + 1])
    extra = [
        (np.array(extra_b[i]), np.array(extra_c[i]).reshape(len(extra_b[i]), i + 1))
        for i in range(rank)
    ]
    return _Factor(b[pivots], L[np.ix_(pivots, range(rank))], extra)


def _integrand(w: np.ndarray, fac: _Factor) -> np.ndarray:
    r = fac.b.shape[0]
    npts = w.shape[0]
    y = np.zeros((npts, r))
    f = np.ones(npts)
    for i in range(r):
        hi = (fac.b[i] - y[:, :i] @ fac.L[i, :i]) / fac.L[i, i]
        bounds, coefs = fac.extra[i]
        if bounds.size:
            lims = (bounds - y[:, :i] @ coefs[:, :i].T) / coefs[:, i]
            pos = coefs[:, i] > 0
            if pos.any():
                hi = np.minimum(hi, lims[:, pos].min(axis=1))
            plo = special.ndtr(lims[:, ~pos].max(axis=1)) if (~pos).any() else 0.0
        else:
            plo = 0.0
        e = np.maximum(special.ndtr(hi) - plo, 0.0)
        f *= e
        if i + 1 < r:
            u = np.clip(plo + w[:, i] * e, _TINY, 1.0 - 1e-16)
            y[:, i] = special.ndtri(u)
    return f


def _lattice_estimates(fac: _Factor, shifts: np.ndarray, n: int) -> np.ndarray:
    """One estimate per random shift, each from ``n`` antithetic lattice pairs."""
    dim = fac.b.shape[0] - 1
    k = shifts.shape[0]
    gen = np.sqrt(_PRIMES[:dim]) % 1.0
    base = np.arange(1, n + 1, dtype=float)[:, None] * gen
    x = np.abs(2.0 * ((base[None, :, :] + shifts[:, None, :dim]) % 1.0) - 1.0).reshape(k * n, dim)
    vals = _integrand(np.vstack([x, 1.0 - x]), fac)
    return 0.5 * (vals[: k * n] + vals[k * n:]).reshape(k, n).mean(axis=1)


def _prob_with_shifts(b, cov, shifts, n) -> ProbEstimate:
    fac = _factorize(b, cov)
    if fac.b.shape[0] == 1:
        return ProbEstimate(float(_integrand(np.zeros((1, 0)), fac)[0]), 0.0)
    est = _lattice_estimates(fac, shifts, n)
    value = float(np.clip(est.mean(), 0.0, 1.0))
    return ProbEstimate(value, float(est.std(ddof=1) / np.sqrt(est.shape[0])))


def equicoordinate_prob(
    mean,
    cov,
    c: float,
    rng=None,
    *,
    abs_tol: float = DEFAULT_ABS_TOL,
    n_min: int = 256,
    n_max: int = 1 << 14,
    max_dim: int = DEFAULT_MAX_DIM,
) -> ProbEstimate:
    """Estimate ``P(X_1 < c, ..., X_M < c)`` for ``X ~ MVN(mean, cov)``.

    ``cov`` may be positive semidefinite. The lattice size doubles from
    ``n_min`` until the standard error over the random shifts is at most
    ``abs_tol`` (or ``n_max`` is reached).

    Raises:
        DimensionTooLarge: if ``M > max_dim``.
        NotPositiveDefinite: if ``cov`` is not positive semidefinite.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(_square(cov))
    m = mean.shape[0]
    if cov.shape[0] != m:
        raise ValueError("mean and covariance dimensions differ")
    if m > max_dim:
        raise DimensionTooLarge(f"dimension {m} exceeds cap {max_dim}")
    b = c - mean
    shifts = as_rng(rng).random((N_RANDOMIZATIONS, max(m - 1, 1)))
    n = n_min
    while True:
        est = _prob_with_shifts(b, cov, shifts, n)
        if est.std_error <= abs_tol or n >= n_max:
            return est
        n *= 2


def critical_value(corr, alpha: float, rng=None, *, n_points: int = 4096, tol: float = 1e-4) -> float:
    """Equi-coordinate quantile ``c`` with ``P(max_m T_m > c) = alpha`` under ``MVN(0, corr)``.

    Common random shifts make the estimated probability a fixed function of
    ``c``; the root is bracketed by bisection on ``[0, 6]`` and refined with
    Brent's secant/inverse-quadratic steps. Results for the default stream
    are cached per correlation matrix.
    """
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    corr = _square(corr)
    if not np.allclose(np.diag(corr), 1.0, atol=1e-10):
        raise ValueError("corr must have unit diagonal")
    if corr.shape[0] > DEFAULT_MAX_DIM:
        raise DimensionTooLarge(f"dimension {corr.shape[0]} exceeds cap {DEFAULT_MAX_DIM}")
    if rng is None:
        key = np.round(corr, 12).tobytes()
        return _cached_critical_value(key, corr.shape[0], alpha, n_points, tol)
    return _critical_value(corr, alpha, as_rng(rng), n_points, tol)


@functools.lru_cache(maxsize=256)
def _cached_critical_value(key: bytes, m: int, alpha: float, n_points: int, tol: float) -> float:
    corr = np.frombuffer(key, dtype=float).reshape(m, m)
    return _critical_value(corr, alpha, as_rng(None), n_points, tol)


def _critical_value(corr, alpha, rng, n_points, tol) -> float:
    m = corr.shape[0]
    shifts = rng.random((N_RANDOMIZATIONS, max(m - 1, 1)))
    target = 1.0 - alpha

    def gap(c):
        return _prob_with_shifts(np.full(m, c), corr, shifts, n_points).value - target

    lo, hi = 0.0, 6.0
    for _ in range(4):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    root = optimize.brentq(gap, lo, hi, xtol=1e-8)
    if abs(gap(root)) > tol:
        # reordering can make the estimate jump; fall back to plain bisection
        root = optimize.bisect(gap, lo, hi, xtol=1e-10)
    return float(root)
