"""Week-12 adjusted means from incomplete longitudinal data.

``fit_mmrm`` is a repeated-measures model with arm-by-visit means,
baseline-by-visit slopes and an unstructured visit covariance, fitted by
maximum likelihood with EM. Because every visit shares the same regressors,
the complete-data M-step is ordinary least squares per visit; the E-step fills
missing changes with their conditional normal expectations.

``fit_completers`` is the ANCOVA on patients with a final-visit value and
``gls_information`` the single-arm compound-symmetry information calculator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .dataset import TrialDataset
from .errors import NotPositiveDefinite, SingularDesign
from .estimates import GroupEstimates
from .mvn import cholesky

logger = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MmrmFit:
    cell_means: np.ndarray       # (arms, visits), change from baseline at the baseline center
    baseline_slopes: np.ndarray  # (visits,)
    resid_cov: np.ndarray        # (visits, visits)
    lsmeans_week12: GroupEstimates
    loglik: float
    iters: int
    converged: bool
    loglik_trace: tuple = ()
    visit_weeks: tuple = ()
    dropped_visits: tuple = ()
    center: float = 0.0
    n_used: int = 0

    @property
    def sigma(self) -> float:
        """Final-visit marginal residual standard deviation."""
        return float(np.sqrt(self.resid_cov[-1, -1]))


@dataclass(frozen=True)
class AncovaFit:
    estimates: GroupEstimates
    sigma: float
    n_used: int
    center: float

    @property
    def mu_hat(self):
        return self.estimates.mu_hat

    @property
    def S(self):
        return self.estimates.S


def _design(arm, baseline, k, center, adjust):
    X = np.zeros((arm.shape[0], k + (1 if adjust else 0)))
    X[np.arange(arm.shape[0]), arm] = 1.0
    if adjust:
        X[:, k] = baseline - center
    return X


def _varies(baseline) -> bool:
    # a constant baseline carries no covariate information; the model reduces to group means
    if np.ptp(baseline) == 0:
        logger.info("baseline is constant; fitting without the baseline covariate")
        return False
    return True


def _check_rank(X, what):
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesign(f"{what}: design matrix is rank deficient")


def fit_completers(
    data: TrialDataset,
    center: Optional[float] = None,
    adjust_baseline: bool = True,
    residual_df: bool = False,
) -> AncovaFit:
    """ANCOVA of final-visit change on arm and baseline among completers.

    By default the covariance uses the ML residual variance (divisor n) so
    that with complete data it coincides with the repeated-measures fit;
    ``residual_df=True`` divides by n - p instead.
    """
    k = data.n_arms
    if center is None:
        center = float(np.mean(data.baseline)) if data.n else 0.0
    done = data.observed[:, -1]
    arm = data.arm[done]
    counts = np.bincount(arm, minlength=k)
    if np.any(counts < 2):
        raise SingularDesign(f"arm(s) {np.nonzero(counts < 2)[0].tolist()} have fewer than 2 completers")
    y = data.changes[done, -1]
    adjust_baseline = adjust_baseline and _varies(data.baseline[done])
    X = _design(arm, data.baseline[done], k, center, adjust_baseline)
    _check_rank(X, "completer ANCOVA")
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ X.T @ y
    resid = y - X @ beta
    dof = y.shape[0] - X.shape[1] if residual_df else y.shape[0]
    sigma2 = float(resid @ resid / dof) if dof > 0 else 0.0
    if not sigma2 > 0:
        raise SingularDesign("zero residual variance")
    S = sigma2 * XtX_inv[:k, :k]
    return AncovaFit(GroupEstimates(beta[:k], S), float(np.sqrt(sigma2)), int(y.shape[0]), float(center))


class _Patterns:
    """Patients grouped by their observed-visit pattern."""

    def __init__(self, observed: np.ndarray):
        keys, inverse = np.unique(observed, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        self.masks = [k.astype(bool) for k in keys]
        self.index = [np.nonzero(inverse == g)[0] for g in range(len(keys))]


def _loglik_and_estep(Y, XB, Sigma, pats: _Patterns):
    """Observed-data log-likelihood, filled responses and summed conditional covariance."""
    V = Sigma.shape[0]
    Yhat = Y.copy()
    Csum = np.zeros((V, V))
    ll = 0.0
    for o, idx in zip(pats.masks, pats.index):
        m = ~o
        Soo = Sigma[np.ix_(o, o)]
        L = cholesky(Soo)
        R = Y[np.ix_(idx, o)] - XB[np.ix_(idx, o)]
        Z = linalg.solve_triangular(L, R.T, lower=True)
        ll -= 0.5 * (idx.size * (o.sum() * LOG2PI + 2.0 * np.sum(np.log(np.diag(L)))) + np.sum(Z * Z))
        if m.any():
            Smo = Sigma[np.ix_(m, o)]
            K = linalg.cho_solve((L, True), Smo.T).T
            Yhat[np.ix_(idx, m)] = XB[np.ix_(idx, m)] + R @ K.T
            Csum[np.ix_(m, m)] += idx.size * (Sigma[np.ix_(m, m)] - K @ Smo.T)
    return ll, Yhat, Csum


_DEGENERATE = 1e-10


def _init(Y, X, obs, adjust):
    n, V = Y.shape
    complete = obs.all(axis=1)
    if complete.sum() >= max(3, X.shape[1] + 1) and np.linalg.matrix_rank(X[complete]) == X.shape[1]:
        Xc, Yc = X[complete], Y[complete]
        B = np.linalg.lstsq(Xc, Yc, rcond=None)[0]
        E = Yc - Xc @ B
        Sigma = E.T @ E / Xc.shape[0]
        try:
            cholesky(Sigma)
            return B, Sigma
        except NotPositiveDefinite:
            pass
    # available-case regressions and a compound-symmetry start
    B = np.zeros((X.shape[1], V))
    var = np.zeros(V)
    for v in range(V):
        rows = obs[:, v]
        Xv = X[rows]
        B[:, v] = np.linalg.lstsq(Xv, Y[rows, v], rcond=None)[0]
        r = Y[rows, v] - Xv @ B[:, v]
        var[v] = r @ r / max(rows.sum(), 1)
    s2 = max(float(np.mean(var)), 1e-8)
    Sigma = s2 * (0.5 * np.eye(V) + 0.5)
    return B, Sigma


def gls_covariance(X, Sigma, pats: _Patterns) -> np.ndarray:
    """``(sum_i X_i' Sigma_i^-1 X_i)^-1`` for the stacked per-visit coefficients (visit-major)."""
    V = Sigma.shape[0]
    p = X.shape[1]
    info = np.zeros((V * p, V * p))
    for o, idx in zip(pats.masks, pats.index):
        W = np.zeros((V, V))
        W[np.ix_(o, o)] = np.linalg.inv(Sigma[np.ix_(o, o)])
        Xp = X[idx]
        info += np.kron(W, Xp.T @ Xp)
    info = 0.5 * (info + info.T)
    try:
        return linalg.cho_solve((cholesky(info), True), np.eye(V * p))
    except NotPositiveDefinite:
        raise SingularDesign("GLS information matrix is singular") from None


def fit_mmrm(
    data: TrialDataset,
    *,
    adjust_baseline: bool = True,
    center: Optional[float] = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> MmrmFit:
    """ML repeated-measures fit by EM; returns week-12 (final visit) LS means.

    LS means are evaluated at ``center`` (default: mean baseline of every
    patient in ``data``). Patients without any post-baseline value carry no
    likelihood contribution and are dropped, as are visits nobody has
    reached. If EM stops at ``max_iter`` the best iterate is returned with
    ``converged=False``.

    Raises:
        SingularDesign: if the final visit or an arm lacks usable data, or the
            residual covariance degenerates (unbounded likelihood).
    """
    k = data.n_arms
    if center is None:
        center = float(np.mean(data.baseline)) if data.n else 0.0
    obs_all = data.observed
    keep_v = obs_all.any(axis=0)
    if not keep_v[-1]:
        raise SingularDesign("no patient has reached the final visit")
    dropped = tuple(w for w, kv in zip(data.visit_weeks, keep_v) if not kv)
    if dropped:
        logger.info("dropping visits without data: %s", dropped)
    rows = obs_all[:, keep_v].any(axis=1)
    obs = obs_all[np.ix_(rows, keep_v)]
    Y = np.where(obs, data.changes[np.ix_(rows, keep_v)], 0.0)
    arm = data.arm[rows]
    counts = np.bincount(arm, minlength=k)
    if np.any(counts < 2):
        raise SingularDesign(f"arm(s) {np.nonzero(counts < 2)[0].tolist()} have fewer than 2 patients with data")
    final_counts = np.bincount(arm[obs[:, -1]], minlength=k)
    if np.any(final_counts < 1):
        raise SingularDesign(f"arm(s) {np.nonzero(final_counts < 1)[0].tolist()} have no final-visit data")
    adjust_baseline = adjust_baseline and _varies(data.baseline[rows])
    X = _design(arm, data.baseline[rows], k, center, adjust_baseline)
    _check_rank(X, "repeated-measures model")

    pats = _Patterns(obs)
    XtX = X.T @ X
    B, Sigma = _init(Y, X, obs, adjust_baseline)
    trace = []
    converged = False
    n = Y.shape[0]
    it = 0
    for it in range(1, max_iter + 1):
        ll, Yhat, Csum = _loglik_and_estep(Y, X @ B, Sigma, pats)
        if trace and abs(ll - trace[-1]) <= tol * abs(trace[-1]):
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        B = np.linalg.solve(XtX, X.T @ Yhat)
        E = Yhat - X @ B
        Sigma = (E.T @ E + Csum) / n
        Sigma = 0.5 * (Sigma + Sigma.T)
        ev = np.linalg.eigvalsh(Sigma)
        if ev[0] <= _DEGENERATE * ev[-1]:
            # likelihood unbounded along this path: too few joint observations per visit pair
            raise SingularDesign("residual covariance degenerates during EM")
    else:
        ll, _, _ = _loglik_and_estep(Y, X @ B, Sigma, pats)
        trace.append(ll)
    if not converged:
        logger.warning("EM did not converge in %d iterations", max_iter)

    V = Sigma.shape[0]
    p = X.shape[1]
    cov = gls_covariance(X, Sigma, pats)
    block = slice((V - 1) * p, (V - 1) * p + k)
    S = cov[block, block]
    cell = B[:k, :].copy()
    slopes = B[k, :] if adjust_baseline else np.zeros(V)
    est = GroupEstimates(cell[:, -1], S)
    weeks = tuple(w for w, kv in zip(data.visit_weeks, keep_v) if kv)
    return MmrmFit(cell, slopes, Sigma, est, float(trace[-1]), it, converged, tuple(trace),
                   weeks, dropped, float(center), int(n))


def gls_information(patterns, rho: float, sigma: float = 1.0, n_visits: int = 3):
    """Information (inverse variance) for the final-visit mean of a single arm.

    ``patterns`` is either one observed-visit count per patient (monotone
    missingness) or a boolean ``(patients, n_visits)`` mask. Returns
    ``(longitudinal, completer)`` information under compound symmetry.
    """
    pat = np.asarray(patterns)
    if pat.ndim == 1:
        counts = pat.astype(int)
        mask = np.arange(n_visits)[None, :] < counts[:, None]
    else:
        mask = pat.astype(bool)
        n_visits = mask.shape[1]
    Sigma = sigma**2 * ((1.0 - rho) * np.eye(n_visits) + rho)
    completer = float(mask[:, -1].sum()) / sigma**2
    if completer == 0:
        return 0.0, 0.0
    info = np.zeros((n_visits, n_visits))
    for row in mask:
        if row.any():
            info[np.ix_(row, row)] += np.linalg.inv(Sigma[np.ix_(row, row)])
    var = np.linalg.inv(info)[-1, -1]
    return float(1.0 / var), completer
