"""Predictive and conditional power at an interim analysis.

Interim estimates ``mu_[0,t]`` with covariance ``S_[0,t]`` are combined with
the not-yet-observed second stage (covariance ``S_(t,1]``) by precision
weighting, ``S_[0,1] = (S_[0,t]^-1 + S_(t,1]^-1)^-1``. The vector of final
test statistics is then multivariate normal, and the probability that its
maximum exceeds the final critical value is an equi-coordinate probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .contrasts import ContrastSet, correlation, scaling
from .dose_models import DoseDesign
from .errors import DegenerateVariance, NoInformationRemaining, NotPositiveDefinite
from .estimates import GroupEstimates
from .mvn import ProbEstimate, cholesky, critical_value, equicoordinate_prob, log_det, spd_inverse

__all__ = [
    "GroupEstimates",
    "InterimState",
    "PowerResult",
    "remaining_covariance",
    "pooled_estimate",
    "information_fraction",
    "predictive_power",
    "conditional_power",
    "homoscedastic_state",
    "interim_powers",
]


def remaining_covariance(S_full, S_interim) -> np.ndarray:
    """Solve ``S_full = (S_interim^-1 + S_rem^-1)^-1`` for ``S_rem``.

    Raises:
        NoInformationRemaining: if ``S_full^-1 - S_interim^-1`` is not positive definite.
    """
    prec = spd_inverse(S_full) - spd_inverse(S_interim)
    prec = 0.5 * (prec + prec.T)
    try:
        cholesky(prec)
    except NotPositiveDefinite:
        raise NoInformationRemaining("interim covariance carries at least the final information") from None
    return spd_inverse(prec)


def pooled_estimate(stage1: GroupEstimates, stage2: GroupEstimates) -> GroupEstimates:
    P1 = spd_inverse(stage1.S)
    P2 = spd_inverse(stage2.S)
    S = spd_inverse(P1 + P2)
    return GroupEstimates(S @ (P1 @ stage1.mu_hat + P2 @ stage2.mu_hat), S)


def information_fraction(S_full, S_interim) -> float:
    """``(det S_full / det S_interim)^(1/k)``, computed on the log scale."""
    k = np.shape(S_full)[0]
    return float(np.exp((log_det(S_full) - log_det(S_interim)) / k))


@dataclass(frozen=True)
class InterimState:
    stage1: GroupEstimates
    final_cov: np.ndarray
    remaining_cov: np.ndarray
    info_fraction: float

    @classmethod
    def build(cls, stage1: GroupEstimates, final_cov) -> "InterimState":
        final_cov = np.asarray(final_cov, dtype=float)
        rem = remaining_covariance(final_cov, stage1.S)
        return cls(stage1, final_cov, rem, information_fraction(final_cov, stage1.S))


def homoscedastic_state(ybar, sigma: float, design, t: float) -> InterimState:
    """Single-visit homoscedastic interim: ``S_[0,t] = sigma^2 D / t``, ``S_[0,1] = sigma^2 D``."""
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    n = np.asarray(design.n if isinstance(design, DoseDesign) else design, dtype=float)
    D = np.diag(1.0 / n)
    final = sigma**2 * D
    stage1 = GroupEstimates(np.asarray(ybar, dtype=float), final / t)
    return InterimState(stage1, final, final / (1.0 - t), float(t))


def final_critical_value(cs: ContrastSet, final_cov, alpha: float) -> float:
    return critical_value(correlation(cs.C, final_cov), alpha)


def _success_prob(mean, cov, crit, rng, abs_tol) -> ProbEstimate:
    if np.any(np.diag(cov) <= 0):
        raise DegenerateVariance("test statistic with zero predictive variance")
    cov = 0.5 * (cov + cov.T)
    below = equicoordinate_prob(mean, cov, crit, rng, abs_tol=abs_tol)
    return ProbEstimate(1.0 - below.value, below.std_error)


def _projection(state: InterimState, cs: ContrastSet):
    """``P C S_[0,1] S_(t,1]^-1``, the map from second-stage estimate to test statistics."""
    p = scaling(cs.C, state.final_cov)
    pc = p[:, None] * cs.C
    return pc, pc @ state.final_cov @ spd_inverse(state.remaining_cov)


def predictive_power(
    state: InterimState, cs: ContrastSet, alpha: float = 0.025, *,
    crit: Optional[float] = None, rng=None, abs_tol: float = 5e-4,
) -> ProbEstimate:
    """Bayesian predictive probability (flat prior) that the final test rejects."""
    if crit is None:
        crit = final_critical_value(cs, state.final_cov, alpha)
    pc, A = _projection(state, cs)
    mean = pc @ state.stage1.mu_hat
    cov = A @ (state.stage1.S + state.remaining_cov) @ A.T
    return _success_prob(mean, cov, crit, rng, abs_tol)


def conditional_power(
    state: InterimState, cs: ContrastSet, mu_tilde, alpha: float = 0.025, *,
    crit: Optional[float] = None, rng=None, abs_tol: float = 5e-4,
) -> ProbEstimate:
    """Probability that the final test rejects if the second stage has mean ``mu_tilde``."""
    if crit is None:
        crit = final_critical_value(cs, state.final_cov, alpha)
    mu_tilde = np.asarray(mu_tilde, dtype=float)
    pc, A = _projection(state, cs)
    pooled = state.final_cov @ (spd_inverse(state.stage1.S) @ state.stage1.mu_hat
                                + spd_inverse(state.remaining_cov) @ mu_tilde)
    mean = pc @ pooled
    cov = A @ state.remaining_cov @ A.T
    return _success_prob(mean, cov, crit, rng, abs_tol)


@dataclass(frozen=True)
class PowerResult:
    predictive: float
    cond_planned: float
    cond_interim: float
    errors: tuple = (0.0, 0.0, 0.0)


def interim_powers(
    state: InterimState, cs: ContrastSet, planned_effects, alpha: float = 0.025, *,
    crit: Optional[float] = None, rng=None, abs_tol: float = 5e-4,
) -> PowerResult:
    """All three metrics.

    ``planned_effects`` are design effects versus placebo; the planned
    conditional power uses the interim placebo estimate plus these effects,
    the interim variant uses ``mu_[0,t]`` itself.
    """
    if crit is None:
        crit = final_critical_value(cs, state.final_cov, alpha)
    mu0 = state.stage1.mu_hat
    planned = mu0[0] + np.asarray(planned_effects, dtype=float)
    kw = dict(crit=crit, rng=rng, abs_tol=abs_tol)
    pp = predictive_power(state, cs, alpha, **kw)
    cpp = conditional_power(state, cs, planned, alpha, **kw)
    cpi = conditional_power(state, cs, mu0, alpha, **kw)
    return PowerResult(pp.value, cpp.value, cpi.value, (pp.std_error, cpp.std_error, cpi.std_error))
