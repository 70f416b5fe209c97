"""First-stage summary estimates shared by the test and the interim calculations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mvn import cholesky


@dataclass(frozen=True)
class GroupEstimates:
    """Adjusted dose-group means ``mu_hat`` with covariance ``S``."""

    mu_hat: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu_hat, dtype=float)
        S = np.asarray(self.S, dtype=float)
        if mu.ndim != 1 or S.shape != (mu.shape[0], mu.shape[0]):
            raise ValueError("mu_hat and S dimensions disagree")
        S = 0.5 * (S + S.T)
        cholesky(S)
        object.__setattr__(self, "mu_hat", mu)
        object.__setattr__(self, "S", S)

    @property
    def k(self) -> int:
        return self.mu_hat.shape[0]
