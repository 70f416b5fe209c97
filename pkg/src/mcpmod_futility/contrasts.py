"""Optimal contrasts and the (generalized) MCP-Mod maximum contrast test."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dose_models import CandidateShape, DoseDesign, candidate_mean_vector
from .errors import DegenerateContrast, FlatShape
from .estimates import GroupEstimates
from .mvn import critical_value, spd_inverse


def optimal_contrast(mu0, S) -> np.ndarray:
    """Contrast maximizing ``c'mu0 / sqrt(c'Sc)`` subject to ``c'1 = 0``.

    ``c ∝ S^-1 (mu0 - 1 (1'S^-1 mu0) / (1'S^-1 1))``, scaled to unit norm with
    ``c'mu0 > 0``.
    """
    mu0 = np.asarray(mu0, dtype=float)
    if np.ptp(mu0) <= 1e-12 * max(1.0, np.max(np.abs(mu0))):
        raise FlatShape("constant mean vector has no contrast")
    Sinv = spd_inverse(S)
    one = np.ones_like(mu0)
    w = Sinv @ one
    c = Sinv @ mu0 - w * (w @ mu0) / (w @ one)
    c /= np.linalg.norm(c)
    if c @ mu0 < 0:
        c = -c
    return c


@dataclass(frozen=True)
class ContrastSet:
    C: np.ndarray
    shapes: tuple
    doses: tuple = ()

    @property
    def M(self) -> int:
        return self.C.shape[0]

    def to_csv(self, path) -> None:
        doses = self.doses or tuple(range(self.C.shape[1]))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model"] + [f"d{d:g}" for d in doses])
            for shape, row in zip(self.shapes, self.C):
                w.writerow([shape.label() if hasattr(shape, "label") else str(shape)] + [repr(float(x)) for x in row])


def build_contrast_set(shapes: Sequence[CandidateShape], design: DoseDesign, S=None) -> ContrastSet:
    """Optimal contrasts for each candidate shape; ``S`` defaults to ``diag(1/n_i)`` (or ``1/alloc``)."""
    if S is None:
        weights = np.asarray(design.n if design.n else design.alloc, dtype=float)
        S = np.diag(1.0 / weights)
    C = np.vstack([optimal_contrast(candidate_mean_vector(s, design), S) for s in shapes])
    return ContrastSet(C, tuple(shapes), tuple(design.doses))


@dataclass(frozen=True)
class TestStatVector:
    __test__ = False

    T: np.ndarray
    corr: np.ndarray
    crit: Optional[float] = None
    rejected: Optional[bool] = None


def scaling(C, S) -> np.ndarray:
    """Diagonal of ``P``: ``(c_m' S c_m)^(-1/2)``."""
    v = np.einsum("mi,ij,mj->m", C, S, C)
    if np.any(v <= 0):
        raise DegenerateContrast("contrast with non-positive variance")
    return 1.0 / np.sqrt(v)


def correlation(C, S) -> np.ndarray:
    p = scaling(C, S)
    corr = p[:, None] * (C @ S @ C.T) * p[None, :]
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def test_statistics(cs: ContrastSet, est: GroupEstimates) -> TestStatVector:
    p = scaling(cs.C, est.S)
    return TestStatVector(p * (cs.C @ est.mu_hat), correlation(cs.C, est.S))


test_statistics.__test__ = False


def mcp_decision(ts: TestStatVector, alpha: float, crit: Optional[float] = None) -> TestStatVector:
    """Attach the critical value (from ``ts.corr`` unless given) and the rejection flag."""
    if crit is None:
        crit = critical_value(ts.corr, alpha)
    return replace(ts, crit=float(crit), rejected=bool(np.max(ts.T) > crit))
