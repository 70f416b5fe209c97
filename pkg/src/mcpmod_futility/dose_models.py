"""Candidate dose-response shapes and the time-varying Emax effect."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DoseDesign:
    """Dose levels (mg, placebo first), allocation weights and per-arm sample sizes."""

    doses: tuple
    alloc: tuple
    n: tuple = ()

    def __post_init__(self):
        doses = tuple(float(d) for d in self.doses)
        alloc = tuple(float(a) for a in self.alloc)
        object.__setattr__(self, "doses", doses)
        object.__setattr__(self, "alloc", alloc)
        object.__setattr__(self, "n", tuple(int(x) for x in self.n))
        if len(doses) < 2:
            raise ValueError("need at least two arms")
        if doses[0] != 0.0:
            raise ValueError("first dose must be placebo (0)")
        if any(b <= a for a, b in zip(doses, doses[1:])):
            raise ValueError("doses must be strictly increasing")
        if len(alloc) != len(doses) or any(a <= 0 for a in alloc):
            raise ValueError("alloc needs one positive weight per dose")
        if self.n and (len(self.n) != len(doses) or min(self.n) < 1):
            raise ValueError("n needs one positive sample size per dose")

    @property
    def k(self) -> int:
        return len(self.doses)

    @property
    def block(self) -> tuple:
        """Integer allocation block, e.g. (2, 1, 1, 1, 2, 2)."""
        ints = [int(round(a)) for a in self.alloc]
        if not np.allclose(ints, self.alloc):
            raise ValueError("allocation weights must be integers for block randomization")
        g = math.gcd(*ints)
        return tuple(i // g for i in ints)

    def with_total(self, n_total: int) -> "DoseDesign":
        """Design with ``n_total`` patients split exactly by the allocation block."""
        block = self.block
        size = sum(block)
        if n_total % size:
            raise ValueError(f"n_total={n_total} is not a multiple of the block size {size}")
        return DoseDesign(self.doses, self.alloc, tuple(b * n_total // size for b in block))

    @property
    def n_total(self) -> int:
        return sum(self.n)


@dataclass(frozen=True)
class CandidateShape:
    """One candidate model: ``emax(ed50)``, ``sigemax(ed50, hill)`` or ``quadratic(delta)``."""

    kind: str
    ed50: float = float("nan")
    hill: float = float("nan")
    delta: float = float("nan")

    def __post_init__(self):
        if self.kind == "emax":
            if not self.ed50 > 0:
                raise ValueError("emax needs ed50 > 0")
        elif self.kind == "sigemax":
            if not (self.ed50 > 0 and self.hill > 0):
                raise ValueError("sigemax needs ed50 > 0 and hill > 0")
        elif self.kind == "quadratic":
            if not self.delta < 0:
                raise ValueError("quadratic needs delta < 0")
        else:
            raise ValueError(f"unknown candidate kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "emax":
            return f"emax(ed50={self.ed50:g})"
        if self.kind == "sigemax":
            return f"sigemax(ed50={self.ed50:g},hill={self.hill:g})"
        return f"quadratic(delta={self.delta:g})"


def quadratic_with_vertex(d_max: float) -> CandidateShape:
    return CandidateShape("quadratic", delta=-1.0 / (2.0 * d_max))


DEFAULT_CATALOG = (
    CandidateShape("emax", ed50=0.25),
    CandidateShape("emax", ed50=1.0),
    CandidateShape("emax", ed50=2.0),
    CandidateShape("emax", ed50=4.0),
    CandidateShape("sigemax", ed50=0.5, hill=3.0),
    CandidateShape("sigemax", ed50=1.0, hill=3.0),
    CandidateShape("sigemax", ed50=2.0, hill=4.0),
    CandidateShape("sigemax", ed50=4.0, hill=5.0),
    quadratic_with_vertex(6.0),
)


def shape_mean(shape: CandidateShape, d, dose_range: float = 8.0):
    """Response of ``shape`` at dose(s) ``d``.

    Emax and sigmoid Emax return their natural 0..1 scale; the quadratic
    ``d + delta d^2`` is divided by its maximum over ``[0, dose_range]``.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("doses must be nonnegative")
    if shape.kind == "emax":
        out = d / (d + shape.ed50)
    elif shape.kind == "sigemax":
        # d^h/(d^h + ed50^h) written in ratio form to avoid overflow at large h
        with np.errstate(over="ignore", divide="ignore", under="ignore"):
            ratio = (shape.ed50 / np.where(d > 0, d, 1.0)) ** shape.hill
        out = np.where(d > 0, 1.0 / (1.0 + ratio), 0.0)
    else:
        vertex = min(-1.0 / (2.0 * shape.delta), dose_range)
        out = (d + shape.delta * d**2) / (vertex + shape.delta * vertex**2)
    return out if out.ndim else float(out)


def candidate_mean_vector(shape: CandidateShape, design: DoseDesign) -> np.ndarray:
    doses = np.asarray(design.doses)
    return np.asarray(shape_mean(shape, doses, dose_range=float(doses.max() or 1.0)), dtype=float)


def standardized_effects(shape: CandidateShape, design: DoseDesign, max_effect: float) -> np.ndarray:
    """Placebo-adjusted effects scaled so the largest design-dose effect equals ``max_effect``."""
    mu = candidate_mean_vector(shape, design)
    mu = mu - mu[0]
    return max_effect * mu / mu.max()


def mean_planned_effects(shapes, design: DoseDesign, max_effect: float) -> np.ndarray:
    """Average over the candidate models of their standardized effects at each dose."""
    return np.mean([standardized_effects(s, design, max_effect) for s in shapes], axis=0)


@dataclass(frozen=True)
class EffectProfile:
    """Emax dose response whose maximum builds up over time.

    ``E(T) = emax_tmax * (1 - exp(-rate T)) / (1 - exp(-rate t_max))`` and the
    mean at dose ``d`` and week ``T`` is ``e0 + E(T) d / (d + ed50)``.
    """

    e0: float = 0.0
    emax_tmax: float = 0.135
    ed50: float = 1.0
    t_max: float = 12.0
    rate: float = 0.5

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")

    @classmethod
    def from_max_effect(cls, max_effect: float, d_max: float = 8.0, **kw) -> "EffectProfile":
        """Profile whose effect at dose ``d_max`` and ``t_max`` equals ``max_effect``."""
        ed50 = kw.get("ed50", 1.0)
        return cls(emax_tmax=max_effect * (d_max + ed50) / d_max, **kw)

    def mean(self, d, T):
        d = np.asarray(d, dtype=float)
        return self.e0 + effect_at_time(self, T) * d / (d + self.ed50)


def effect_at_time(p: EffectProfile, T):
    T = np.asarray(T, dtype=float)
    if np.any(T < 0) or np.any(T > p.t_max + 1e-12):
        raise ValueError("T must lie in [0, t_max]")
    ratio = (1.0 - np.exp(-p.rate * T)) / (1.0 - np.exp(-p.rate * np.float64(p.t_max)))
    out = p.emax_tmax * ratio
    return out if out.ndim else float(out)
