"""Single-arm illustration of longitudinal versus completer information.

Patients are recruited along a piecewise-linear cumulative recruitment curve
on a unit time scale and have three post-baseline visits at a fixed spacing.
Outcomes have unit variance and compound-symmetry correlation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .longitudinal import gls_information

TIME_TOL = 1e-9


@dataclass(frozen=True)
class RecruitmentScenario:
    scenario_id: int
    knots: tuple
    visit_spacing: float
    n_patients: int = 21
    n_visits: int = 3
    description: str = ""

    def recruitment_times(self) -> np.ndarray:
        """Patient ``i`` (1-based) enters when the cumulative curve reaches ``(i-1)/(n-1)``."""
        levels = np.arange(self.n_patients) / (self.n_patients - 1)
        return np.array([_inverse_cumulative(self.knots, q) for q in levels])

    def visit_times(self) -> np.ndarray:
        steps = self.visit_spacing * np.arange(1, self.n_visits + 1)
        return self.recruitment_times()[:, None] + steps[None, :]

    def observed(self, t: float) -> np.ndarray:
        """Visits completed by time ``t`` (recruited patients only)."""
        rec = self.recruitment_times()
        mask = self.visit_times() <= t + TIME_TOL
        return mask[rec <= t + TIME_TOL]


def _inverse_cumulative(knots, q: float) -> float:
    # first time the curve reaches q; plateaus resolve to their left end
    pts = [tuple(map(float, k)) for k in knots]
    if q <= pts[0][1]:
        return pts[0][0]
    for (t0, c0), (t1, c1) in zip(pts, pts[1:]):
        if c1 >= q - 1e-15 and c1 > c0:
            return t0 + (t1 - t0) * min(1.0, (q - c0) / (c1 - c0))
    raise ValueError(f"cumulative recruitment never reaches {q}")


@lru_cache(maxsize=None)
def load_scenarios() -> dict:
    raw = json.loads(resources.files(__package__).joinpath("data/appendix_recruitment.json").read_text("utf-8"))
    out = {}
    for key, sc in raw["scenarios"].items():
        out[int(key)] = RecruitmentScenario(
            int(key), tuple(tuple(k) for k in sc["knots"]), float(sc["visit_spacing"]),
            int(raw["n_patients"]), int(raw["n_visits"]), sc.get("description", ""),
        )
    return out


def get_scenario(scenario_id: int) -> RecruitmentScenario:
    scenarios = load_scenarios()
    if scenario_id not in scenarios:
        raise ValueError(f"scenario_id must be one of {sorted(scenarios)}")
    return scenarios[scenario_id]


def default_time_grid(step: float = 0.01) -> np.ndarray:
    return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)


def appendix_illustration(scenario_id: int, rho, times=None, sigma: float = 1.0) -> dict:
    """Information and information fractions over an interim-time grid.

    Returns a dict of arrays keyed by ``time``, ``n_recruited``,
    ``n_complete``, ``info_completer``, ``frac_completer`` and, for each
    correlation, ``info_rho{r}`` and ``frac_rho{r}``.
    """
    sc = get_scenario(scenario_id)
    times = default_time_grid() if times is None else np.asarray(times, dtype=float)
    rhos = np.atleast_1d(np.asarray(rho, dtype=float))
    total = sc.n_patients / sigma**2
    out = {"time": times, "n_recruited": np.zeros(times.size, int), "n_complete": np.zeros(times.size, int),
           "info_completer": np.zeros(times.size)}
    for r in rhos:
        out[f"info_rho{r:g}"] = np.zeros(times.size)
    for j, t in enumerate(times):
        mask = sc.observed(t)
        out["n_recruited"][j] = mask.shape[0]
        out["n_complete"][j] = int(mask[:, -1].sum()) if mask.size else 0
        out["info_completer"][j] = out["n_complete"][j] / sigma**2
        for r in rhos:
            out[f"info_rho{r:g}"][j] = gls_information(mask.reshape(-1, sc.n_visits), r, sigma)[0] if mask.size else 0.0
    out["frac_completer"] = out["info_completer"] / total
    for r in rhos:
        out[f"frac_rho{r:g}"] = out[f"info_rho{r:g}"] / total
    return out


def common_interim_times(a: dict, b: dict) -> np.ndarray:
    """Grid times where both curves have some, but not all, final-visit information."""
    n_a, n_b = a["info_completer"], b["info_completer"]
    full_a, full_b = a["info_completer"][-1], b["info_completer"][-1]
    ok = (n_a > 0) & (n_a < full_a) & (n_b > 0) & (n_b < full_b)
    return np.asarray(a["time"])[ok]
