"""Trial simulation: data generation, interim snapshots, metrics and operating characteristics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import mvn
from .contrasts import ContrastSet, build_contrast_set, correlation, scaling, test_statistics
from .dataset import VISIT_WEEKS, TrialDataset
from .dose_models import DEFAULT_CATALOG, DoseDesign, EffectProfile, mean_planned_effects
from .errors import FracUnreachable, FutilityError, Unachievable
from .interim import InterimState, interim_powers
from .longitudinal import fit_completers, fit_mmrm

logger = logging.getLogger(__name__)

METRICS = ("pred_power", "cond_power_planned", "cond_power_interim")
METHODS = ("longitudinal", "completer")
PERCENTILES = tuple(range(10, 55, 5))
DEFAULT_DESIGN = DoseDesign((0, 0.5, 1, 2, 4, 8), (2, 1, 1, 1, 2, 2))


@dataclass(frozen=True)
class SimScenario:
    design: DoseDesign = DEFAULT_DESIGN
    lpfv_t: float = 50.0
    rho: float = 0.9
    sigma: float = 0.56
    effect: str = "emax"
    max_effect: float = 0.12
    ed50: float = 1.0
    onset_rate: float = 0.5
    interim_fracs: tuple = (0.3, 0.5, 0.7)
    alpha: float = 0.025
    candidates: tuple = DEFAULT_CATALOG
    planned_max_effect: float = 0.12
    reps: int = 500
    base_seed: int = 2024
    sigma_source: str = "interim"
    design_sigma: float = float("nan")
    abs_tol: float = 5e-4
    visit_weeks: tuple = VISIT_WEEKS

    def __post_init__(self):
        v = len(self.visit_weeks) + 1
        if not -1.0 / (v - 1) < self.rho < 1.0:
            raise ValueError(f"rho must lie in (-1/{v - 1}, 1)")
        if any(not 0 < f < 1 for f in self.interim_fracs):
            raise ValueError("interim fractions must lie in (0, 1)")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.effect not in ("null", "emax"):
            raise ValueError("effect must be 'null' or 'emax'")
        if self.sigma_source not in ("interim", "design"):
            raise ValueError("sigma_source must be 'interim' or 'design'")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def name(self) -> str:
        return f"lpfv{self.lpfv_t:g}_rho{self.rho:g}_{self.effect}"

    @property
    def profile(self) -> EffectProfile:
        max_effect = self.max_effect if self.effect == "emax" else 0.0
        return EffectProfile.from_max_effect(
            max_effect, d_max=max(self.design.doses), ed50=self.ed50,
            t_max=max(self.visit_weeks), rate=self.onset_rate,
        )

    @property
    def residual_sd(self) -> float:
        """SD of the final-visit change given baseline, under compound symmetry."""
        return self.sigma * math.sqrt(1.0 - self.rho**2)

    def true_final_means(self) -> np.ndarray:
        return np.asarray(self.profile.mean(np.asarray(self.design.doses), max(self.visit_weeks)))


@dataclass
class _Context:
    """Per-scenario constants: contrasts, critical value and planned effects."""

    scenario: SimScenario
    contrasts: ContrastSet = field(init=False)
    crit: float = field(init=False)
    planned_effects: np.ndarray = field(init=False)
    D: np.ndarray = field(init=False)

    def __post_init__(self):
        sc = self.scenario
        if not sc.design.n:
            raise ValueError("scenario design needs per-arm sample sizes")
        self.D = np.diag(1.0 / np.asarray(sc.design.n, dtype=float))
        self.contrasts = build_contrast_set(sc.candidates, sc.design, self.D)
        self.crit = mvn.critical_value(correlation(self.contrasts.C, self.D), sc.alpha)
        self.planned_effects = mean_planned_effects(sc.candidates, sc.design, sc.planned_max_effect)


def replication_rng(base_seed: int, rep_index: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``(base_seed, rep_index)``."""
    ss = np.random.SeedSequence([int(base_seed), int(rep_index)])
    return np.random.Generator(np.random.Philox(ss))


def generate_recruitment(N: int, lpfv_t: float, rng) -> np.ndarray:
    """Sorted recruitment times ``lpfv_t * sqrt(U)``, ``U`` uniform on (0, 1]."""
    if N < 1:
        raise ValueError("N must be positive")
    u = 1.0 - rng.random(N)
    return np.sort(lpfv_t * np.sqrt(u))


def block_randomize(design: DoseDesign, rng) -> np.ndarray:
    """Arm per patient (in recruitment order) from permuted blocks of the allocation ratio."""
    block = np.repeat(np.arange(design.k), design.block)
    n_blocks, rem = divmod(design.n_total, block.size)
    if rem or n_blocks < 1:
        raise ValueError("n_total must be a positive multiple of the allocation block")
    return np.concatenate([rng.permutation(block) for _ in range(n_blocks)])


def cs_covariance(v: int, sigma: float, rho: float) -> np.ndarray:
    return sigma**2 * ((1.0 - rho) * np.eye(v) + rho)


def generate_trial(scenario: SimScenario, rng) -> TrialDataset:
    """Complete data: baseline plus post-baseline visits, compound-symmetric errors."""
    design = scenario.design
    N = design.n_total
    rec = generate_recruitment(N, scenario.lpfv_t, rng)
    arm = block_randomize(design, rng)
    weeks = np.asarray(scenario.visit_weeks)
    doses = np.asarray(design.doses)[arm]
    mean = np.zeros((N, weeks.size + 1))
    mean[:, 1:] = scenario.profile.mean(doses[:, None], weeks[None, :])
    cov = cs_covariance(weeks.size + 1, scenario.sigma, scenario.rho)
    y = mean + rng.standard_normal(mean.shape) @ mvn.cholesky(cov).T
    return TrialDataset(np.arange(N), arm, rec, y[:, 0], y[:, 1:], tuple(weeks), design.k)


def interim_time(trial: TrialDataset, completer_frac: float) -> float:
    """Earliest calendar time at which ``ceil(frac N)`` patients have their final visit."""
    if not 0 < completer_frac <= 1:
        raise FracUnreachable(f"completer fraction {completer_frac} outside (0, 1]")
    need = math.ceil(completer_frac * trial.n - 1e-9)
    if need < 1 or need > trial.n:
        raise FracUnreachable(f"cannot have {need} completers among {trial.n} patients")
    done = np.sort(trial.recruit_week + trial.visit_weeks[-1])
    return float(done[need - 1])


def interim_snapshot(trial: TrialDataset, completer_frac: float):
    """Censored dataset at the interim time, and that time."""
    tau = interim_time(trial, completer_frac)
    return trial.censor(tau), tau


def _final_decision(trial: TrialDataset, ctx: _Context) -> bool:
    fit = fit_completers(trial, residual_df=True)
    ts = test_statistics(ctx.contrasts, fit.estimates)
    return bool(np.max(ts.T) > ctx.crit)


def analyze_interim(snap: TrialDataset, method: str, contrasts: ContrastSet, D, crit: float,
                    planned_effects, alpha: float = 0.025, *, sigma: float = None, rng=None,
                    abs_tol: float = 5e-4) -> dict:
    """Information fraction, predictive and conditional powers for one interim dataset.

    ``D`` is ``diag(1/n_i)`` for the planned final sample sizes, so the final
    covariance is ``sigma_hat^2 D``; pass ``sigma`` to fix sigma instead of
    using the fitted one. Fit or numerical failures are reported in ``error``.
    """
    row = {"sigma_hat": math.nan, "info_frac": math.nan, **{m: math.nan for m in METRICS}, "error": ""}
    try:
        if method == "longitudinal":
            fit = fit_mmrm(snap)
            est, sigma_hat = fit.lsmeans_week12, fit.sigma
        elif method == "completer":
            fit = fit_completers(snap)
            est, sigma_hat = fit.estimates, fit.sigma
        else:
            raise ValueError(f"unknown method {method!r}")
        if sigma is not None:
            sigma_hat = sigma
        row["sigma_hat"] = sigma_hat
        state = InterimState.build(est, sigma_hat**2 * np.asarray(D))
        row["info_frac"] = state.info_fraction
        res = interim_powers(state, contrasts, planned_effects, alpha, crit=crit, rng=rng, abs_tol=abs_tol)
        row.update(pred_power=res.predictive, cond_power_planned=res.cond_planned,
                   cond_power_interim=res.cond_interim)
    except FutilityError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _interim_row(snap: TrialDataset, method: str, ctx: _Context, rng) -> dict:
    sc = ctx.scenario
    sigma = None
    if sc.sigma_source == "design":
        sigma = sc.design_sigma if sc.design_sigma == sc.design_sigma else sc.residual_sd
    return analyze_interim(snap, method, ctx.contrasts, ctx.D, ctx.crit, ctx.planned_effects, sc.alpha,
                           sigma=sigma, rng=rng, abs_tol=sc.abs_tol)


def run_replication(scenario: SimScenario, rep_index: int, ctx: _Context = None) -> list:
    """All interim rows (interim x method) of one replication, plus the final decision."""
    ctx = ctx or _Context(scenario)
    rng = replication_rng(scenario.base_seed, rep_index)
    trial = generate_trial(scenario, rng)
    rejected = _final_decision(trial, ctx)
    base = {"scenario": scenario.name, "lpfv_t": scenario.lpfv_t, "rho": scenario.rho,
            "effect": scenario.effect, "n_total": scenario.design.n_total, "rep": rep_index}
    if not scenario.interim_fracs:
        return [{**base, "interim_frac": 1.0, "tau": math.nan, "method": "final", "n_recruited": trial.n,
                 "n_complete": trial.n, "info_frac": 1.0, **{m: math.nan for m in METRICS},
                 "sigma_hat": math.nan, "final_rejected": rejected, "error": ""}]
    rows = []
    for frac in scenario.interim_fracs:
        snap, tau = interim_snapshot(trial, frac)
        for method in METHODS:
            r = _interim_row(snap, method, ctx, rng)
            rows.append({**base, "interim_frac": frac, "tau": tau, "method": method, "n_recruited": snap.n,
                         "n_complete": int(snap.observed[:, -1].sum()), **r, "final_rejected": rejected})
    return rows


def _run_chunk(args):
    scenario, reps = args
    ctx = _Context(scenario)
    return [row for r in reps for row in run_replication(scenario, r, ctx)]


def run_scenario(scenario: SimScenario, reps: int = None, threads: int = 1) -> list:
    """Rows for replications ``0..reps-1``, ordered by replication; independent of ``threads``."""
    reps = scenario.reps if reps is None else reps
    indices = list(range(reps))
    if threads <= 1 or reps < 2:
        return _run_chunk((scenario, indices))
    chunks = [indices[i::threads] for i in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, [(scenario, c) for c in chunks]))
    rows = [row for part in parts for row in part]
    order = {(m, f): i for i, (f, m) in enumerate(
        (f, m) for f in (scenario.interim_fracs or (1.0,)) for m in (METHODS if scenario.interim_fracs else ("final",)))}
    rows.sort(key=lambda r: (r["rep"], order[(r["method"], r["interim_frac"])]))
    return rows


def analytic_power(scenario: SimScenario, n_total: int, crit: float = None) -> float:
    """Final-test power from the noncentral MVN of the test statistics."""
    design = scenario.design.with_total(n_total)
    D = np.diag(1.0 / np.asarray(design.n, dtype=float))
    cs = build_contrast_set(scenario.candidates, design, D)
    S = scenario.residual_sd**2 * D
    corr = correlation(cs.C, S)
    if crit is None:
        crit = mvn.critical_value(corr, scenario.alpha)
    mean = scaling(cs.C, S) * (cs.C @ scenario.true_final_means())
    below = mvn.equicoordinate_prob(mean, corr, crit, mvn.as_rng(None), abs_tol=1e-4)
    return 1.0 - below.value


def design_sample_size(scenario: SimScenario, target_power: float = 0.8, cap: int = 5000) -> int:
    """Smallest total N (a multiple of the allocation block) reaching ``target_power``.

    Raises:
        Unachievable: if even ``cap`` patients fall short.
    """
    size = sum(scenario.design.block)
    hi = cap // size
    if hi < 1:
        raise Unachievable("cap below one allocation block")
    # the test-statistic correlation depends only on the allocation ratio
    D = np.diag(1.0 / np.asarray(scenario.design.block, dtype=float))
    crit = mvn.critical_value(correlation(build_contrast_set(scenario.candidates, scenario.design, D).C, D),
                              scenario.alpha)
    if analytic_power(scenario, hi * size, crit) < target_power:
        raise Unachievable(f"power {target_power} not reached with N <= {cap}")
    lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if analytic_power(scenario, mid * size, crit) >= target_power:
            hi = mid
        else:
            lo = mid
    return hi * size


def calibrate_thresholds(values, percentiles=PERCENTILES, min_rows: int = 100) -> np.ndarray:
    """Empirical percentiles of a metric, used as futility cut-offs."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size < min_rows:
        raise ValueError(f"need at least {min_rows} metric values, got {v.size}")
    return np.percentile(v, percentiles)


def calibrate_from_rows(rows, calib_frac: float = None, percentiles=PERCENTILES, min_rows: int = 100) -> dict:
    """Per-metric thresholds from longitudinal rows at the calibration interim, pooled over scenarios."""
    fracs = sorted({r["interim_frac"] for r in rows if r["method"] == "longitudinal"})
    if not fracs:
        raise ValueError("no longitudinal interim rows to calibrate on")
    if calib_frac is None:
        calib_frac = 0.3 if any(abs(f - 0.3) < 1e-12 for f in fracs) else fracs[0]
    sel = [r for r in rows if r["method"] == "longitudinal" and abs(r["interim_frac"] - calib_frac) < 1e-12]
    return {m: calibrate_thresholds([r[m] for r in sel], percentiles, min_rows) for m in METRICS}


def operating_characteristics(rows, thresholds: dict, percentiles=PERCENTILES) -> list:
    """Stop probability and power loss per scenario x interim x method x metric x threshold."""
    groups = {}
    for r in rows:
        if r["method"] == "final":
            continue
        key = (r["scenario"], r["interim_frac"], r["method"])
        groups.setdefault(key, []).append(r)
    out = []
    for (scen, frac, method), grp in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], METHODS.index(kv[0][2]))):
        first = grp[0]
        rejected = np.array([bool(r["final_rejected"]) for r in grp])
        for metric in METRICS:
            vals = np.array([r[metric] for r in grp], dtype=float)
            ok = ~np.isnan(vals)
            for pct, v in zip(percentiles, thresholds[metric]):
                stop = vals[ok] < v
                n = int(ok.sum())
                out.append({
                    "scenario": scen, "lpfv_t": first["lpfv_t"], "rho": first["rho"], "effect": first["effect"],
                    "interim_frac": frac, "method": method, "metric": metric, "percentile": pct,
                    "threshold": float(v), "n": n,
                    "stop_prob": float(stop.mean()) if n else math.nan,
                    "power_loss": float((stop & rejected[ok]).mean()) if n else math.nan,
                    "final_power": float(rejected[ok].mean()) if n else math.nan,
                })
    return out


def stop_metrics(values, rejected, v: float):
    """``(stop probability, power loss)`` for cut-off ``v``."""
    values = np.asarray(values, dtype=float)
    stop = values < v
    return float(stop.mean()), float((stop & np.asarray(rejected, dtype=bool)).mean())


def info_fraction_summary(rows) -> list:
    """Mean information fraction by method and the paired longitudinal-minus-completer gain."""
    by = {}
    for r in rows:
        if r["method"] in METHODS:
            by.setdefault((r["scenario"], r["interim_frac"]), {}).setdefault(r["rep"], {})[r["method"]] = r
    out = []
    for (scen, frac), reps in sorted(by.items()):
        pairs = [(d["longitudinal"]["info_frac"], d["completer"]["info_frac"])
                 for d in reps.values() if len(d) == 2]
        arr = np.array([p for p in pairs if not (math.isnan(p[0]) or math.isnan(p[1]))], dtype=float).reshape(-1, 2)
        first = next(iter(reps.values()))["longitudinal"]
        out.append({
            "scenario": scen, "lpfv_t": first["lpfv_t"], "rho": first["rho"], "effect": first["effect"],
            "interim_frac": frac, "n": int(arr.shape[0]),
            "info_frac_longitudinal": float(arr[:, 0].mean()) if arr.size else math.nan,
            "info_frac_completer": float(arr[:, 1].mean()) if arr.size else math.nan,
            "gain": float((arr[:, 0] - arr[:, 1]).mean()) if arr.size else math.nan,
            "gain_min": float((arr[:, 0] - arr[:, 1]).min()) if arr.size else math.nan,
        })
    return out
