"""Command-line front end.

Usage: ``mcpmod-futility <command> [--config PATH] [--seed N] [--out DIR] [--threads N] [--reps N]``
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__, mvn
from .appendix import appendix_illustration, default_time_grid, load_scenarios
from .config import Config, load_config, to_toml
from .contrasts import build_contrast_set, correlation
from .dataset import TrialDataset
from .dose_models import mean_planned_effects
from .errors import ConfigError, FutilityError
from .reporting import ROW_COLUMNS, read_csv, write_csv, write_manifest
from .simulation import (
    METHODS, METRICS, PERCENTILES, SimScenario, analyze_interim, calibrate_from_rows,
    design_sample_size, info_fraction_summary, interim_time, operating_characteristics, run_scenario,
)

log = logging.getLogger("mcpmod_futility")

SUMMARY_COLUMNS = ("scenario", "lpfv_t", "rho", "effect", "interim_frac", "method", "metric", "percentile",
                   "threshold", "n", "stop_prob", "power_loss", "final_power")
INFO_COLUMNS = ("scenario", "lpfv_t", "rho", "effect", "interim_frac", "n", "info_frac_longitudinal",
                "info_frac_completer", "gain", "gain_min")
POWER_COLUMNS = ("cut", "time", "method", "n_recruited", "n_complete", "sigma_hat", "info_frac",
                 "pred_power", "cond_power_planned", "cond_power_interim", "error")


def _rng(seed):
    return mvn.as_rng(None if seed is None else np.random.default_rng(seed))


def _crit(cfg: Config, C, S, seed):
    corr = correlation(C, S)
    return mvn.critical_value(corr, cfg.test.alpha, None if seed is None else np.random.default_rng(seed))


def _design_contrasts(cfg: Config):
    design = cfg.dose_design()
    cs = build_contrast_set(cfg.candidates, design)
    S = np.diag(1.0 / np.asarray(design.alloc))
    return design, cs, S


def cmd_contrasts(cfg: Config, args) -> list:
    design, cs, S = _design_contrasts(cfg)
    crit = _crit(cfg, cs.C, S, args.seed)
    path = os.path.join(args.out, "contrasts.csv")
    cs.to_csv(path)
    crit_path = os.path.join(args.out, "critval.csv")
    write_csv(crit_path, [{"alpha": cfg.test.alpha, "n_models": cs.M, "crit": crit}])
    print(f"{cs.M} contrasts x {design.k} doses; critical value {crit:.6f} at alpha={cfg.test.alpha:g}")
    return [path, crit_path]


def cmd_critval(cfg: Config, args) -> list:
    _, cs, S = _design_contrasts(cfg)
    crit = _crit(cfg, cs.C, S, args.seed)
    path = os.path.join(args.out, "critval.csv")
    write_csv(path, [{"alpha": cfg.test.alpha, "n_models": cs.M, "crit": crit}])
    print(f"{crit:.6f}")
    return [path]


def cmd_power(cfg: Config, args) -> list:
    try:
        data = TrialDataset.from_csv(args.data, n_arms=cfg.dose_design().k)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from None
    design = cfg.dose_design()
    if cfg.design.n_total:
        n = np.asarray(design.with_total(cfg.design.n_total).n, dtype=float)
    else:
        n = np.bincount(data.arm, minlength=design.k).astype(float)
    if np.any(n < 1):
        raise ConfigError("design.n_total: every arm needs at least one planned patient")
    D = np.diag(1.0 / n)
    cs = build_contrast_set(cfg.candidates, design, D)
    crit = _crit(cfg, cs.C, D, args.seed)
    planned = mean_planned_effects(cfg.candidates, design, cfg.effect.planned_max_effect)
    sigma = cfg.power.design_sigma if cfg.power.sigma_source == "design" else None
    rng = _rng(args.seed)

    cuts = [(f"time={t:g}", float(t)) for t in cfg.power.cuts]
    for f in cfg.power.completer_fracs if not cuts else ():
        try:
            cuts.append((f"completer_frac={f:g}", interim_time(data, f)))
        except FutilityError as exc:
            cuts.append((f"completer_frac={f:g}", math.nan))
            log.warning("cut %s: %s", f, exc)
    rows = []
    for label, tau in cuts:
        for method in METHODS:
            if math.isnan(tau):
                rows.append({"cut": label, "time": tau, "method": method, "n_recruited": 0, "n_complete": 0,
                             "sigma_hat": math.nan, "info_frac": math.nan, **{m: math.nan for m in METRICS},
                             "error": "FracUnreachable: not enough patients complete the final visit"})
                continue
            snap = data.censor(tau)
            r = analyze_interim(snap, method, cs, D, crit, planned, cfg.test.alpha, sigma=sigma, rng=rng,
                                abs_tol=cfg.mvn.abs_tol)
            rows.append({"cut": label, "time": tau, "method": method, "n_recruited": snap.n,
                         "n_complete": int(snap.observed[:, -1].sum()), **r})
    path = os.path.join(args.out, "power.csv")
    write_csv(path, rows, POWER_COLUMNS)
    if rows and all(r["error"] for r in rows):
        raise _TotalFailure("every analysis failed; see power.csv", [path])
    return [path]


class _TotalFailure(FutilityError):
    def __init__(self, msg, files):
        super().__init__(msg)
        self.files = files


def scenario_grid(cfg: Config, reps=None, threads=1, seed=None):
    """SimScenarios for lpfv_t x rho x effect, sized by design_sample_size unless n_total is set."""
    s, e = cfg.sim, cfg.effect
    base = SimScenario(
        design=cfg.dose_design(), sigma=s.sigma, max_effect=e.max_effect, ed50=e.ed50,
        onset_rate=e.onset_rate, interim_fracs=tuple(s.interim_fracs), alpha=cfg.test.alpha,
        candidates=tuple(cfg.candidates), planned_max_effect=e.planned_max_effect,
        reps=reps or s.reps, base_seed=s.seed if seed is None else seed, sigma_source=s.sigma_source,
        abs_tol=cfg.mvn.abs_tol,
    )
    sizes = {}
    out = []
    for lpfv in s.lpfv_t:
        for rho in s.rho:
            if cfg.design.n_total:
                n_total = cfg.design.n_total
            else:
                if rho not in sizes:
                    probe = dataclasses.replace(base, rho=rho, effect="emax", design=base.design.with_total(
                        sum(base.design.block)))
                    sizes[rho] = design_sample_size(probe, s.target_power)
                n_total = sizes[rho]
            for eff in s.effects:
                out.append(dataclasses.replace(base, lpfv_t=lpfv, rho=rho, effect=eff,
                                               design=base.design.with_total(n_total)))
    return out


def summarize(rows, calib_frac: float, min_rows: int = 100):
    """``(thresholds rows, summary rows)`` computed from per-replication rows."""
    n_calib = sum(1 for r in rows if r["method"] == "longitudinal" and abs(r["interim_frac"] - calib_frac) < 1e-12)
    if n_calib < min_rows:
        log.warning("only %d calibration rows (want >= %d); thresholds are rough", n_calib, min_rows)
    th = calibrate_from_rows(rows, calib_frac, PERCENTILES, min_rows=min(min_rows, max(n_calib, 1)))
    th_rows = [{"metric": m, "percentile": p, "threshold": float(v)} for m in METRICS for p, v in zip(PERCENTILES, th[m])]
    return th_rows, operating_characteristics(rows, th)


def _write_summaries(rows, cfg, out):
    th_rows, summary = summarize(rows, cfg.sim.calib_frac)
    files = [os.path.join(out, n) for n in ("thresholds.csv", "summary.csv", "info_frac.csv")]
    write_csv(files[0], th_rows, ("metric", "percentile", "threshold"))
    write_csv(files[1], summary, SUMMARY_COLUMNS)
    write_csv(files[2], info_fraction_summary(rows), INFO_COLUMNS)
    return files


def cmd_simulate(cfg: Config, args) -> list:
    scenarios = scenario_grid(cfg, args.reps, args.threads, args.seed)
    rows, failures = [], []
    for sc in scenarios:
        t0 = time.time()
        try:
            rows.extend(run_scenario(sc, threads=args.threads))
        except FutilityError as exc:
            failures.append(f"{sc.name}: {type(exc).__name__}: {exc}")
            break
        log.info("%s (N=%d, R=%d) in %.1fs", sc.name, sc.design.n_total, sc.reps, time.time() - t0)
    rows_path = os.path.join(args.out, "rows.csv")
    write_csv(rows_path, rows, ROW_COLUMNS)
    sizes = sorted({(sc.rho, sc.design.n_total) for sc in scenarios})
    size_path = os.path.join(args.out, "sample_sizes.csv")
    write_csv(size_path, [{"rho": r, "n_total": n} for r, n in sizes], ("rho", "n_total"))
    files = [rows_path, size_path]
    if failures:
        raise _TotalFailure("; ".join(failures), files)
    if any(r["method"] == "longitudinal" for r in rows):
        files += _write_summaries(rows, cfg, args.out)
    return files


def cmd_calibrate(cfg: Config, args) -> list:
    src = args.rows or os.path.join(args.out, "rows.csv")
    try:
        rows = read_csv(src)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read rows file {src}: {exc}") from None
    return _write_summaries(rows, cfg, args.out)


def cmd_appendix(cfg: Config, args) -> list:
    grid = default_time_grid(cfg.appendix.time_step)
    rhos = tuple(cfg.appendix.rho)
    files = []
    for sid in sorted(load_scenarios()):
        res = appendix_illustration(sid, rhos, grid)
        cols = ["time", "n_recruited", "n_complete", "info_completer", "frac_completer"]
        for r in rhos:
            cols += [f"info_rho{r:g}", f"frac_rho{r:g}"]
        rows = [{c: res[c][j] for c in cols} for j in range(grid.size)]
        path = os.path.join(args.out, f"appendix_scenario{sid}.csv")
        write_csv(path, rows, cols)
        files.append(path)
    return files


def cmd_print_config(cfg: Config, args) -> list:
    if args.seed is not None or args.reps is not None:
        sim = dataclasses.replace(cfg.sim, seed=cfg.sim.seed if args.seed is None else args.seed,
                                  reps=cfg.sim.reps if args.reps is None else args.reps)
        cfg = dataclasses.replace(cfg, sim=sim)
    sys.stdout.write(to_toml(cfg))
    return []


COMMANDS = {
    "contrasts": (cmd_contrasts, "contrast matrix and critical value"),
    "critval": (cmd_critval, "critical value of the multiple contrast test"),
    "power": (cmd_power, "interim predictive/conditional power for a dataset CSV"),
    "simulate": (cmd_simulate, "run the simulation grid"),
    "calibrate": (cmd_calibrate, "recompute thresholds and summaries from rows.csv"),
    "appendix": (cmd_appendix, "single-arm information-fraction curves"),
    "print-config": (cmd_print_config, "print the effective configuration"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="random seed (overrides sim.seed)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="maximum worker processes")
    common.add_argument("--reps", type=int, help="replications per scenario (overrides sim.reps)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="mcpmod-futility", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "power":
            p.add_argument("data", help="dataset CSV (patient_id, arm, recruit_week, baseline, y_w...)")
        if name == "calibrate":
            p.add_argument("--rows", help="rows.csv to read (default: OUT/rows.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.time()
    func = COMMANDS[args.command][0]
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.reps is not None and args.reps < 1:
            raise ConfigError("--reps must be at least 1")
        cfg = load_config(args.config)
        if args.command != "print-config":
            os.makedirs(args.out, exist_ok=True)
        files = func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _TotalFailure as exc:
        write_manifest(args.out, args.command, args.config, args.seed, exc.files, time.time() - t0,
                       __version__, status="failed", failures=[str(exc)])
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FutilityError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if args.command != "print-config":
        write_manifest(args.out, args.command, args.config, args.seed, files, time.time() - t0, __version__)
    return 0


if __name__ == "__main__":
    sys.exit(main())
