"""TOML run configuration with schema validation and printable defaults."""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, fields, replace

from .dose_models import DEFAULT_CATALOG, CandidateShape, DoseDesign
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class DesignConfig:
    doses: tuple = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)
    alloc: tuple = (2.0, 1.0, 1.0, 1.0, 2.0, 2.0)
    n_total: int = 0  # 0: size each scenario with design_sample_size


@dataclass(frozen=True)
class EffectConfig:
    max_effect: float = 0.12
    ed50: float = 1.0
    onset_rate: float = 0.5
    planned_max_effect: float = 0.12


@dataclass(frozen=True)
class SimConfig:
    lpfv_t: tuple = (50.0, 100.0)
    rho: tuple = (0.6, 0.9)
    effects: tuple = ("null", "emax")
    sigma: float = 0.56
    interim_fracs: tuple = (0.3, 0.5, 0.7)
    reps: int = 500
    seed: int = 2024
    target_power: float = 0.8
    calib_frac: float = 0.3
    sigma_source: str = "interim"


@dataclass(frozen=True)
class TestConfig:
    __test__ = False
    alpha: float = 0.025


@dataclass(frozen=True)
class PowerConfig:
    cuts: tuple = ()
    completer_fracs: tuple = (0.3, 0.5, 0.7, 1.0)
    sigma_source: str = "interim"
    design_sigma: float = 0.0


@dataclass(frozen=True)
class AppendixConfig:
    rho: tuple = (0.6, 0.9)
    time_step: float = 0.01


@dataclass(frozen=True)
class MvnConfig:
    abs_tol: float = 5e-4


@dataclass(frozen=True)
class Config:
    design: DesignConfig = field(default_factory=DesignConfig)
    effect: EffectConfig = field(default_factory=EffectConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    test: TestConfig = field(default_factory=TestConfig)
    candidates: tuple = DEFAULT_CATALOG
    power: PowerConfig = field(default_factory=PowerConfig)
    appendix: AppendixConfig = field(default_factory=AppendixConfig)
    mvn: MvnConfig = field(default_factory=MvnConfig)
    path: str = ""

    def dose_design(self) -> DoseDesign:
        return DoseDesign(self.design.doses, self.design.alloc)


SECTIONS = {
    "design": DesignConfig, "effect": EffectConfig, "sim": SimConfig, "test": TestConfig,
    "power": PowerConfig, "appendix": AppendixConfig, "mvn": MvnConfig,
}
CANDIDATE_KEYS = {"kind", "ed50", "hill", "delta"}


def _locate(text: str, section: str, key: str = None) -> int:
    """Best-effort 1-based line of ``[section]`` or of ``key`` inside it; 0 if not found."""
    if not text:
        return 0
    lines = text.splitlines()
    head = re.compile(r"^\s*\[\[?\s*" + re.escape(section) + r"\s*\]\]?\s*(#.*)?$")
    keyre = re.compile(r"^\s*" + re.escape(key) + r"\s*=") if key else None
    start = None
    for i, line in enumerate(lines):
        if head.match(line):
            start = i
            if keyre is None:
                return i + 1
        elif start is not None and keyre is not None:
            if re.match(r"^\s*\[", line):
                start = None
            elif keyre.match(line):
                return i + 1
    return 0


def _err(msg: str, text: str, section: str, key: str = None) -> ConfigError:
    where = f"{section}.{key}" if key else section
    line = _locate(text, section, key)
    loc = f" (line {line})" if line else ""
    return ConfigError(f"{where}{loc}: {msg}")


def _coerce(value, default, name):
    """Convert a TOML value to the type of ``default``; raises TypeError/ValueError."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError("expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError("expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise TypeError("expected an array")
        proto = default[0] if default else 0.0
        if isinstance(proto, int):
            proto = 0.0
        return tuple(_coerce(v, proto, name) for v in value)
    raise TypeError(f"unsupported setting {name}")


def _check_values(cfg: Config, text: str) -> None:
    def need(cond, msg, section, key):
        if not cond:
            raise _err(msg, text, section, key)

    d, s, e = cfg.design, cfg.sim, cfg.effect
    try:
        cfg.dose_design().block
    except ValueError as exc:
        raise _err(str(exc), text, "design", "doses") from None
    need(d.n_total >= 0, "must be nonnegative", "design", "n_total")
    if d.n_total:
        need(d.n_total % sum(cfg.dose_design().block) == 0, "must be a multiple of the allocation block",
             "design", "n_total")
    need(e.max_effect >= 0, "must be nonnegative", "effect", "max_effect")
    need(e.ed50 > 0, "must be positive", "effect", "ed50")
    need(e.onset_rate > 0, "must be positive", "effect", "onset_rate")
    need(e.planned_max_effect > 0, "must be positive", "effect", "planned_max_effect")
    need(len(s.lpfv_t) > 0 and all(x > 0 for x in s.lpfv_t), "needs positive values", "sim", "lpfv_t")
    need(len(s.rho) > 0 and all(-0.25 < r < 1 for r in s.rho), "values must lie in (-1/4, 1)", "sim", "rho")
    need(len(s.effects) > 0 and set(s.effects) <= {"null", "emax"}, "values must be 'null' or 'emax'",
         "sim", "effects")
    need(s.sigma > 0, "must be positive", "sim", "sigma")
    need(all(0 < f < 1 for f in s.interim_fracs), "values must lie in (0, 1)", "sim", "interim_fracs")
    need(s.reps >= 1, "must be at least 1", "sim", "reps")
    need(s.seed >= 0, "must be nonnegative", "sim", "seed")
    need(0 < s.target_power < 1, "must lie in (0, 1)", "sim", "target_power")
    need(0 < s.calib_frac < 1, "must lie in (0, 1)", "sim", "calib_frac")
    need(s.sigma_source in ("interim", "design"), "must be 'interim' or 'design'", "sim", "sigma_source")
    need(0 < cfg.test.alpha < 0.5, "must lie in (0, 0.5)", "test", "alpha")
    p = cfg.power
    need(all(0 < f <= 1 for f in p.completer_fracs), "values must lie in (0, 1]", "power", "completer_fracs")
    need(p.sigma_source in ("interim", "design"), "must be 'interim' or 'design'", "power", "sigma_source")
    if p.sigma_source == "design":
        need(p.design_sigma > 0, "must be positive when sigma_source = 'design'", "power", "design_sigma")
    need(all(-1 < r < 1 for r in cfg.appendix.rho), "values must lie in (-1, 1)", "appendix", "rho")
    need(0 < cfg.appendix.time_step <= 0.5, "must lie in (0, 0.5]", "appendix", "time_step")
    need(0 < cfg.mvn.abs_tol < 0.1, "must lie in (0, 0.1)", "mvn", "abs_tol")
    need(len(cfg.candidates) >= 1, "need at least one candidate model", "candidates", None)


def _parse_candidates(items, text):
    if not isinstance(items, list):
        raise _err("expected an array of tables ([[candidates]])", text, "candidates")
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise _err(f"entry {i} is not a table", text, "candidates")
        extra = set(item) - CANDIDATE_KEYS
        if extra:
            raise _err(f"entry {i}: unknown key(s) {sorted(extra)}", text, "candidates", sorted(extra)[0])
        try:
            kw = {k: float(v) for k, v in item.items() if k != "kind"}
            out.append(CandidateShape(str(item.get("kind", "")), **kw))
        except (TypeError, ValueError) as exc:
            raise _err(f"entry {i}: {exc}", text, "candidates") from None
    return tuple(out)


def config_from_dict(raw: dict, text: str = "", path: str = "") -> Config:
    unknown = set(raw) - set(SECTIONS) - {"candidates"}
    if unknown:
        name = sorted(unknown)[0]
        raise _err("unknown section", text, name)
    parts = {}
    for name, cls in SECTIONS.items():
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            raise _err("expected a table", text, name)
        defaults = cls()
        allowed = {f.name for f in fields(cls)}
        for key in sec:
            if key not in allowed:
                raise _err(f"unknown key (allowed: {', '.join(sorted(allowed))})", text, name, key)
        vals = {}
        for key, value in sec.items():
            try:
                vals[key] = _coerce(value, getattr(defaults, key), key)
            except (TypeError, ValueError) as exc:
                raise _err(str(exc), text, name, key) from None
        parts[name] = replace(defaults, **vals)
    if "candidates" in raw:
        parts["candidates"] = _parse_candidates(raw["candidates"], text)
    cfg = Config(**parts, path=str(path))
    _check_values(cfg, text)
    return cfg


def load_config(path=None) -> Config:
    """Read and validate a config file; ``None`` gives the defaults."""
    if path is None:
        return Config()
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    text = data.decode("utf-8", errors="replace")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return config_from_dict(raw, text, str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def to_toml(cfg: Config) -> str:
    """TOML text that reloads to an equal configuration."""
    lines = []
    for name in SECTIONS:
        sec = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(sec):
            lines.append(f"{f.name} = {_fmt(getattr(sec, f.name))}")
        lines.append("")
    for c in cfg.candidates:
        lines.append("[[candidates]]")
        lines.append(f'kind = "{c.kind}"')
        for key in ("ed50", "hill", "delta"):
            v = getattr(c, key)
            if v == v:
                lines.append(f"{key} = {v!r}")
        lines.append("")
    return "\n".join(lines)
