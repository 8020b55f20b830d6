"""Command-line experiment runner: ``mcfin run <config>`` and ``mcfin bench <config>``.

Configs are YAML documents. Every numeric field is validated before any
simulation starts; a bad field exits with status 2 and names the field.
Results are CSV with a fixed column order; apart from ``wall_time_ms`` the
output is a pure function of the config and seed.
"""

from __future__ import annotations

import argparse
import contextvars
import csv
import io
import math
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .experiments import convergence_study, qmc_reference, weak_error_levels
from .greeks import bump_delta, pathwise_delta
from .lsm import ExerciseSchedule, RegressionBasis, lsm_price
from .numerics import PrecisionMode, cholesky
from .parallel import set_threads
from .pricing import (BasketCall, MaxOfNCall, UpAndInPut, VanillaCall, VanillaPut,
                      barrier_analytic_up_in_put, bs_analytic_call, bs_analytic_delta, mc_price,
                      mlmc_two_level)
from .prng import StreamKey
from .risk import cvar, desk_portfolio, simulate_pnl, var
from .sde import MarketModel, Scheme, TimeGrid, synthetic_correlation

__all__ = ["main", "ConfigError", "ExperimentConfig", "load_config", "run_experiment", "RESULT_COLUMNS",
           "BENCH_COLUMNS"]

EXPERIMENTS = ("vanilla", "barrier", "basket", "delta", "var_cvar", "lsm", "qmc_vs_mc", "bias_slope",
               "mlmc", "bench")
RESULT_COLUMNS = ("experiment", "repetition", "mode", "N", "H", "estimate", "std_error", "reference",
                  "wall_time_ms")
BENCH_COLUMNS = ("experiment", "mode", "N", "H", "repeats", "median_wall_time_ms", "paths_per_second")

EXIT_OK, EXIT_SIMULATION, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# validation helpers

_MISSING = object()
# dotted paths read during the current validation, used to reject unknown fields
_consulted: contextvars.ContextVar[set | None] = contextvars.ContextVar("consulted", default=None)


def _get(cfg: dict, dotted: str, default=_MISSING):
    seen = _consulted.get()
    if seen is not None:
        seen.add(dotted)
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node or node[part] is None:
            if default is _MISSING:
                raise ConfigError(dotted, "is required")
            return default
        node = node[part]
    return node


def _number(cfg, dotted, default=_MISSING, *, positive=False, nonneg=False, lo=None, hi=None) -> float:
    v = _get(cfg, dotted, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(dotted, f"must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(dotted, "must be finite")
    if positive and not v > 0:
        raise ConfigError(dotted, f"must be > 0, got {v}")
    if nonneg and v < 0:
        raise ConfigError(dotted, f"must be >= 0, got {v}")
    if lo is not None and not v > lo:
        raise ConfigError(dotted, f"must be > {lo}, got {v}")
    if hi is not None and not v < hi:
        raise ConfigError(dotted, f"must be < {hi}, got {v}")
    return v


def _integer(cfg, dotted, default=_MISSING, *, minimum=1) -> int:
    v = _get(cfg, dotted, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(dotted, f"must be an integer, got {v!r}")
    if v < minimum:
        raise ConfigError(dotted, f"must be >= {minimum}, got {int(v)}")
    return int(v)


def _int_list(cfg, dotted, default=_MISSING, *, minimum=1) -> list[int]:
    """An integer or a non-empty list of integers."""
    v = _get(cfg, dotted, default)
    items = v if isinstance(v, list) else [v]
    if not items:
        raise ConfigError(dotted, "must not be empty")
    out = []
    for x in items:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or int(x) != x:
            raise ConfigError(dotted, f"entries must be integers, got {x!r}")
        if x < minimum:
            raise ConfigError(dotted, f"entries must be >= {minimum}, got {int(x)}")
        out.append(int(x))
    return out


def _modes(cfg, dotted="sim.modes", default=("double",)) -> list[PrecisionMode]:
    v = _get(cfg, dotted, list(default))
    items = v if isinstance(v, list) else [v]
    try:
        return [PrecisionMode.parse(m) for m in items]
    except ValueError as e:
        raise ConfigError(dotted, str(e)) from None


def _choice(cfg, dotted, choices, default=_MISSING) -> str:
    v = str(_get(cfg, dotted, default)).strip().lower()
    if v not in choices:
        raise ConfigError(dotted, f"must be one of {list(choices)}, got {v!r}")
    return v


# ---------------------------------------------------------------------------
# config model

@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    experiment: str
    seed: int
    repetitions: int
    model: MarketModel
    modes: list
    n_paths: list
    steps: list
    maturity: float
    scheme: Scheme
    output: str | None
    raw: dict = field(repr=False, default_factory=dict)
    payoff: object = None
    reference: float | None = None
    params: dict = field(default_factory=dict)


def _build_model(cfg: dict, default_assets: int = 1) -> MarketModel:
    p = _integer(cfg, "model.assets", default_assets)
    s0_raw = _get(cfg, "model.s0", 100.0)
    if isinstance(s0_raw, list):
        if len(s0_raw) != p:
            raise ConfigError("model.s0", f"has {len(s0_raw)} entries, model.assets is {p}")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 for v in s0_raw):
            raise ConfigError("model.s0", "entries must be numbers > 0")
        s0 = np.asarray(s0_raw, dtype=np.float64)
    else:
        s0 = np.full(p, _number(cfg, "model.s0", 100.0, positive=True))
    rate = _number(cfg, "model.rate", 0.05)
    sigma = _number(cfg, "model.sigma", 0.2, nonneg=True)
    dividend = _number(cfg, "model.dividend", 0.0)
    if p == 1:
        return MarketModel(s0, rate, np.array([[sigma]]), np.array([dividend]))
    kind = _choice(cfg, "model.correlation", ("synthetic", "independent"), "synthetic")
    if kind == "independent":
        vol = sigma * np.eye(p)
    else:
        factors = _integer(cfg, "model.factors", 2)
        eps = _number(cfg, "model.eps", 0.01, positive=True)
        cseed = _integer(cfg, "model.correlation_seed", 2019, minimum=0)
        vol = sigma * cholesky(synthetic_correlation(p, StreamKey(cseed, 0), factors, eps))
    return MarketModel(s0, rate, vol, np.full(p, dividend))


_PAYOFF_TYPES = ("call", "put", "up_and_in_put", "basket_call", "max_call")
_DEFAULT_PAYOFF = {"vanilla": "call", "barrier": "up_and_in_put", "basket": "basket_call", "delta": "call",
                   "lsm": "max_call", "qmc_vs_mc": "basket_call", "bias_slope": "call", "mlmc": "basket_call",
                   "bench": "basket_call"}


def _build_payoff(cfg: dict, kind: str, model: MarketModel):
    ptype = _choice(cfg, "payoff.type", _PAYOFF_TYPES, _DEFAULT_PAYOFF[kind])
    if ptype == "basket_call":
        w = _get(cfg, "payoff.weights", None)
        try:
            weights = np.full(model.p, 1.0 / model.p) if w is None else np.asarray(w, dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError("payoff.weights", "must be a list of numbers") from None
        if weights.shape != (model.p,):
            raise ConfigError("payoff.weights", f"needs {model.p} entries")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigError("payoff.weights", f"must sum to 1, got {weights.sum()!r}")
        strike = _get(cfg, "payoff.strike", "atm")
        if isinstance(strike, str) and strike.strip().lower() == "atm":
            return BasketCall.at_the_money(weights, model.s0)
        return BasketCall(tuple(weights), _number(cfg, "payoff.strike", positive=True))
    strike = _number(cfg, "payoff.strike", positive=True)
    if ptype == "call":
        return VanillaCall(strike, _integer(cfg, "payoff.asset", 0, minimum=0))
    if ptype == "put":
        return VanillaPut(strike, _integer(cfg, "payoff.asset", 0, minimum=0))
    if ptype == "max_call":
        return MaxOfNCall(strike)
    barrier = _number(cfg, "payoff.barrier", positive=True)
    bridge = bool(_get(cfg, "payoff.bridge", True))
    space = _choice(cfg, "payoff.bridge_space", ("log", "price"), "log")
    return UpAndInPut(strike, barrier, _integer(cfg, "payoff.asset", 0, minimum=0), bridge, space)


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, value = assignment.split("=", 1)
    node = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot override inside a scalar")
    node[parts[-1]] = yaml.safe_load(value)


def load_config(path, overrides=(), seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Parse and validate ``path``; raises :class:`ConfigError` on any problem."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {path}: {e.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"not valid YAML: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("<file>", "top level must be a mapping")
    for assignment in overrides:
        _apply_override(cfg, assignment)
    if seed is not None:
        cfg["seed"] = seed
    return validate_config(cfg, out)


def _unknown_fields(cfg: dict, seen: set, prefix: str = "") -> list[str]:
    unknown = []
    for key, value in cfg.items():
        path = f"{prefix}{key}"
        if path in seen:
            continue
        if isinstance(value, dict) and any(s.startswith(path + ".") for s in seen):
            unknown.extend(_unknown_fields(value, seen, path + "."))
        else:
            unknown.append(path)
    return unknown


def validate_config(cfg: dict, out: str | None = None) -> ExperimentConfig:
    """Validate a parsed config; fields the experiment never reads are rejected as typos."""
    seen: set = set()
    token = _consulted.set(seen)
    try:
        conf = _validate(cfg, out)
    finally:
        _consulted.reset(token)
    unknown = _unknown_fields(cfg, seen)
    if unknown:
        raise ConfigError(unknown[0], f"is not used by experiment '{conf.experiment}'")
    return conf


def _validate(cfg: dict, out: str | None) -> ExperimentConfig:
    kind = _choice(cfg, "experiment", EXPERIMENTS)
    seed = _integer(cfg, "seed", 2019, minimum=0)
    reps = _integer(cfg, "repetitions", 1)
    default_assets = {"basket": 16, "qmc_vs_mc": 16, "mlmc": 16, "bench": 64, "var_cvar": 64, "lsm": 2}.get(kind, 1)
    model = _build_model(cfg, default_assets)
    modes = _modes(cfg)
    maturity = _number(cfg, "sim.maturity", 1.0, positive=True)
    steps = _int_list(cfg, "sim.steps", 100)
    n_paths = _int_list(cfg, "sim.n_paths", 100000, minimum=2)
    scheme = _get(cfg, "sim.scheme", "euler")
    try:
        scheme = Scheme.parse(scheme)
    except ValueError as e:
        raise ConfigError("sim.scheme", str(e)) from None
    reference = _get(cfg, "reference", None)
    if reference is not None:
        reference = _number(cfg, "reference")
    output = out or _get(cfg, "output", None)
    conf = ExperimentConfig(kind, seed, reps, model, modes, n_paths, steps, maturity, scheme, output, cfg,
                            reference=reference)
    if kind != "var_cvar":
        conf.payoff = _build_payoff(cfg, kind, model)
        asset = getattr(conf.payoff, "asset", 0)
        if asset >= model.p:
            raise ConfigError("payoff.asset", f"is {asset}, model has {model.p} assets")
    _validate_kind(conf, cfg)
    return conf


def _validate_kind(conf: ExperimentConfig, cfg: dict) -> None:
    kind, p = conf.experiment, conf.params
    if kind == "delta":
        p["method"] = _choice(cfg, "delta.method", ("pathwise", "bump", "both"), "pathwise")
        p["h"] = _number(cfg, "delta.h", 1e-3, positive=True)
        comps = _int_list(cfg, "delta.components", 0, minimum=0)
        if max(comps) >= conf.model.p:
            raise ConfigError("delta.components", f"index out of range for {conf.model.p} assets")
        p["components"] = comps
        if isinstance(conf.payoff, UpAndInPut):
            raise ConfigError("payoff.type", "barrier payoffs have no pathwise delta")
    elif kind == "var_cvar":
        p["alpha"] = _number(cfg, "risk.alpha", 0.95, lo=0.0, hi=1.0)
        mny = _get(cfg, "risk.moneyness", [0.8, 0.9, 1.0, 1.1, 1.2])
        if not isinstance(mny, list) or not mny:
            raise ConfigError("risk.moneyness", "must be a non-empty list")
        if any(isinstance(m, bool) or not isinstance(m, (int, float)) or m < 0 for m in mny):
            raise ConfigError("risk.moneyness", "entries must be numbers >= 0")
        p["moneyness"] = [float(m) for m in mny]
        p["quantity"] = _number(cfg, "risk.quantity", 1.0)
    elif kind == "lsm":
        p["dates"] = _integer(cfg, "lsm.dates", 9)
        for h in conf.steps:
            if h % p["dates"]:
                raise ConfigError("lsm.dates", f"{p['dates']} dates do not divide sim.steps = {h}")
        ridge = _get(cfg, "lsm.ridge", None)
        p["ridge"] = None if ridge is None else _number(cfg, "lsm.ridge", nonneg=True)
        p["itm_only"] = bool(_get(cfg, "lsm.itm_only", True))
        if _get(cfg, "sim.scheme", None) is None:
            conf.scheme = Scheme.EXACT
    elif kind == "qmc_vs_mc":
        lo = _integer(cfg, "qmc.log2_min", 10)
        hi = _integer(cfg, "qmc.log2_max", 17)
        if hi < lo + 1:
            raise ConfigError("qmc.log2_max", "must exceed qmc.log2_min")
        if hi >= 32:
            raise ConfigError("qmc.log2_max", "Sobol index limit is 2^32")
        p["n_values"] = [1 << k for k in range(lo, hi + 1)]
        p["reference_log2"] = _integer(cfg, "qmc.reference_log2", 19)
        p["reference_shifts"] = _integer(cfg, "qmc.reference_shifts", 16, minimum=2)
        if 2 * conf.model.q > 1024:
            raise ConfigError("model.assets", "QMC needs 2 Sobol dimensions per asset (max 1024)")
    elif kind == "bias_slope":
        fine = max(conf.steps)
        if any(fine % h for h in conf.steps):
            raise ConfigError("sim.steps", "every step count must divide the largest")
    elif kind == "mlmc":
        p["n_coarse"] = _integer(cfg, "mlmc.n_coarse", 100000, minimum=2)
        p["n_fine"] = _integer(cfg, "mlmc.n_fine", max(2, p["n_coarse"] // 20), minimum=2)
        if p["n_fine"] > p["n_coarse"]:
            raise ConfigError("mlmc.n_fine", "must not exceed mlmc.n_coarse")
        p["coarse_mode"] = _modes(cfg, "mlmc.coarse_mode", ("mixed_bf16",))[0]
    elif kind == "bench":
        p["repeats"] = _integer(cfg, "bench.repeats", 3)


# ---------------------------------------------------------------------------
# running

@dataclass
class ResultRow:
    experiment: str
    repetition: int
    mode: str
    N: int
    H: int
    estimate: float
    std_error: float | None
    reference: float | None
    wall_time_ms: float


def _reference(conf: ExperimentConfig):
    if conf.reference is not None:
        return conf.reference
    m, pay = conf.model, conf.payoff
    if m.p != 1 or m.q != 1:
        return None
    sigma = float(m.asset_vol[0])
    if sigma == 0:
        return None
    args = (float(m.s0[0]), pay.strike, m.rate)
    q = float(m.dividend[0])
    if conf.experiment == "delta" and isinstance(pay, VanillaCall):
        return bs_analytic_delta(*args, sigma, conf.maturity, q)
    if isinstance(pay, VanillaCall):
        return bs_analytic_call(*args, sigma, conf.maturity, q)
    if isinstance(pay, UpAndInPut) and pay.barrier > m.s0[0]:
        return barrier_analytic_up_in_put(args[0], pay.strike, pay.barrier, m.rate, sigma, conf.maturity, q)
    return None


def _timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - t) * 1e3


def run_experiment(conf: ExperimentConfig) -> list[ResultRow]:
    """Run every repetition x step-count x precision cell of ``conf``."""
    kind = conf.experiment
    rows: list[ResultRow] = []
    ref = _reference(conf) if kind not in ("var_cvar", "qmc_vs_mc", "bias_slope", "mlmc") else None
    N = conf.n_paths[0]

    if kind in ("vanilla", "barrier", "basket"):
        for r in range(conf.repetitions):
            key = StreamKey(conf.seed, r)
            for H in conf.steps:
                grid = TimeGrid(conf.maturity, H)
                for mode in conf.modes:
                    res, ms = _timed(lambda: mc_price(conf.payoff, conf.model, grid, key, N, conf.scheme, mode))
                    rows.append(ResultRow(kind, r, mode.value, N, H, res.estimate, res.std_error, ref, ms))

    elif kind == "delta":
        prm = conf.params
        methods = ["pathwise", "bump"] if prm["method"] == "both" else [prm["method"]]
        for r in range(conf.repetitions):
            key = StreamKey(conf.seed, r)
            for H in conf.steps:
                grid = TimeGrid(conf.maturity, H)
                for mode in conf.modes:
                    for method in methods:
                        fn = pathwise_delta if method == "pathwise" else bump_delta
                        kw = {"h": prm["h"]} if method == "bump" else {}
                        res, ms = _timed(lambda: fn(conf.payoff, conf.model, grid, key, N, conf.scheme, mode,
                                                    components=prm["components"], **kw))
                        for c, est in zip(prm["components"], res):
                            name = f"delta.{method}" + (f"[{c}]" if len(prm["components"]) > 1 else "")
                            rows.append(ResultRow(name, r, mode.value, N, H, est.estimate, est.std_error,
                                                  ref, ms))

    elif kind == "var_cvar":
        prm = conf.params
        pf = desk_portfolio(conf.model.p, conf.model.s0, prm["moneyness"], prm["quantity"])
        for r in range(conf.repetitions):
            key = StreamKey(conf.seed, r)
            for H in conf.steps:
                grid = TimeGrid(conf.maturity, H)
                for mode in conf.modes:
                    pnl, ms = _timed(lambda: simulate_pnl(pf, conf.model, grid, key, N, mode, conf.scheme))
                    rows.append(ResultRow("var_cvar.var", r, mode.value, N, H, var(pnl, prm["alpha"]), None,
                                          conf.reference, ms))
                    rows.append(ResultRow("var_cvar.cvar", r, mode.value, N, H, cvar(pnl, prm["alpha"]), None,
                                          None, ms))

    elif kind == "lsm":
        prm = conf.params
        for r in range(conf.repetitions):
            key = StreamKey(conf.seed, r)
            for H in conf.steps:
                grid = TimeGrid(conf.maturity, H)
                sched = ExerciseSchedule.uniform(grid, prm["dates"])
                basis = RegressionBasis(conf.model.p, True, conf.payoff.strike)
                for mode in conf.modes:
                    res, ms = _timed(lambda: lsm_price(conf.payoff, conf.model, grid, sched, basis, key, N, mode,
                                                       prm["ridge"], scheme=conf.scheme,
                                                       itm_only=prm["itm_only"]))
                    rows.append(ResultRow(kind, r, mode.value, N, H, res.estimate, res.std_error, ref, ms))

    elif kind == "qmc_vs_mc":
        prm = conf.params
        for mode in conf.modes:
            refres = qmc_reference(conf.payoff, conf.model, conf.maturity, conf.seed, prm["reference_log2"],
                                   prm["reference_shifts"], mode)
            reference = conf.reference if conf.reference is not None else refres.estimate
            study, ms = _timed(lambda: convergence_study(conf.payoff, conf.model, conf.maturity, prm["n_values"],
                                                         conf.repetitions, conf.seed, reference, mode))
            per = ms / max(1, conf.repetitions * 2 * len(prm["n_values"]))
            for r in range(conf.repetitions):
                for j, n in enumerate(study.n_values):
                    rows.append(ResultRow("qmc_vs_mc.mc", r, mode.value, int(n), 1, study.mc_estimates[r, j],
                                          None, reference, per))
                    rows.append(ResultRow("qmc_vs_mc.qmc", r, mode.value, int(n), 1, study.qmc_estimates[r, j],
                                          None, reference, per))
            conf.params.setdefault("slopes", {})[mode.value] = (study.mc_slope, study.qmc_slope)

    elif kind == "bias_slope":
        for r in range(conf.repetitions):
            key = StreamKey(conf.seed, r)
            for mode in conf.modes:
                lv, ms = _timed(lambda: weak_error_levels(conf.payoff, conf.model, conf.maturity, conf.steps,
                                                          key, N, mode))
                for H, e, se in zip(lv.steps, lv.error, lv.std_error):
                    rows.append(ResultRow(kind, r, mode.value, N, int(H), float(e), float(se), 0.0,
                                          ms / len(lv.steps)))
                conf.params.setdefault("slopes", {})[(r, mode.value)] = lv.slope

    elif kind == "mlmc":
        prm = conf.params
        for r in range(conf.repetitions):
            key = StreamKey(conf.seed, r)
            for H in conf.steps:
                grid = TimeGrid(conf.maturity, H)
                res, ms = _timed(lambda: mlmc_two_level(conf.payoff, conf.model, grid, key, prm["n_fine"],
                                                        prm["n_coarse"], conf.scheme, prm["coarse_mode"]))
                full, ms2 = _timed(lambda: mc_price(conf.payoff, conf.model, grid, key, prm["n_coarse"],
                                                    conf.scheme, PrecisionMode.DOUBLE))
                rows.append(ResultRow("mlmc", r, f"{prm['coarse_mode'].value}+double", prm["n_coarse"], H,
                                      res.estimate, res.std_error, full.estimate, ms))
                rows.append(ResultRow("mlmc.variance_ratio", r, prm["coarse_mode"].value, prm["n_fine"], H,
                                      res.extras["variance_ratio"], None, None, ms))
                rows.append(ResultRow("mlmc.double", r, "double", prm["n_coarse"], H, full.estimate,
                                      full.std_error, None, ms2))
    else:  # pragma: no cover - bench is routed separately
        raise ValueError(f"experiment kind {kind!r} is not a result experiment")
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return str(v)


def write_rows(rows, stream, columns=RESULT_COLUMNS) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(getattr(row, c) if not isinstance(row, dict) else row[c]) for c in columns])


def summary_table(rows: list[ResultRow]) -> str:
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.experiment, row.mode, row.N, row.H), []).append(row)
    lines = [f"{'experiment':<22} {'mode':<18} {'N':>9} {'H':>5} {'reps':>5} {'mean':>14} {'mean_se':>11} "
             f"{'reference':>14}"]
    for (exp, mode, n, h), rs in groups.items():
        est = statistics.fmean(r.estimate for r in rs)
        ses = [r.std_error for r in rs if r.std_error is not None and math.isfinite(r.std_error)]
        se = f"{statistics.fmean(ses):11.3g}" if ses else f"{'':>11}"
        ref = rs[0].reference
        refs = f"{ref:14.8g}" if ref is not None else f"{'':>14}"
        lines.append(f"{exp:<22} {mode:<18} {n:>9} {h:>5} {len(rs):>5} {est:14.8g} {se} {refs}")
    return "\n".join(lines)


def run_bench(conf: ExperimentConfig) -> list[dict]:
    """Median-of-``repeats`` wall time and throughput per (mode, N, H) cell."""
    repeats = conf.params.get("repeats", 3)
    out = []
    for N in conf.n_paths:
        for H in conf.steps:
            grid = TimeGrid(conf.maturity, H)
            for mode in conf.modes:
                # one untimed run compiles kernels and warms caches
                mc_price(conf.payoff, conf.model, grid, StreamKey(conf.seed), min(N, 256), conf.scheme, mode)
                times = []
                for k in range(repeats):
                    _, ms = _timed(lambda: mc_price(conf.payoff, conf.model, grid, StreamKey(conf.seed, k), N,
                                                    conf.scheme, mode))
                    times.append(ms)
                med = statistics.median(times)
                out.append({"experiment": "bench", "mode": mode.value, "N": N, "H": H, "repeats": repeats,
                            "median_wall_time_ms": med, "paths_per_second": N / (med / 1e3)})
    return out


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcfin", description="Precision-parameterized Monte Carlo experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run an experiment config and write result CSV"),
                            ("bench", "measure throughput per precision mode")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--out", default=None, help="CSV output file (default: config 'output' or stdout)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, dotted path (repeatable)")
        p.add_argument("--quiet", action="store_true", help="suppress the summary table")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        conf = load_config(args.config, args.overrides, args.seed, args.out)
    except ConfigError as e:
        print(f"mcfin: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    set_threads(args.threads)
    try:
        buf = io.StringIO()
        if args.command == "bench" or conf.experiment == "bench":
            report = run_bench(conf)
            write_rows(report, buf, BENCH_COLUMNS)
            summary = None
        else:
            rows = run_experiment(conf)
            write_rows(rows, buf)
            summary = summary_table(rows)
    except Exception as e:  # surfaced as a simulation failure
        print(f"mcfin: simulation failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SIMULATION
    finally:
        set_threads(None)
    _emit(buf.getvalue(), conf.output)
    if not args.quiet:
        stream = sys.stderr if conf.output is None else sys.stdout
        if summary:
            print(summary, file=stream)
        for label, val in conf.params.get("slopes", {}).items():
            print(f"log-log slope {label}: {val}", file=stream)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
