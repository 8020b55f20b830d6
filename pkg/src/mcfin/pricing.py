"""Payoffs, Monte Carlo and quasi-Monte Carlo estimators, closed-form oracles.

Per-path discounted payoffs are produced chunk by chunk (chunk boundaries
depend only on the problem size) and reduced in float64 after the chunks
are concatenated in path order, so every estimate is reproducible at any
thread count.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import dual as ad
from .numerics import PrecisionMode
from .parallel import map_chunks
from .prng import StreamKey, uniform_block
from .qmc import DIRECTION_NUMBERS_ENV, SobolGenerator, digital_shift
from .sde import (MarketModel, PathBatch, Scheme, TimeGrid, _chunk_paths, exact_gbm_step,
                  simulate_paths)

__all__ = [
    "VanillaCall",
    "VanillaPut",
    "Forward",
    "UpAndInPut",
    "BasketCall",
    "MaxOfNCall",
    "EstimatorResult",
    "evaluate_payoff",
    "mc_price",
    "mc_samples",
    "qmc_price",
    "qmc_shift_estimates",
    "bs_analytic_call",
    "bs_analytic_put",
    "bs_analytic_delta",
    "barrier_analytic_up_in_put",
    "mlmc_two_level",
    "BRIDGE_TAG",
    "MLMC_TAG",
    "QMC_TAG",
]

CI_MULTIPLIER = 1.96
# tags for auxiliary streams derived from the path key
BRIDGE_TAG = 0xB81D
MLMC_TAG = 0x3C3C
QMC_TAG = 0x50B0


# ---------------------------------------------------------------------------
# payoffs

def _check_strike(strike):
    if not strike > 0 or not math.isfinite(strike):
        raise ValueError(f"strike must be finite and > 0, got {strike}")


@dataclass(frozen=True)
class VanillaCall:
    strike: float
    asset: int = 0
    maturity: float | None = None

    def __post_init__(self):
        _check_strike(self.strike)

    def intrinsic(self, s):
        return ad.maximum(ad.take(s, self.asset) - self.strike, 0.0)


@dataclass(frozen=True)
class VanillaPut:
    strike: float
    asset: int = 0
    maturity: float | None = None

    def __post_init__(self):
        _check_strike(self.strike)

    def intrinsic(self, s):
        return ad.maximum(self.strike - ad.take(s, self.asset), 0.0)


@dataclass(frozen=True)
class Forward:
    """Linear claim ``S_T - K``; handy as an exact-delta test case."""

    strike: float
    asset: int = 0
    maturity: float | None = None

    def intrinsic(self, s):
        return ad.take(s, self.asset) - self.strike


@dataclass(frozen=True)
class UpAndInPut:
    """Put activated once the asset touches ``barrier``.

    With ``bridge=True`` the path maximum between grid points is sampled
    from the Brownian-bridge law; ``bridge_space="log"`` applies the bridge
    to log-prices with the asset volatility (exact for lognormal paths),
    ``"price"`` to prices with the local volatility frozen at the interval
    start. ``bridge=False`` monitors the grid points only.
    """

    strike: float
    barrier: float
    asset: int = 0
    bridge: bool = True
    bridge_space: str = "log"
    maturity: float | None = None

    def __post_init__(self):
        _check_strike(self.strike)
        if not self.barrier > 0:
            raise ValueError(f"barrier must be > 0, got {self.barrier}")
        if self.bridge_space not in ("log", "price"):
            raise ValueError(f"bridge_space must be 'log' or 'price', got {self.bridge_space!r}")

    def intrinsic(self, s):
        return ad.maximum(self.strike - ad.take(s, self.asset), 0.0)


@dataclass(frozen=True)
class BasketCall:
    weights: tuple
    strike: float
    maturity: float | None = None

    def __post_init__(self):
        _check_strike(self.strike)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"basket weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def at_the_money(cls, weights, s0) -> "BasketCall":
        """Strike equal to the weighted sum of initial prices."""
        w = np.asarray(weights, dtype=np.float64)
        return cls(tuple(w), float(np.dot(w, np.asarray(s0, dtype=np.float64))))

    @classmethod
    def equal_weight(cls, p: int, s0) -> "BasketCall":
        return cls.at_the_money(np.full(p, 1.0 / p), s0)

    def intrinsic(self, s):
        w = np.asarray(self.weights)
        if isinstance(s, ad.Dual):
            w = w.astype(s.primal.dtype)
        else:
            w = w.astype(np.asarray(s).dtype)
        return ad.maximum(ad.weighted_sum(s, w) - self.strike, 0.0)


@dataclass(frozen=True)
class MaxOfNCall:
    strike: float
    maturity: float | None = None

    def __post_init__(self):
        _check_strike(self.strike)

    def intrinsic(self, s):
        return ad.maximum(ad.max_last(s) - self.strike, 0.0)


def _check_maturity(payoff, maturity: float):
    T = getattr(payoff, "maturity", None)
    if T is not None and abs(T - maturity) > 1e-12 * max(1.0, T):
        raise ValueError(f"payoff maturity {T} does not match the simulated horizon {maturity}")


def _check_assets(payoff, p: int):
    if isinstance(payoff, BasketCall) and len(payoff.weights) != p:
        raise ValueError(f"basket has {len(payoff.weights)} weights, model has {p} assets")
    asset = getattr(payoff, "asset", 0)
    if not 0 <= asset < p:
        raise ValueError(f"payoff references asset {asset}, model has {p}")


# ---------------------------------------------------------------------------
# results

@dataclass
class EstimatorResult:
    """Point estimate with its standard error.

    ``extras`` carries estimator-specific diagnostics (variance ratios,
    per-shift estimates, optional per-path samples).
    """

    estimate: float
    std_error: float
    n_samples: int
    mode: PrecisionMode
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")

    @property
    def ci(self) -> tuple[float, float]:
        half = CI_MULTIPLIER * self.std_error
        return self.estimate - half, self.estimate + half

    def __repr__(self):
        return (f"EstimatorResult(estimate={self.estimate:.10g}, std_error={self.std_error:.3g}, "
                f"n_samples={self.n_samples}, mode={self.mode.value})")


def _summarize(samples: np.ndarray, mode: PrecisionMode, keep: bool = False, **extras) -> EstimatorResult:
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    if keep:
        extras["samples"] = samples
    return EstimatorResult(mean, se, n, mode, extras)


# ---------------------------------------------------------------------------
# payoff evaluation

def _barrier_hit(payoff: UpAndInPut, batch: PathBatch, bridge_key: StreamKey | None) -> np.ndarray:
    s = batch.values[:, :, payoff.asset]
    hit = np.max(s, axis=1) >= payoff.barrier
    if not payoff.bridge:
        return hit
    if bridge_key is None:
        raise ValueError("a bridge key is required to price a bridged barrier payoff")
    H = batch.grid.steps
    dt = batch.grid.dt
    u = uniform_block(bridge_key, batch.path_indices, 0, H, dtype=s.dtype, open_interval=True)
    sigma = batch.model.asset_vol[payoff.asset]
    left, right = s[:, :-1], s[:, 1:]
    with np.errstate(divide="ignore"):
        if payoff.bridge_space == "log":
            m = _bridge_max(np.log(left), np.log(right), s.dtype.type(sigma), dt, u)
            level = np.log(s.dtype.type(payoff.barrier))
        else:
            m = _bridge_max(left, right, s.dtype.type(sigma) * left, dt, u)
            level = payoff.barrier
    return hit | np.any(m >= level, axis=1)


def _bridge_max(x, y, sigma_local, dt, u):
    diff = x - y
    dt = x.dtype.type(dt)
    return x.dtype.type(0.5) * (x + y + np.sqrt(diff * diff - x.dtype.type(2.0) * dt
                                                 * np.square(sigma_local) * np.log(u)))


def evaluate_payoff(payoff, batch: PathBatch, bridge_key: StreamKey | None = None) -> np.ndarray:
    """Discounted payoff of every path in ``batch`` as float64.

    Barrier payoffs with bridging draw one uniform per path and interval
    from ``bridge_key`` (counter ``(path, interval)``), so the draws are
    disjoint from the path normals whenever the key differs from the path
    key.
    """
    _check_maturity(payoff, batch.grid.maturity)
    _check_assets(payoff, batch.model.p)
    value = np.asarray(payoff.intrinsic(batch.terminal))
    if isinstance(payoff, UpAndInPut):
        value = np.where(_barrier_hit(payoff, batch, bridge_key), value, value.dtype.type(0))
    disc = math.exp(-batch.model.rate * batch.grid.maturity)
    return value.astype(np.float64) * disc


def mc_samples(payoff, model: MarketModel, grid: TimeGrid, key: StreamKey, n: int,
               scheme=Scheme.EULER, mode=PrecisionMode.DOUBLE, path_start: int = 0,
               bridge_key: StreamKey | None = None) -> np.ndarray:
    """Per-path discounted payoffs for paths ``path_start .. path_start + n - 1``."""
    scheme = Scheme.parse(scheme)
    mode = PrecisionMode.parse(mode)
    _check_maturity(payoff, grid.maturity)
    _check_assets(payoff, model.p)
    if bridge_key is None and isinstance(payoff, UpAndInPut) and payoff.bridge:
        bridge_key = key.derive(BRIDGE_TAG)

    def work(s, e):
        batch = simulate_paths(model, grid, key, e - s, scheme, mode, path_start=path_start + s)
        return evaluate_payoff(payoff, batch, bridge_key)

    parts = map_chunks(work, n, _chunk_paths(grid, model))
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


def mc_price(payoff, model: MarketModel, grid: TimeGrid, key: StreamKey, n: int,
             scheme=Scheme.EULER, mode=PrecisionMode.DOUBLE, *, bridge_key: StreamKey | None = None,
             keep_samples: bool = False) -> EstimatorResult:
    """Monte Carlo price: mean of ``n`` discounted payoffs and its standard error.

    Parameters
    ----------
    payoff
        Any payoff object of this module.
    key : StreamKey
        Path stream; path ``i`` uses counter row ``i``.
    n : int
        Number of paths, at least 2.
    bridge_key : StreamKey, optional
        Stream for bridge uniforms of barrier payoffs; defaults to a key
        derived from ``key``.
    keep_samples : bool
        Store the per-path discounted payoffs in ``extras["samples"]``.
    """
    if n < 2:
        raise ValueError(f"need at least 2 paths for a standard error, got {n}")
    mode = PrecisionMode.parse(mode)
    samples = mc_samples(payoff, model, grid, key, n, scheme, mode, bridge_key=bridge_key)
    return _summarize(samples, mode, keep_samples)


# ---------------------------------------------------------------------------
# quasi-Monte Carlo

@functools.lru_cache(maxsize=8)
def _sobol(dimension: int, env_value: str | None) -> SobolGenerator:
    return SobolGenerator(dimension)


def _qmc_normals(gen: SobolGenerator, start: int, n: int, q: int) -> np.ndarray:
    # coordinates (2j, 2j + 1) feed the Box-Muller pair of factor j
    lattice = gen.lattice(start, n)
    u = lattice.astype(np.float64) * 2.0 ** -32
    u1 = u[:, 0:2 * q:2]
    u1[u1 == 0.0] = 2.0 ** -32
    u2 = u[:, 1:2 * q:2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def qmc_shift_estimates(payoff, model: MarketModel, key: StreamKey, n: int,
                        mode=PrecisionMode.DOUBLE, maturity: float | None = None,
                        n_shifts: int = 16, generator: SobolGenerator | None = None) -> np.ndarray:
    """Estimates from ``n_shifts`` independently shifted Sobol point sets of size ``n``.

    Shift ``s`` uses the key ``key.derive(s)``.
    """
    mode = PrecisionMode.parse(mode)
    T = maturity if maturity is not None else getattr(payoff, "maturity", None)
    if T is None:
        raise ValueError("qmc pricing needs a maturity (argument or payoff field)")
    _check_maturity(payoff, T)
    _check_assets(payoff, model.p)
    if n < 1 or n_shifts < 1:
        raise ValueError("n and n_shifts must be >= 1")
    dim = 2 * model.q
    if generator is None:
        table_dim = _sobol_budget()
        if dim > table_dim:
            raise ValueError(f"QMC needs {dim} Sobol dimensions, direction numbers provide {table_dim}")
        generator = _sobol(dim, os.environ.get(DIRECTION_NUMBERS_ENV))
    elif generator.dimension < dim:
        raise ValueError(f"QMC needs {dim} Sobol dimensions, generator has {generator.dimension}")
    disc = math.exp(-model.rate * T)
    chunk = max(64, (1 << 18) // max(model.p, model.q))
    out = np.empty(n_shifts)
    for s in range(n_shifts):
        gen = digital_shift(generator, key.derive(s))

        def work(a, b):
            z = _qmc_normals(gen, a, b - a, model.q).astype(mode.dtype)
            x0 = np.broadcast_to(mode.cast(model.s0), (b - a, model.p))
            sT = exact_gbm_step(x0, model, z, T, mode)
            return np.asarray(payoff.intrinsic(sT)).astype(np.float64)

        vals = np.concatenate(map_chunks(work, n, chunk))
        out[s] = disc * float(np.mean(vals))
    return out


def _sobol_budget() -> int:
    return _sobol(1, os.environ.get(DIRECTION_NUMBERS_ENV)).table.max_dimension


def qmc_price(payoff, model: MarketModel, key: StreamKey, n: int, mode=PrecisionMode.DOUBLE,
              maturity: float | None = None, n_shifts: int = 16,
              generator: SobolGenerator | None = None) -> EstimatorResult:
    """Randomized QMC price over terminal values (single exact lognormal step).

    The estimate averages ``n_shifts`` digitally shifted replicas of ``n``
    Sobol points each; the standard error is the spread of the replica
    means. The point set has ``2 q`` coordinates, two per driving factor.
    """
    if n_shifts < 2:
        raise ValueError("at least 2 digital shifts are needed for a standard error")
    mode = PrecisionMode.parse(mode)
    est = qmc_shift_estimates(payoff, model, key, n, mode, maturity, n_shifts, generator)
    se = float(np.std(est, ddof=1) / math.sqrt(n_shifts))
    return EstimatorResult(float(np.mean(est)), se, n * n_shifts, mode,
                           {"shift_estimates": est, "points_per_shift": n})


# ---------------------------------------------------------------------------
# closed forms

def _d1_d2(s0, k, r, sigma, t, q=0.0):
    vol = sigma * math.sqrt(t)
    d1 = (math.log(s0 / k) + (r - q + 0.5 * sigma * sigma) * t) / vol
    return d1, d1 - vol


def _check_bs(s0, k, sigma, t):
    if not (s0 > 0 and k > 0 and sigma > 0 and t > 0):
        raise ValueError("Black-Scholes inputs S0, K, sigma, T must be > 0")


def bs_analytic_call(s0: float, k: float, r: float, sigma: float, t: float, q: float = 0.0) -> float:
    """Black-Scholes call with continuous dividend yield ``q``."""
    _check_bs(s0, k, sigma, t)
    d1, d2 = _d1_d2(s0, k, r, sigma, t, q)
    return s0 * math.exp(-q * t) * ndtr(d1) - k * math.exp(-r * t) * ndtr(d2)


def bs_analytic_put(s0: float, k: float, r: float, sigma: float, t: float, q: float = 0.0) -> float:
    _check_bs(s0, k, sigma, t)
    d1, d2 = _d1_d2(s0, k, r, sigma, t, q)
    return k * math.exp(-r * t) * ndtr(-d2) - s0 * math.exp(-q * t) * ndtr(-d1)


def bs_analytic_delta(s0: float, k: float, r: float, sigma: float, t: float, q: float = 0.0) -> float:
    """Call delta ``exp(-q T) N(d1)``."""
    _check_bs(s0, k, sigma, t)
    d1, _ = _d1_d2(s0, k, r, sigma, t, q)
    return math.exp(-q * t) * ndtr(d1)


def barrier_analytic_up_in_put(s0: float, k: float, b: float, r: float, sigma: float, t: float,
                               q: float = 0.0) -> float:
    """Continuously monitored up-and-in put under Black-Scholes.

    Reflection-principle formulas: for ``b >= k`` the price is given
    directly; for ``b < k`` it is the vanilla put minus the up-and-out put.
    """
    _check_bs(s0, k, sigma, t)
    if not b > s0:
        raise ValueError(f"up-and-in barrier must exceed S0 ({b} <= {s0})")
    sq = sigma * math.sqrt(t)
    lam = (r - q + 0.5 * sigma * sigma) / (sigma * sigma)
    ratio = b / s0
    dq = math.exp(-q * t)
    dr = math.exp(-r * t)
    if b >= k:
        y = math.log(b * b / (s0 * k)) / sq + lam * sq
        return (-s0 * dq * ratio ** (2 * lam) * ndtr(-y)
                + k * dr * ratio ** (2 * lam - 2) * ndtr(-y + sq))
    x1 = math.log(s0 / b) / sq + lam * sq
    y1 = math.log(b / s0) / sq + lam * sq
    up_out = (-s0 * dq * ndtr(-x1) + k * dr * ndtr(-x1 + sq)
              + s0 * dq * ratio ** (2 * lam) * ndtr(-y1)
              - k * dr * ratio ** (2 * lam - 2) * ndtr(-y1 + sq))
    return bs_analytic_put(s0, k, r, sigma, t, q) - up_out


# ---------------------------------------------------------------------------
# two-level precision MLMC

def mlmc_two_level(payoff, model: MarketModel, grid: TimeGrid, key: StreamKey, n_fine: int,
                   n_coarse: int, scheme=Scheme.EULER,
                   coarse_mode=PrecisionMode.MIXED_BF16,
                   fine_mode=PrecisionMode.DOUBLE) -> EstimatorResult:
    """Low-precision estimate plus a small high-precision correction.

    ``estimate = mean_{n_coarse}(f_coarse) + mean_{n_fine}(f_fine - f_coarse)``.
    The coarse term uses paths of ``key``; the correction uses both
    precisions on the same paths of a derived key, so the two terms are
    independent and the standard errors add in quadrature.

    ``extras`` holds both terms, their standard errors and
    ``variance_ratio = Var(correction) / Var(coarse payoff)``.
    """
    if not 2 <= n_fine <= n_coarse:
        raise ValueError(f"need 2 <= n_fine <= n_coarse, got {n_fine}, {n_coarse}")
    coarse_mode = PrecisionMode.parse(coarse_mode)
    fine_mode = PrecisionMode.parse(fine_mode)
    coarse = mc_samples(payoff, model, grid, key, n_coarse, scheme, coarse_mode)
    ckey = key.derive(MLMC_TAG)
    fine = mc_samples(payoff, model, grid, ckey, n_fine, scheme, fine_mode)
    low = mc_samples(payoff, model, grid, ckey, n_fine, scheme, coarse_mode)
    corr = fine - low
    var_c = float(np.var(coarse, ddof=1))
    var_corr = float(np.var(corr, ddof=1))
    se_c = math.sqrt(var_c / n_coarse)
    se_corr = math.sqrt(var_corr / n_fine)
    est = float(np.mean(coarse)) + float(np.mean(corr))
    extras = {
        "coarse_estimate": float(np.mean(coarse)),
        "coarse_std_error": se_c,
        "correction": float(np.mean(corr)),
        "correction_std_error": se_corr,
        "correction_variance": var_corr,
        "payoff_variance": var_c,
        "variance_ratio": var_corr / var_c if var_c > 0 else float("nan"),
    }
    return EstimatorResult(est, math.sqrt(se_c ** 2 + se_corr ** 2), n_coarse + n_fine, fine_mode, extras)
