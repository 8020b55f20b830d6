"""Multi-run studies: discretization bias, precision bias, convergence rates."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .numerics import PrecisionMode
from .parallel import map_chunks
from .pricing import QMC_TAG, _check_assets, _qmc_normals, _sobol, mc_samples, qmc_price
from .prng import StreamKey, normal_block
from .qmc import DIRECTION_NUMBERS_ENV, digital_shift
from .sde import MarketModel, Scheme, TimeGrid, exact_gbm_step, simulate_paths

__all__ = [
    "coarsen_normals",
    "WeakErrorLevels",
    "weak_error_levels",
    "loglog_slope",
    "coupled_prices",
    "ConvergenceStudy",
    "convergence_study",
    "qmc_values",
    "qmc_reference",
]


def coarsen_normals(z: np.ndarray, factor: int) -> np.ndarray:
    """Sum ``factor`` consecutive per-step normals and renormalize.

    ``z`` has shape ``(n, H, q)``; the result ``(n, H // factor, q)`` drives
    the coarse grid with exactly the Brownian increments of the fine grid.
    """
    n, H, q = z.shape
    if factor < 1 or H % factor:
        raise ValueError(f"factor {factor} does not divide {H} steps")
    return z.reshape(n, H // factor, factor, q).sum(axis=2) / math.sqrt(factor)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("log-log fit needs positive values")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class WeakErrorLevels:
    steps: np.ndarray
    error: np.ndarray
    std_error: np.ndarray
    n_paths: int

    @property
    def slope(self) -> float:
        return loglog_slope(self.steps, np.abs(self.error))


def _chunk_for(steps: int, q: int) -> int:
    return max(64, (1 << 18) // ((steps + 1) * q))


def weak_error_levels(payoff, model: MarketModel, maturity: float, steps, key: StreamKey, n: int,
                      mode=PrecisionMode.DOUBLE) -> WeakErrorLevels:
    """Euler weak error ``E[f(X^H_T)] - E[f(X_T)]`` for several ``H`` with common noise.

    All levels are driven by the Brownian increments of the finest grid
    (coarser increments are sums of finer ones) and the reference is the
    exact lognormal solution at the same terminal Brownian value, so the
    per-path differences have small variance and the bias is resolved far
    below the plain Monte Carlo noise.
    """
    mode = PrecisionMode.parse(mode)
    steps = sorted(int(h) for h in steps)
    fine = steps[-1]
    if any(fine % h for h in steps):
        raise ValueError(f"every step count must divide the finest ({fine})")
    _check_assets(payoff, model.p)
    q = model.q
    disc = math.exp(-model.rate * maturity)

    def work(s, e):
        z = normal_block(key, np.arange(s, e, dtype=np.uint64), 0, fine * q, mode.dtype)
        z = z.reshape(e - s, fine, q)
        zT = (z.astype(np.float64).sum(axis=1) / math.sqrt(fine)).astype(mode.dtype)
        x0 = np.broadcast_to(mode.cast(model.s0), (e - s, model.p))
        exact = np.asarray(payoff.intrinsic(exact_gbm_step(x0, model, zT, maturity, mode))).astype(np.float64)
        out = np.empty((len(steps), e - s))
        for j, h in enumerate(steps):
            zc = coarsen_normals(z.astype(np.float64), fine // h).astype(mode.dtype)
            xT = simulate_paths(model, TimeGrid(maturity, h), key, e - s, Scheme.EULER, mode,
                                path_start=s, normals=zc).terminal
            out[j] = (np.asarray(payoff.intrinsic(xT)).astype(np.float64) - exact) * disc
        return out

    diffs = np.concatenate(map_chunks(work, n, _chunk_for(fine, q)), axis=1)
    err = diffs.mean(axis=1)
    se = diffs.std(axis=1, ddof=1) / math.sqrt(n)
    return WeakErrorLevels(np.asarray(steps), err, se, n)


def coupled_prices(payoff, model: MarketModel, maturity: float, fine_steps: int, coarse_steps: int,
                   key: StreamKey, n: int, modes=(PrecisionMode.DOUBLE, PrecisionMode.MIXED_BF16),
                   scheme=Scheme.EULER) -> dict:
    """Prices on a fine grid in several precisions and on a coarse grid in Double.

    Every price uses the paths of ``key``: the fine-grid runs regenerate
    them in each precision, the coarse grid sums the fine Double increments.
    Returns ``{(mode, steps): mean discounted payoff}``.
    """
    fine_grid = TimeGrid(maturity, fine_steps)
    factor = fine_steps // coarse_steps
    if factor * coarse_steps != fine_steps:
        raise ValueError("coarse step count must divide the fine one")
    out = {}
    for mode in modes:
        mode = PrecisionMode.parse(mode)
        out[(mode, fine_steps)] = float(np.mean(mc_samples(payoff, model, fine_grid, key, n, scheme, mode)))
    q = model.q
    disc = math.exp(-model.rate * maturity)

    def work(s, e):
        z = normal_block(key, np.arange(s, e, dtype=np.uint64), 0, fine_steps * q).reshape(e - s, fine_steps, q)
        zc = coarsen_normals(z, factor)
        batch = simulate_paths(model, TimeGrid(maturity, coarse_steps), key, e - s, scheme,
                               PrecisionMode.DOUBLE, path_start=s, normals=zc)
        return np.asarray(payoff.intrinsic(batch.terminal)).astype(np.float64) * disc

    coarse = np.concatenate(map_chunks(work, n, _chunk_for(fine_steps, q)))
    out[(PrecisionMode.DOUBLE, coarse_steps)] = float(np.mean(coarse))
    return out


@dataclass
class ConvergenceStudy:
    n_values: np.ndarray
    mc_rmse: np.ndarray
    qmc_rmse: np.ndarray
    reference: float
    mc_estimates: np.ndarray   # (reps, len(n_values))
    qmc_estimates: np.ndarray

    @property
    def mc_slope(self) -> float:
        return loglog_slope(self.n_values, self.mc_rmse)

    @property
    def qmc_slope(self) -> float:
        return loglog_slope(self.n_values, self.qmc_rmse)


def _prefix_means(values: np.ndarray, n_values) -> np.ndarray:
    csum = np.cumsum(values)
    return np.array([csum[n - 1] / n for n in n_values])


def qmc_values(payoff, model: MarketModel, maturity: float, key: StreamKey, n: int,
               mode=PrecisionMode.DOUBLE) -> np.ndarray:
    """Discounted payoffs at the first ``n`` points of one digitally shifted Sobol set."""
    mode = PrecisionMode.parse(mode)
    gen = digital_shift(_sobol(2 * model.q, os.environ.get(DIRECTION_NUMBERS_ENV)), key)
    disc = math.exp(-model.rate * maturity)

    def work(a, b):
        z = _qmc_normals(gen, a, b - a, model.q).astype(mode.dtype)
        x0 = np.broadcast_to(mode.cast(model.s0), (b - a, model.p))
        return np.asarray(payoff.intrinsic(exact_gbm_step(x0, model, z, maturity, mode))).astype(np.float64)

    return np.concatenate(map_chunks(work, n, max(64, (1 << 18) // model.p))) * disc


def convergence_study(payoff, model: MarketModel, maturity: float, n_values, reps: int, seed: int,
                      reference: float, mode=PrecisionMode.DOUBLE) -> ConvergenceStudy:
    """Root-mean-square error of MC and randomized QMC over ``reps`` independent runs.

    Repetition ``r`` uses paths of ``StreamKey(seed, r)`` for MC and one
    digital shift from a key derived from it for QMC. Estimates at the
    smaller sizes are prefixes of the largest run, which is exactly what an
    independent run of that size would return.
    """
    n_values = np.asarray(sorted(int(n) for n in n_values))
    n_max = int(n_values[-1])
    grid = TimeGrid(maturity, 1)
    mc = np.empty((reps, n_values.size))
    qm = np.empty((reps, n_values.size))
    for r in range(reps):
        key = StreamKey(seed, r)
        mc[r] = _prefix_means(mc_samples(payoff, model, grid, key, n_max, Scheme.EXACT, mode), n_values)
        qm[r] = _prefix_means(qmc_values(payoff, model, maturity, key.derive(QMC_TAG), n_max, mode), n_values)
    mc_rmse = np.sqrt(np.mean((mc - reference) ** 2, axis=0))
    qmc_rmse = np.sqrt(np.mean((qm - reference) ** 2, axis=0))
    return ConvergenceStudy(n_values, mc_rmse, qmc_rmse, reference, mc, qm)


def qmc_reference(payoff, model: MarketModel, maturity: float, seed: int, log2_points: int = 20,
                  n_shifts: int = 16, mode=PrecisionMode.DOUBLE):
    """High-accuracy randomized QMC price used as the convergence reference."""
    return qmc_price(payoff, model, StreamKey(seed, 1 << 32), 1 << log2_points, mode,
                     maturity=maturity, n_shifts=n_shifts)
