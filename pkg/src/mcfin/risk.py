"""Portfolio profit-and-loss simulation with VaR and CVaR estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .numerics import PrecisionMode
from .parallel import map_chunks
from .prng import StreamKey
from .sde import MarketModel, Scheme, TimeGrid, _chunk_paths, simulate_paths

__all__ = [
    "CallPosition",
    "Portfolio",
    "desk_portfolio",
    "simulate_pnl",
    "value_at_risk",
    "conditional_value_at_risk",
    "var",
    "cvar",
    "TailError",
    "write_pnl_csv",
]


class TailError(ValueError):
    """No sample lies strictly beyond the VaR threshold."""


@dataclass(frozen=True)
class CallPosition:
    """``quantity`` European calls on ``asset`` expiring at the risk horizon.

    A zero strike is allowed and turns the call into the stock itself.
    """

    asset: int
    strike: float
    quantity: float = 1.0

    def __post_init__(self):
        if not self.strike >= 0 or not math.isfinite(self.strike):
            raise ValueError(f"strike must be finite and >= 0, got {self.strike}")
        if not math.isfinite(self.quantity):
            raise ValueError("quantity must be finite")


@dataclass(frozen=True)
class Portfolio:
    positions: tuple

    def __post_init__(self):
        pos = tuple(self.positions)
        if not pos:
            raise ValueError("a portfolio needs at least one position")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)

    @property
    def assets(self) -> np.ndarray:
        return np.array([p.asset for p in self.positions], dtype=np.intp)

    @property
    def strikes(self) -> np.ndarray:
        return np.array([p.strike for p in self.positions], dtype=np.float64)

    @property
    def quantities(self) -> np.ndarray:
        return np.array([p.quantity for p in self.positions], dtype=np.float64)

    def scaled(self, factor: float) -> "Portfolio":
        return Portfolio(tuple(CallPosition(p.asset, p.strike, p.quantity * factor) for p in self.positions))

    def initial_value(self, model: MarketModel, horizon: float) -> float:
        """Black-Scholes value of every position, summed in position order."""
        vols = model.asset_vol
        total = 0.0
        for pos in self.positions:
            total += pos.quantity * _call_value(model.s0[pos.asset], pos.strike, model.rate,
                                                vols[pos.asset], horizon, model.dividend[pos.asset])
        return total


def _call_value(s0, k, r, sigma, t, q):
    fwd = s0 * math.exp(-q * t)
    if k == 0:
        return fwd
    if sigma == 0:
        return max(fwd - k * math.exp(-r * t), 0.0)
    vol = sigma * math.sqrt(t)
    d1 = (math.log(s0 / k) + (r - q + 0.5 * sigma * sigma) * t) / vol
    return fwd * ndtr(d1) - k * math.exp(-r * t) * ndtr(d1 - vol)


def desk_portfolio(p: int, s0, moneyness=(0.8, 0.9, 1.0, 1.1, 1.2), quantity: float = 1.0) -> Portfolio:
    """``len(moneyness)`` calls per asset with strikes at the given fractions of spot."""
    s0 = np.broadcast_to(np.asarray(s0, dtype=np.float64), (p,))
    return Portfolio(tuple(CallPosition(j, float(m * s0[j]), quantity) for j in range(p) for m in moneyness))


def simulate_pnl(portfolio: Portfolio, model: MarketModel, grid: TimeGrid, key: StreamKey, n: int,
                 mode=PrecisionMode.DOUBLE, scheme=Scheme.EXACT,
                 initial_value: float | None = None) -> np.ndarray:
    """Horizon value minus initial value, one entry per scenario.

    Positions are valued at intrinsic value on the horizon ``grid.maturity``
    and accumulated in position order in the working precision of ``mode``;
    all positions of a scenario read the same simulated path. The initial
    value defaults to the Black-Scholes value of the book.
    """
    mode = PrecisionMode.parse(mode)
    scheme = Scheme.parse(scheme)
    assets = portfolio.assets
    if assets.min() < 0 or assets.max() >= model.p:
        raise ValueError(f"portfolio references assets outside 0..{model.p - 1}")
    strikes = mode.cast(portfolio.strikes)
    qty = mode.cast(portfolio.quantities)
    v0 = portfolio.initial_value(model, grid.maturity) if initial_value is None else float(initial_value)

    def work(s, e):
        sT = simulate_paths(model, grid, key, e - s, scheme, mode, path_start=s).terminal
        value = np.zeros(e - s, dtype=mode.dtype)
        for i in range(len(portfolio)):
            value += qty[i] * np.maximum(sT[:, assets[i]] - strikes[i], mode.dtype.type(0))
        return value.astype(np.float64) - v0

    parts = map_chunks(work, n, _chunk_paths(grid, model))
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


def _sorted_sample(pnl, alpha):
    x = np.asarray(pnl, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty PnL sample")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not np.all(np.isfinite(x)):
        raise ValueError("PnL sample contains non-finite values")
    return np.sort(x)


def _order_index(n: int, alpha: float) -> int:
    # 1-based rank ceil((1 - alpha) N), guarded against 0.05 * N landing a hair above an integer
    k = math.ceil((1.0 - alpha) * n - 1e-9 * max(1.0, n * (1.0 - alpha)))
    return min(max(k, 1), n)


def value_at_risk(pnl, alpha: float = 0.95) -> float:
    """Lower empirical quantile: minus the ``ceil((1 - alpha) N)``-th smallest PnL."""
    x = _sorted_sample(pnl, alpha)
    return float(-x[_order_index(x.size, alpha) - 1])


def conditional_value_at_risk(pnl, alpha: float = 0.95) -> float:
    """Minus the mean PnL over scenarios whose loss strictly exceeds VaR.

    Raises
    ------
    TailError
        When no loss exceeds VaR (e.g. a constant sample); more scenarios
        are needed.
    """
    x = _sorted_sample(pnl, alpha)
    threshold = -x[_order_index(x.size, alpha) - 1]
    tail = x[-x > threshold]
    if tail.size == 0:
        raise TailError(f"no scenario loses more than VaR = {threshold!r}; increase the sample size")
    return float(-np.mean(tail))


var = value_at_risk
cvar = conditional_value_at_risk


def write_pnl_csv(pnl, path) -> None:
    """One PnL value per line, full round-trip precision."""
    np.savetxt(path, np.asarray(pnl, dtype=np.float64), fmt="%.17g")
