"""Pathwise deltas by forward-mode differentiation, and a bump-and-revalue oracle."""

from __future__ import annotations

import math

import numpy as np

from . import dual as ad
from .numerics import PrecisionMode
from .parallel import map_chunks
from .prng import StreamKey, normal_block
from .pricing import EstimatorResult, UpAndInPut, _check_assets, _check_maturity, mc_samples
from .sde import MarketModel, Scheme, TimeGrid, _chunk_paths, _euler_update, _exact_update, _shocks

__all__ = ["UnsupportedPayoffError", "pathwise_delta", "bump_delta"]


class UnsupportedPayoffError(TypeError):
    """The payoff has no pathwise derivative (e.g. a barrier indicator)."""


def _dual_terminal(model, grid, key, start, n, scheme, mode, components):
    H, q = grid.steps, model.q
    dt = grid.dt
    paths = np.arange(start, start + n, dtype=np.uint64)
    z = normal_block(key, paths, 0, H * q, mode.dtype).reshape(n * H, q)
    shocks = _shocks(model, z, dt, mode).reshape(n, H, model.p)
    update = _euler_update if scheme is Scheme.EULER else _exact_update
    x = ad.seed(np.broadcast_to(mode.cast(model.s0), (n, model.p)), components)
    for i in range(H):
        x = update(x, model, shocks[:, i, :], dt, mode)
    return x


def pathwise_delta(payoff, model: MarketModel, grid: TimeGrid, key: StreamKey, n: int,
                   scheme=Scheme.EXACT, mode=PrecisionMode.DOUBLE,
                   components=None) -> list[EstimatorResult]:
    """Delta of the price with respect to each seeded initial price.

    The simulation is repeated on dual numbers seeded at ``X_0``; the paths
    use the same normals as :func:`~mcfin.pricing.mc_price` with the same
    key, so the primal of every path equals the priced path bit for bit.

    Parameters
    ----------
    components : sequence of int, optional
        Asset indices to differentiate against (default: all).

    Returns
    -------
    list of EstimatorResult
        One result per component; ``extras["price"]`` on the first entry
        holds the primal price estimate.
    """
    if isinstance(payoff, UpAndInPut):
        raise UnsupportedPayoffError("barrier payoffs have no pathwise delta (indicator of the path maximum)")
    if n < 2:
        raise ValueError(f"need at least 2 paths, got {n}")
    scheme = Scheme.parse(scheme)
    mode = PrecisionMode.parse(mode)
    _check_maturity(payoff, grid.maturity)
    _check_assets(payoff, model.p)
    comps = list(range(model.p)) if components is None else [int(c) for c in components]
    disc = math.exp(-model.rate * grid.maturity)

    def work(s, e):
        xT = _dual_terminal(model, grid, key, s, e - s, scheme, mode, comps)
        v = payoff.intrinsic(xT)
        if not isinstance(v, ad.Dual):
            return np.asarray(v, dtype=np.float64) * disc, np.zeros((e - s, len(comps)))
        return v.primal.astype(np.float64) * disc, v.tangent.astype(np.float64) * disc

    parts = map_chunks(work, n, _chunk_paths(grid, model))
    price = np.concatenate([p for p, _ in parts])
    tangent = np.concatenate([t for _, t in parts])
    out = []
    for k, c in enumerate(comps):
        col = tangent[:, k]
        out.append(EstimatorResult(float(np.mean(col)), float(np.std(col, ddof=1) / math.sqrt(n)), n, mode,
                                   {"component": c}))
    out[0].extras["price"] = float(np.mean(price))
    out[0].extras["price_std_error"] = float(np.std(price, ddof=1) / math.sqrt(n))
    return out


def bump_delta(payoff, model: MarketModel, grid: TimeGrid, key: StreamKey, n: int,
               scheme=Scheme.EXACT, mode=PrecisionMode.DOUBLE, h: float = 1e-3,
               components=None) -> list[EstimatorResult]:
    """Central-difference delta with common random numbers.

    ``(V(S0_j (1 + h)) - V(S0_j (1 - h))) / (2 h S0_j)`` per component, the
    standard error coming from the per-path differences.
    """
    if not h > 0:
        raise ValueError(f"relative bump h must be > 0, got {h}")
    if n < 2:
        raise ValueError(f"need at least 2 paths, got {n}")
    scheme = Scheme.parse(scheme)
    mode = PrecisionMode.parse(mode)
    comps = list(range(model.p)) if components is None else [int(c) for c in components]
    bridge_key = key.derive(0xB81D)
    out = []
    for c in comps:
        up = model.s0.copy()
        dn = model.s0.copy()
        up[c] *= 1 + h
        dn[c] *= 1 - h
        vu = mc_samples(payoff, model.with_s0(up), grid, key, n, scheme, mode, bridge_key=bridge_key)
        vd = mc_samples(payoff, model.with_s0(dn), grid, key, n, scheme, mode, bridge_key=bridge_key)
        diff = (vu - vd) / (2 * h * model.s0[c])
        out.append(EstimatorResult(float(np.mean(diff)), float(np.std(diff, ddof=1) / math.sqrt(n)), n, mode,
                                   {"component": c, "h": h}))
    return out
