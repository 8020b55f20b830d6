"""Path simulation for geometric Brownian dynamics.

The model is ``dX = (r - q) X dt + diag(X) V dW`` with a constant
``p x q`` volatility factor ``V``. Two schemes are provided:

* Euler-Maruyama in price space (carries the O(1/H) weak bias);
* the exact lognormal step, used as a zero-discretization-bias reference.

Path ``n`` consumes normals ``i*q .. i*q + q - 1`` of its counter stream at
step ``i``, so every path is position-addressable and simulation results do
not depend on how paths are split across workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import PrecisionMode, cholesky, matmul
from .parallel import map_chunks
from .prng import StreamKey, normal_block

__all__ = [
    "Scheme",
    "MarketModel",
    "TimeGrid",
    "PathBatch",
    "euler_step",
    "exact_gbm_step",
    "simulate_paths",
    "bridge_maximum",
    "synthetic_correlation",
    "basket_model",
]

# elements (paths x draws) generated per work chunk
_CHUNK_ELEMENTS = 1 << 18


class Scheme(str, enum.Enum):
    EULER = "euler"
    EXACT = "exact"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        key = {"exact_gbm": "exact", "exactgbm": "exact", "euler_maruyama": "euler"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown scheme {value!r}; expected 'euler' or 'exact'") from None


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Constant-coefficient multi-asset Black-Scholes market."""

    s0: np.ndarray
    rate: float
    vol: np.ndarray
    dividend: np.ndarray = None

    def __post_init__(self):
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=np.float64))
        vol = np.asarray(self.vol, dtype=np.float64)
        if vol.ndim == 0:
            vol = vol.reshape(1, 1)
        elif vol.ndim == 1:
            vol = np.diag(vol)
        if s0.ndim != 1 or vol.ndim != 2 or vol.shape[0] != s0.shape[0]:
            raise ValueError(f"vol must be p x q with p = len(s0); got s0 {s0.shape}, vol {vol.shape}")
        if not np.all(np.isfinite(s0)) or np.any(s0 <= 0):
            raise ValueError("initial prices must be finite and > 0")
        if not np.all(np.isfinite(vol)):
            raise ValueError("volatility matrix must be finite")
        if not np.isfinite(self.rate):
            raise ValueError("rate must be finite")
        div = np.zeros_like(s0) if self.dividend is None else np.broadcast_to(
            np.asarray(self.dividend, dtype=np.float64), s0.shape).copy()
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "vol", vol)
        object.__setattr__(self, "dividend", div)
        object.__setattr__(self, "rate", float(self.rate))

    @classmethod
    def black_scholes(cls, s0: float, rate: float, sigma: float, dividend: float = 0.0) -> "MarketModel":
        return cls(np.array([s0]), rate, np.array([[sigma]]), np.array([dividend]))

    @property
    def p(self) -> int:
        return self.s0.shape[0]

    @property
    def q(self) -> int:
        return self.vol.shape[1]

    @property
    def covariance(self) -> np.ndarray:
        return self.vol @ self.vol.T

    @property
    def asset_vol(self) -> np.ndarray:
        """Per-asset volatility, the row norms of ``vol``."""
        return np.sqrt(np.sum(self.vol ** 2, axis=1))

    def with_s0(self, s0) -> "MarketModel":
        return replace(self, s0=np.asarray(s0, dtype=np.float64))


@dataclass(frozen=True)
class TimeGrid:
    maturity: float
    steps: int

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError(f"maturity must be > 0, got {self.maturity}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be an integer >= 1, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "maturity", float(self.maturity))

    @property
    def dt(self) -> float:
        return self.maturity / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.maturity, self.steps + 1)


@dataclass(eq=False)
class PathBatch:
    """Trajectories laid out ``[path, step, asset]`` with their provenance."""

    values: np.ndarray
    mode: PrecisionMode
    scheme: Scheme
    grid: TimeGrid
    model: MarketModel
    key: StreamKey | None
    path_start: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1, :]

    @property
    def path_indices(self) -> np.ndarray:
        return np.arange(self.path_start, self.path_start + self.n_paths, dtype=np.uint64)


def _shocks(model: MarketModel, z: np.ndarray, dt: float, mode: PrecisionMode) -> np.ndarray:
    """Diffusion increments ``sqrt(dt) * V z`` for a batch of normal vectors."""
    if z.shape[-1] != model.q:
        raise ValueError(f"normal vector has dimension {z.shape[-1]}, model expects q = {model.q}")
    prod = matmul(z, model.vol.T, mode)
    return prod * mode.dtype.type(np.sqrt(dt))


def _euler_update(x, model: MarketModel, shock, dt: float, mode: PrecisionMode):
    drift = mode.cast((model.rate - model.dividend) * dt)
    return x + x * drift + x * shock


def _exact_update(x, model: MarketModel, shock, dt: float, mode: PrecisionMode):
    rowvar = np.sum(model.vol ** 2, axis=1)
    drift = mode.cast((model.rate - model.dividend - 0.5 * rowvar) * dt)
    return x * np.exp(drift + shock)


def _step(update, x, model, z, dt, mode):
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    mode = PrecisionMode.parse(mode)
    z = np.asarray(z)
    single = z.ndim == 1
    zz = z.reshape(1, -1) if single else z
    shock = _shocks(model, zz, dt, mode)
    if single:
        shock = shock[0]
    if not hasattr(x, "tangent"):
        x = mode.cast(x)
        if x.shape[-1] != model.p:
            raise ValueError(f"state has dimension {x.shape[-1]}, model expects p = {model.p}")
    return update(x, model, shock, dt, mode)


def euler_step(x, t: float, model: MarketModel, z, dt: float,
               mode: PrecisionMode = PrecisionMode.DOUBLE):
    """One Euler-Maruyama step ``x + (r - q) x dt + diag(x) V sqrt(dt) z``.

    ``t`` is accepted for the general SDE signature; the coefficients here
    are time-homogeneous. ``x`` may be ``(p,)`` or ``(n, p)`` (or a dual
    number of that shape), ``z`` correspondingly ``(q,)`` or ``(n, q)``.
    """
    return _step(_euler_update, x, model, z, dt, mode)


def exact_gbm_step(x, model: MarketModel, z, dt: float,
                   mode: PrecisionMode = PrecisionMode.DOUBLE):
    """Exact lognormal step ``x * exp((r - q - v/2) dt + sqrt(dt) V z)``.

    ``v`` is the diagonal of ``V V^T``; ``V`` itself serves as the covariance
    square root, so the same normals drive both schemes.
    """
    return _step(_exact_update, x, model, z, dt, mode)


def _chunk_paths(grid: TimeGrid, model: MarketModel) -> int:
    per_path = (grid.steps + 1) * max(model.p, model.q)
    return max(64, _CHUNK_ELEMENTS // per_path)


def _simulate_range(model, grid, key, start, n, scheme, mode, z=None):
    H, q = grid.steps, model.q
    dt = grid.dt
    if z is None:
        paths = np.arange(start, start + n, dtype=np.uint64)
        z = normal_block(key, paths, 0, H * q, mode.dtype)
    z = np.asarray(z, dtype=mode.dtype).reshape(n * H, q)
    shocks = _shocks(model, z, dt, mode).reshape(n, H, model.p)
    update = _euler_update if scheme is Scheme.EULER else _exact_update
    values = np.empty((n, H + 1, model.p), dtype=mode.dtype)
    values[:, 0, :] = mode.cast(model.s0)
    for i in range(H):
        values[:, i + 1, :] = update(values[:, i, :], model, shocks[:, i, :], dt, mode)
    return values


def simulate_paths(model: MarketModel, grid: TimeGrid, key: StreamKey, n_paths: int,
                   scheme: Scheme = Scheme.EULER, mode: PrecisionMode = PrecisionMode.DOUBLE,
                   path_start: int = 0, normals: np.ndarray | None = None) -> PathBatch:
    """Simulate paths ``path_start .. path_start + n_paths - 1``.

    ``normals`` (shape ``(n_paths, H, q)``) overrides the generator, which is
    how coupled schemes (coarse grids built from fine increments, QMC) are fed.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    scheme = Scheme.parse(scheme)
    mode = PrecisionMode.parse(mode)
    if normals is not None:
        normals = np.asarray(normals)
        expected = (n_paths, grid.steps, model.q)
        if normals.shape != expected:
            raise ValueError(f"normals must have shape {expected}, got {normals.shape}")

    def work(s, e):
        z = None if normals is None else normals[s:e]
        return _simulate_range(model, grid, key, path_start + s, e - s, scheme, mode, z)

    parts = map_chunks(work, n_paths, _chunk_paths(grid, model))
    values = parts[0] if len(parts) == 1 else np.concatenate(parts)
    return PathBatch(values, mode, scheme, grid, model, key, path_start)


def bridge_maximum(x, y, sigma_local, dt: float, u):
    """Sample the maximum of a Brownian bridge from ``x`` to ``y`` over ``dt``.

    ``m = (x + y + sqrt((x - y)**2 - 2 dt sigma**2 log u)) / 2`` with ``u`` in
    (0, 1); ``m >= max(x, y)``.
    """
    u = np.asarray(u)
    if np.any(~((u > 0) & (u < 1))):
        raise ValueError("bridge uniforms must lie in the open interval (0, 1)")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x = np.asarray(x)
    y = np.asarray(y)
    diff = x - y
    return 0.5 * (x + y + np.sqrt(diff * diff - 2.0 * dt * np.square(sigma_local) * np.log(u)))


def synthetic_correlation(p: int, key: StreamKey, factors: int | None = None,
                          eps: float = 0.01) -> np.ndarray:
    """Dense correlation ``D^-1/2 (A A^T + eps I) D^-1/2`` from a seeded factor matrix.

    ``A`` is ``p x factors`` with iid N(0, 1) entries drawn from ``key`` (row
    ``j`` is path ``j`` of the stream). A handful of factors mimics the
    dominant-factor structure of equity returns; ``factors=p`` gives a
    full-rank, weakly structured matrix.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    k = DEFAULT_FACTORS if factors is None else int(factors)
    if k < 1:
        raise ValueError("factors must be >= 1")
    A = normal_block(key, np.arange(p), 0, k)
    M = A @ A.T + eps * np.eye(p)
    d = 1.0 / np.sqrt(np.diag(M))
    C = M * np.outer(d, d)
    np.fill_diagonal(C, 1.0)
    return C


DEFAULT_FACTORS = 2


def basket_model(p: int, key: StreamKey = StreamKey(2019, 0), s0: float = 100.0,
                 rate: float = 0.05, sigma: float = 0.2, factors: int | None = None,
                 eps: float = 0.01) -> MarketModel:
    """Synthetic-correlation market: ``vol = sigma * chol(C)``."""
    C = synthetic_correlation(p, key, factors, eps)
    return MarketModel(np.full(p, s0), rate, sigma * cholesky(C))
