"""Longstaff-Schwartz regression pricing of Bermudan options."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import PrecisionMode, matmul, solve_spd
from .prng import StreamKey
from .pricing import EstimatorResult, _check_assets
from .sde import MarketModel, Scheme, TimeGrid, simulate_paths

__all__ = ["ExerciseSchedule", "RegressionBasis", "default_basis", "default_ridge", "lsm_price",
           "lsm_from_states"]


@dataclass(frozen=True)
class ExerciseSchedule:
    """Exercise dates given as grid step indices ``0 < i_1 < ... < i_M``."""

    steps: tuple

    def __post_init__(self):
        s = tuple(int(i) for i in self.steps)
        if not s:
            raise ValueError("an exercise schedule needs at least one date")
        if any(b <= a for a, b in zip(s, s[1:])) or s[0] < 1:
            raise ValueError(f"exercise steps must be strictly increasing and >= 1, got {s}")
        object.__setattr__(self, "steps", s)

    @classmethod
    def uniform(cls, grid: TimeGrid, dates: int) -> "ExerciseSchedule":
        """``dates`` equally spaced exercise dates ending at maturity."""
        if dates < 1 or grid.steps % dates:
            raise ValueError(f"{dates} dates do not divide the {grid.steps}-step grid")
        stride = grid.steps // dates
        return cls(tuple(range(stride, grid.steps + 1, stride)))

    @classmethod
    def from_times(cls, grid: TimeGrid, times) -> "ExerciseSchedule":
        steps = []
        for t in times:
            i = round(t / grid.dt)
            if abs(i * grid.dt - t) > 1e-9 * max(1.0, grid.maturity):
                raise ValueError(f"exercise time {t} is not on the grid (dt = {grid.dt})")
            steps.append(i)
        return cls(tuple(steps))

    def validate(self, grid: TimeGrid) -> None:
        if self.steps[-1] != grid.steps:
            raise ValueError(f"last exercise step {self.steps[-1]} must be maturity (step {grid.steps})")

    def times(self, grid: TimeGrid) -> np.ndarray:
        return np.asarray(self.steps, dtype=np.float64) * grid.dt


@dataclass(frozen=True)
class RegressionBasis:
    """Degree-2 polynomial features with cross terms, plus the immediate payoff.

    Prices are divided by ``scale`` before forming polynomials (and the
    payoff feature likewise), which keeps the Grammian well conditioned in
    low precision without changing the fitted function space.
    """

    p: int
    include_payoff: bool = True
    scale: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")

    @property
    def n_features(self) -> int:
        p = self.p
        return 1 + 2 * p + p * (p - 1) // 2 + (1 if self.include_payoff else 0)

    def __call__(self, x: np.ndarray, payoff_values: np.ndarray | None = None) -> np.ndarray:
        """Feature matrix ``(n, K)`` for states ``x`` of shape ``(n, p)``."""
        x = np.asarray(x)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.p:
            raise ValueError(f"state has {x.shape[1]} components, basis expects {self.p}")
        y = x / x.dtype.type(self.scale)
        cols = [np.ones(x.shape[0], dtype=x.dtype)]
        cols += [y[:, j] for j in range(self.p)]
        cols += [y[:, j] * y[:, j] for j in range(self.p)]
        cols += [y[:, j] * y[:, k] for j in range(self.p) for k in range(j + 1, self.p)]
        if self.include_payoff:
            if payoff_values is None:
                raise ValueError("payoff feature requested but no payoff values given")
            cols.append(np.asarray(payoff_values, dtype=x.dtype).reshape(-1) / x.dtype.type(self.scale))
        return np.stack(cols, axis=1)


def default_basis(p: int, scale: float = 1.0) -> RegressionBasis:
    """``{1, x_j, x_j^2, x_j x_k (j < k), payoff(x)}``."""
    return RegressionBasis(p, True, scale)


def default_ridge(gram: np.ndarray, mode=PrecisionMode.DOUBLE) -> float:
    """``max(1e-8, u) * trace(G) / K`` with ``u`` the unit roundoff of the factorization.

    ``u`` is ``2**-8`` for bfloat16 operands, ``2**-24`` in single and
    ``2**-53`` in double, so the double-precision default is
    ``1e-8 * trace(G) / K``.
    """
    mode = PrecisionMode.parse(mode)
    u = {PrecisionMode.DOUBLE: 2.0 ** -53, PrecisionMode.SINGLE: 2.0 ** -24,
         PrecisionMode.MIXED_BF16: 2.0 ** -8}[mode]
    gram = np.asarray(gram, dtype=np.float64)
    return max(1e-8, u) * float(np.trace(gram)) / gram.shape[0]


def _standardize(psi: np.ndarray):
    # column 0 is the constant feature; the rest are centred and scaled
    work = psi.astype(np.float64)
    shift = work.mean(axis=0)
    scale = work.std(axis=0)
    shift[0] = 0.0
    scale[0] = 1.0
    scale[scale == 0] = 1.0
    return ((work - shift) / scale).astype(psi.dtype), shift, scale


def _raw_coefficients(beta, shift, scale):
    # b'((x - m) / s) = (b / s)' x - (b / s)' m
    b = np.asarray(beta, dtype=np.float64) / scale
    b[0] = beta[0] - float(np.dot(b[1:], shift[1:]))
    return b


def lsm_price(payoff, model: MarketModel, grid: TimeGrid, schedule: ExerciseSchedule,
              basis: RegressionBasis | None, key: StreamKey, n: int,
              mode=PrecisionMode.DOUBLE, ridge: float | None = None, *,
              scheme=Scheme.EXACT, itm_only: bool = True, standardize: bool = True) -> EstimatorResult:
    """Bermudan price by least-squares regression of continuation values.

    Parameters
    ----------
    schedule : ExerciseSchedule
        Exercise steps on ``grid``; the last must be maturity.
    basis : RegressionBasis or None
        Defaults to :func:`default_basis` scaled by the payoff strike.
    ridge : float or None
        Tikhonov term added to the Grammian; ``None`` uses
        :func:`default_ridge` at each date.
    itm_only : bool
        Regress on in-the-money paths only (standard) or on all paths.
    standardize : bool
        Centre and scale the non-constant feature columns before forming the
        Grammian. The fitted function is unchanged in exact arithmetic, but
        the Grammian becomes close to a correlation matrix, which is what
        lets the factorization survive bfloat16 operands. Coefficients in
        ``extras`` are always reported for the raw features.

    Returns
    -------
    EstimatorResult
        Mean of the discounted realized cash flows. ``extras`` holds the
        regression coefficients and exercise counts keyed by exercise-date
        index (0 = first date).
    """
    mode = PrecisionMode.parse(mode)
    _check_assets(payoff, model.p)
    schedule.validate(grid)
    if basis is None:
        basis = default_basis(model.p, getattr(payoff, "strike", 1.0))
    if basis.p != model.p:
        raise ValueError(f"basis built for {basis.p} assets, model has {model.p}")
    if n <= basis.n_features:
        raise ValueError(f"need more paths ({n}) than regression features ({basis.n_features})")
    if ridge is not None and ridge < 0:
        raise ValueError("ridge must be >= 0")

    batch = simulate_paths(model, grid, key, n, scheme, mode)
    states = batch.values[:, list(schedule.steps), :]
    return lsm_from_states(payoff, states, schedule.times(grid), model.rate, basis, mode, ridge,
                           itm_only=itm_only, standardize=standardize)


def lsm_from_states(payoff, states: np.ndarray, times, rate: float, basis: RegressionBasis,
                    mode=PrecisionMode.DOUBLE, ridge: float | None = None, *, itm_only: bool = True,
                    standardize: bool = True) -> EstimatorResult:
    """Backward induction on given states ``(n, M, p)`` at exercise ``times``.

    :func:`lsm_price` simulates the states and delegates here; calling it
    directly allows pricing on externally generated scenarios.
    """
    mode = PrecisionMode.parse(mode)
    states = np.asarray(states)
    n, M, _ = states.shape
    times = np.asarray(times, dtype=np.float64)
    if times.shape != (M,):
        raise ValueError(f"need {M} exercise times, got {times.shape}")

    # V holds the realized cash flow of each path, discounted to the current date
    V = np.asarray(payoff.intrinsic(states[:, -1, :])).astype(np.float64)
    coefficients = {}
    exercised = {}
    for m in range(M - 2, -1, -1):
        V = V * math.exp(-rate * (times[m + 1] - times[m]))
        x = states[:, m, :]
        f = np.asarray(payoff.intrinsic(x))
        rows = np.flatnonzero(f > 0) if itm_only else np.arange(n)
        if rows.size == 0:
            exercised[m] = 0
            continue
        psi = basis(x[rows], f[rows])
        if standardize:
            psi, shift, scale = _standardize(psi)
        target = mode.cast(V[rows]).reshape(-1, 1)
        gram = matmul(psi.T, psi, mode).astype(np.float64)
        rhs = matmul(psi.T, target, mode)[:, 0].astype(np.float64)
        lam = default_ridge(gram, mode) if ridge is None else ridge
        beta = solve_spd(gram, rhs, lam, mode)
        fitted = matmul(psi, mode.cast(beta).reshape(-1, 1), mode)[:, 0]
        if standardize:
            beta = _raw_coefficients(beta, shift, scale)
        ex = f[rows] > fitted
        V[rows[ex]] = f[rows][ex].astype(np.float64)
        coefficients[m] = np.asarray(beta, dtype=np.float64)
        exercised[m] = int(ex.sum())

    disc = V * math.exp(-rate * times[0])
    se = float(np.std(disc, ddof=1) / math.sqrt(n))
    return EstimatorResult(float(np.mean(disc)), se, n, mode,
                           {"coefficients": coefficients, "exercised": exercised})
