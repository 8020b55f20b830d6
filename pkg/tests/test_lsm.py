import math

import numpy as np
import pytest

from mcfin.lsm import (ExerciseSchedule, RegressionBasis, default_basis, default_ridge, lsm_from_states,
                       lsm_price)
from mcfin.numerics import PrecisionMode
from mcfin.prng import StreamKey
from mcfin.pricing import MaxOfNCall, VanillaPut, mc_price
from mcfin.sde import MarketModel, Scheme, TimeGrid, simulate_paths


@pytest.fixture(scope="module")
def two_asset():
    vol = np.diag([0.2, 0.2])
    return MarketModel(np.array([100.0, 100.0]), 0.05, vol, np.array([0.1, 0.1]))


def bermudan_put_tree(s0, k, r, sigma, t, dates, per_date=40):
    """CRR binomial tree allowing exercise only on ``dates`` equally spaced dates."""
    steps = dates * per_date
    dt = t / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1 / u
    pu = (math.exp(r * dt) - d) / (u - d)
    disc = math.exp(-r * dt)
    j = np.arange(steps + 1)
    v = np.maximum(k - s0 * u ** (steps - 2 * j), 0.0)
    for i in range(steps - 1, -1, -1):
        v = disc * (pu * v[:-1] + (1 - pu) * v[1:])
        if i % per_date == 0 and i > 0:
            s = s0 * u ** (i - 2 * np.arange(i + 1))
            v = np.maximum(v, k - s)
    return float(v[0])


def test_feature_count_and_layout():
    b = default_basis(3)
    assert b.n_features == 1 + 6 + 3 + 1
    assert RegressionBasis(3, include_payoff=False).n_features == 10
    x = np.array([[2.0, 3.0, 5.0]])
    row = b(x, np.array([7.0]))[0]
    assert np.array_equal(row, [1, 2, 3, 5, 4, 9, 25, 6, 10, 15, 7])
    zero = b(np.zeros((1, 3)), np.zeros(1))[0]
    assert np.array_equal(zero, np.eye(11)[0])
    scaled = RegressionBasis(3, scale=2.0)(x, np.array([7.0]))[0]
    assert np.array_equal(scaled, [1, 1, 1.5, 2.5, 1, 2.25, 6.25, 1.5, 2.5, 3.75, 3.5])
    with pytest.raises(ValueError):
        b(x)
    with pytest.raises(ValueError):
        b(np.zeros((1, 2)), np.zeros(1))


def test_schedule_construction():
    grid = TimeGrid(3.0, 9)
    assert ExerciseSchedule.uniform(grid, 3).steps == (3, 6, 9)
    assert ExerciseSchedule.from_times(grid, [1.0, 3.0]).steps == (3, 9)
    assert np.allclose(ExerciseSchedule((3, 9)).times(grid), [1.0, 3.0])
    with pytest.raises(ValueError):
        ExerciseSchedule((3, 3))
    with pytest.raises(ValueError):
        ExerciseSchedule.uniform(grid, 4)
    with pytest.raises(ValueError):
        ExerciseSchedule.from_times(grid, [1.1])
    with pytest.raises(ValueError):
        ExerciseSchedule((3,)).validate(grid)


def test_default_ridge_scales_with_precision():
    g = np.diag([4.0, 2.0])
    assert default_ridge(g) == pytest.approx(3e-8)
    assert default_ridge(g, "single") == pytest.approx(3 * 2.0 ** -24)
    assert default_ridge(g, "mixed_bf16") == pytest.approx(3.0 / 256)


def test_single_date_equals_european(two_asset):
    grid = TimeGrid(3.0, 9)
    payoff = MaxOfNCall(100.0)
    res = lsm_price(payoff, two_asset, grid, ExerciseSchedule((9,)), None, StreamKey(1), 5000)
    euro = mc_price(payoff, two_asset, grid, StreamKey(1), 5000, Scheme.EXACT)
    assert res.estimate == pytest.approx(euro.estimate, rel=1e-14)
    assert res.extras["coefficients"] == {}


def test_coefficients_match_least_squares(two_asset):
    grid = TimeGrid(1.0, 2)
    states = simulate_paths(two_asset, grid, StreamKey(2), 4000, Scheme.EXACT).values[:, 1:, :]
    payoff = MaxOfNCall(100.0)
    basis = default_basis(2)
    res = lsm_from_states(payoff, states, [0.5, 1.0], 0.05, basis, ridge=0.0, standardize=False)
    f0 = payoff.intrinsic(states[:, 0, :])
    rows = f0 > 0
    target = payoff.intrinsic(states[:, 1, :])[rows] * math.exp(-0.025)
    psi = basis(states[rows, 0, :], f0[rows])
    ref, *_ = np.linalg.lstsq(psi, target, rcond=None)
    fitted_ours = psi @ res.extras["coefficients"][0]
    assert np.allclose(fitted_ours, psi @ ref, rtol=1e-6, atol=1e-6)
    std = lsm_from_states(payoff, states, [0.5, 1.0], 0.05, basis, ridge=0.0)
    assert np.allclose(psi @ std.extras["coefficients"][0], psi @ ref, rtol=1e-6, atol=1e-6)


def test_coefficients_match_normal_equations_when_well_conditioned(two_asset):
    grid = TimeGrid(1.0, 2)
    states = simulate_paths(two_asset, grid, StreamKey(2), 4000, Scheme.EXACT).values[:, 1:, :]
    payoff = MaxOfNCall(100.0)
    basis = default_basis(2, 100.0)
    res = lsm_from_states(payoff, states, [0.5, 1.0], 0.05, basis, ridge=0.0, standardize=False)
    f0 = payoff.intrinsic(states[:, 0, :])
    rows = f0 > 0
    target = payoff.intrinsic(states[:, 1, :])[rows] * math.exp(-0.025)
    psi = basis(states[rows, 0, :], f0[rows])
    ref = np.linalg.solve(psi.T @ psi, psi.T @ target)
    assert np.allclose(res.extras["coefficients"][0], ref, rtol=1e-8, atol=1e-8 * np.abs(ref).max())


def test_path_permutation_invariance(two_asset):
    grid = TimeGrid(3.0, 9)
    states = simulate_paths(two_asset, grid, StreamKey(3), 6000, Scheme.EXACT).values[:, 1:, :]
    times = grid.times[1:]
    basis = default_basis(2, 100.0)
    a = lsm_from_states(MaxOfNCall(100.0), states, times, 0.05, basis)
    perm = np.random.default_rng(0).permutation(6000)
    b = lsm_from_states(MaxOfNCall(100.0), states[perm], times, 0.05, basis)
    assert b.estimate == pytest.approx(a.estimate, rel=1e-10)
    assert a.extras["exercised"] == b.extras["exercised"]


def test_more_exercise_dates_and_early_exercise_add_value(two_asset):
    grid = TimeGrid(3.0, 9)
    key = StreamKey(4)
    payoff = MaxOfNCall(100.0)
    euro = lsm_price(payoff, two_asset, grid, ExerciseSchedule((9,)), None, key, 40_000)
    three = lsm_price(payoff, two_asset, grid, ExerciseSchedule((3, 6, 9)), None, key, 40_000)
    nine = lsm_price(payoff, two_asset, grid, ExerciseSchedule.uniform(grid, 9), None, key, 40_000)
    assert three.estimate > euro.estimate
    assert nine.estimate > three.estimate - 2 * nine.std_error
    assert sum(nine.extras["exercised"].values()) > 0


def test_bermudan_put_matches_binomial_tree():
    m = MarketModel.black_scholes(36.0, 0.06, 0.2)
    grid = TimeGrid(1.0, 50)
    res = lsm_price(VanillaPut(40.0), m, grid, ExerciseSchedule.uniform(grid, 50), None, StreamKey(5),
                    100_000)
    tree = bermudan_put_tree(36.0, 40.0, 0.06, 0.2, 1.0, 50)
    assert abs(res.estimate - tree) < 3 * res.std_error + 0.02


def test_mixed_precision_stays_close(two_asset):
    grid = TimeGrid(3.0, 9)
    sched = ExerciseSchedule.uniform(grid, 9)
    d = lsm_price(MaxOfNCall(100.0), two_asset, grid, sched, None, StreamKey(6), 30_000)
    b = lsm_price(MaxOfNCall(100.0), two_asset, grid, sched, None, StreamKey(6), 30_000, "mixed_bf16")
    s = lsm_price(MaxOfNCall(100.0), two_asset, grid, sched, None, StreamKey(6), 30_000, "single")
    assert b.mode is PrecisionMode.MIXED_BF16
    assert abs(b.estimate / d.estimate - 1) < 0.01
    assert abs(s.estimate / d.estimate - 1) < 1e-3


def test_argument_checks(two_asset):
    grid = TimeGrid(1.0, 4)
    sched = ExerciseSchedule.uniform(grid, 4)
    with pytest.raises(ValueError):
        lsm_price(MaxOfNCall(100.0), two_asset, grid, sched, default_basis(3), StreamKey(0), 100)
    with pytest.raises(ValueError):
        lsm_price(MaxOfNCall(100.0), two_asset, grid, sched, None, StreamKey(0), 5)
    with pytest.raises(ValueError):
        lsm_price(MaxOfNCall(100.0), two_asset, grid, sched, None, StreamKey(0), 100, ridge=-1.0)
    with pytest.raises(ValueError):
        lsm_from_states(MaxOfNCall(100.0), np.ones((10, 2, 2)), [1.0], 0.0, default_basis(2))
