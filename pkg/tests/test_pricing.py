import math

import numpy as np
import pytest
from scipy import integrate, stats

from mcfin.numerics import PrecisionMode
from mcfin.prng import StreamKey
from mcfin.pricing import (BasketCall, EstimatorResult, Forward, MaxOfNCall, UpAndInPut, VanillaCall,
                           VanillaPut, barrier_analytic_up_in_put, bs_analytic_call, bs_analytic_delta,
                           bs_analytic_put, mc_price, mc_samples, mlmc_two_level, qmc_price,
                           qmc_shift_estimates)
from mcfin.sde import MarketModel, Scheme, TimeGrid, basket_model


@pytest.fixture(scope="module")
def bs():
    return MarketModel.black_scholes(100.0, 0.05, 0.2)


def lognormal_call_by_quadrature(s0, k, r, sigma, t, q=0.0):
    mu = math.log(s0) + (r - q - 0.5 * sigma ** 2) * t
    sd = sigma * math.sqrt(t)
    f = lambda x: (math.exp(x) - k) * stats.norm.pdf(x, mu, sd)
    val, _ = integrate.quad(f, math.log(k), mu + 12 * sd, epsabs=1e-12, epsrel=1e-12)
    return math.exp(-r * t) * val


@pytest.mark.parametrize("s0,k,r,sigma,t,q", [
    (100, 120, 0.05, 0.2, 1.0, 0.0),
    (100, 80, 0.01, 0.4, 2.5, 0.03),
    (50, 50, 0.0, 0.15, 0.25, 0.0),
])
def test_bs_call_matches_quadrature(s0, k, r, sigma, t, q):
    assert bs_analytic_call(s0, k, r, sigma, t, q) == pytest.approx(
        lognormal_call_by_quadrature(s0, k, r, sigma, t, q), rel=1e-9)


def test_bs_reference_value_and_parity():
    assert bs_analytic_call(100, 120, 0.05, 0.2, 1.0) == pytest.approx(3.24747741656, abs=1e-10)
    c = bs_analytic_call(100, 110, 0.03, 0.3, 2.0, 0.01)
    p = bs_analytic_put(100, 110, 0.03, 0.3, 2.0, 0.01)
    assert c - p == pytest.approx(100 * math.exp(-0.02) - 110 * math.exp(-0.06), abs=1e-12)
    h = 1e-4
    fd = (bs_analytic_call(100 + h, 110, 0.03, 0.3, 2.0, 0.01)
          - bs_analytic_call(100 - h, 110, 0.03, 0.3, 2.0, 0.01)) / (2 * h)
    assert bs_analytic_delta(100, 110, 0.03, 0.3, 2.0, 0.01) == pytest.approx(fd, rel=1e-7)
    with pytest.raises(ValueError):
        bs_analytic_call(100, 0, 0.0, 0.2, 1.0)


def bridge_crossing_oracle(s0, k, b, r, sigma, t, n=400_000, steps=20, seed=0):
    """Up-and-in put by exact GBM paths and the conditional crossing probability per step."""
    rng = np.random.default_rng(seed)
    dt = t / steps
    logs = np.full(n, math.log(s0))
    survive = np.ones(n)
    lb = math.log(b)
    for _ in range(steps):
        nxt = logs + (r - 0.5 * sigma ** 2) * dt + sigma * math.sqrt(dt) * rng.standard_normal(n)
        a, c = lb - logs, lb - nxt
        p_cross = np.where((a > 0) & (c > 0), np.exp(-2 * a * c / (sigma ** 2 * dt)), 1.0)
        survive *= 1 - p_cross
        logs = nxt
    payoff = np.maximum(k - np.exp(logs), 0) * (1 - survive) * math.exp(-r * t)
    return payoff.mean(), payoff.std() / math.sqrt(n)


@pytest.mark.parametrize("k,b,sigma,t", [(120, 140, 0.8, 2.0), (120, 140, 0.8, 1.0), (120, 110, 0.3, 1.0),
                                          (100, 130, 0.3, 0.5)])
def test_barrier_closed_form_matches_independent_simulation(k, b, sigma, t):
    est, se = bridge_crossing_oracle(100, k, b, 0.03, sigma, t)
    exact = barrier_analytic_up_in_put(100, k, b, 0.03, sigma, t)
    assert abs(est - exact) < 4 * se


def test_barrier_reference_value_and_limits():
    assert barrier_analytic_up_in_put(100, 120, 140, 0.03, 0.8, 2.0) == pytest.approx(23.137178392593864,
                                                                                      abs=1e-9)
    # the one-year price of the same contract is far from that reference
    assert barrier_analytic_up_in_put(100, 120, 140, 0.03, 0.8, 1.0) == pytest.approx(13.2306, abs=1e-4)
    # a barrier just above spot is touched almost surely: the put itself
    assert barrier_analytic_up_in_put(100, 90, 100.0001, 0.02, 0.3, 1.0) == pytest.approx(
        bs_analytic_put(100, 90, 0.02, 0.3, 1.0), rel=1e-4)
    # a remote barrier is never touched
    assert barrier_analytic_up_in_put(100, 90, 1e4, 0.02, 0.3, 1.0) < 1e-12
    with pytest.raises(ValueError):
        barrier_analytic_up_in_put(100, 90, 95, 0.02, 0.3, 1.0)


def test_trivial_payoffs_and_validation(bs):
    grid = TimeGrid(1.0, 4)
    fwd = mc_price(Forward(0.0), bs, grid, StreamKey(1), 50_000, Scheme.EXACT)
    assert abs(fwd.estimate - 100.0) < 4 * fwd.std_error
    with pytest.raises(ValueError):
        VanillaCall(0.0)
    with pytest.raises(ValueError):
        VanillaCall(float("nan"))
    with pytest.raises(ValueError):
        BasketCall((0.5, 0.6), 100.0)
    with pytest.raises(ValueError):
        UpAndInPut(100, 120, bridge_space="sqrt")
    with pytest.raises(ValueError):
        mc_price(VanillaCall(100.0), bs, grid, StreamKey(1), 1)
    with pytest.raises(ValueError):
        mc_price(VanillaCall(100.0, asset=1), bs, grid, StreamKey(1), 10)
    with pytest.raises(ValueError):
        mc_price(VanillaCall(100.0, maturity=2.0), bs, grid, StreamKey(1), 10)


def test_zero_volatility_price_is_exact():
    m = MarketModel.black_scholes(100.0, 0.05, 0.0)
    res = mc_price(VanillaCall(90.0), m, TimeGrid(1.0, 3), StreamKey(0), 100, Scheme.EXACT)
    assert res.estimate == pytest.approx(100 - 90 * math.exp(-0.05), rel=1e-13)
    assert res.std_error == pytest.approx(0.0, abs=1e-12)


def test_put_call_parity_pathwise(bs):
    grid = TimeGrid(1.0, 10)
    key = StreamKey(3)
    c = mc_samples(VanillaCall(105.0), bs, grid, key, 20_000)
    p = mc_samples(VanillaPut(105.0), bs, grid, key, 20_000)
    f = mc_samples(Forward(105.0), bs, grid, key, 20_000)
    assert np.allclose(c - p, f, atol=1e-10)


def test_estimator_result_interval():
    r = EstimatorResult(1.0, 0.1, 100, PrecisionMode.DOUBLE)
    assert r.ci == pytest.approx((0.804, 1.196))
    with pytest.raises(ValueError):
        EstimatorResult(1.0, -0.1, 100, PrecisionMode.DOUBLE)


def test_single_and_double_agree_within_one_standard_error(bs):
    grid = TimeGrid(1.0, 50)
    d = mc_price(VanillaCall(120.0), bs, grid, StreamKey(2019), 100_000, mode="double")
    s = mc_price(VanillaCall(120.0), bs, grid, StreamKey(2019), 100_000, mode="single")
    assert abs(d.estimate - s.estimate) < d.std_error


def test_keep_samples_and_determinism(bs):
    grid = TimeGrid(1.0, 5)
    a = mc_price(VanillaCall(100.0), bs, grid, StreamKey(7), 1000, keep_samples=True)
    b = mc_price(VanillaCall(100.0), bs, grid, StreamKey(7), 1000)
    assert a.estimate == b.estimate
    assert a.extras["samples"].shape == (1000,)


def test_barrier_bridge_removes_monitoring_bias():
    m = MarketModel.black_scholes(100.0, 0.03, 0.8)
    exact = barrier_analytic_up_in_put(100, 120, 140, 0.03, 0.8, 2.0)
    grid = TimeGrid(2.0, 10)
    bridged = mc_price(UpAndInPut(120, 140), m, grid, StreamKey(1), 100_000, Scheme.EXACT)
    naive = mc_price(UpAndInPut(120, 140, bridge=False), m, grid, StreamKey(1), 100_000, Scheme.EXACT)
    assert abs(bridged.estimate - exact) < 4 * bridged.std_error
    assert exact - naive.estimate > 20 * naive.std_error
    price_space = mc_price(UpAndInPut(120, 140, bridge_space="price"), m, grid, StreamKey(1), 100_000,
                           Scheme.EXACT)
    assert abs(price_space.estimate - exact) < abs(naive.estimate - exact)


def test_barrier_bridge_stream_is_configurable():
    m = MarketModel.black_scholes(100.0, 0.03, 0.8)
    grid = TimeGrid(2.0, 5)
    a = mc_price(UpAndInPut(120, 140), m, grid, StreamKey(1), 2000, Scheme.EXACT)
    b = mc_price(UpAndInPut(120, 140), m, grid, StreamKey(1), 2000, Scheme.EXACT,
                 bridge_key=StreamKey(1).derive(0xB81D))
    c = mc_price(UpAndInPut(120, 140), m, grid, StreamKey(1), 2000, Scheme.EXACT, bridge_key=StreamKey(99))
    assert a.estimate == b.estimate
    assert a.estimate != c.estimate


def test_qmc_vanilla_is_accurate(bs):
    res = qmc_price(VanillaCall(120.0), bs, StreamKey(5), 1 << 16, maturity=1.0)
    exact = bs_analytic_call(100, 120, 0.05, 0.2, 1.0)
    assert abs(res.estimate - exact) < 0.01
    assert res.std_error < 0.01
    assert res.n_samples == 16 << 16


def test_qmc_beats_mc_in_most_repetitions(bs):
    n = 1 << 13
    exact = bs_analytic_call(100, 120, 0.05, 0.2, 1.0)
    qmc = qmc_shift_estimates(VanillaCall(120.0), bs, StreamKey(8), n, maturity=1.0, n_shifts=100)
    mc = mc_samples(VanillaCall(120.0), bs, TimeGrid(1.0, 1), StreamKey(8), 100 * n, Scheme.EXACT)
    mc = mc.reshape(100, n).mean(axis=1)
    wins = np.sum(np.abs(qmc - exact) < np.abs(mc - exact))
    assert wins >= 90


def test_qmc_argument_checks(bs):
    with pytest.raises(ValueError):
        qmc_price(VanillaCall(120.0), bs, StreamKey(5), 64)
    with pytest.raises(ValueError):
        qmc_price(VanillaCall(120.0), bs, StreamKey(5), 64, maturity=1.0, n_shifts=1)
    assert qmc_price(VanillaCall(120.0, maturity=1.0), bs, StreamKey(5), 64).n_samples == 1024
    with pytest.raises(ValueError):
        qmc_price(BasketCall.equal_weight(600, np.full(600, 100.0)), basket_model(600), StreamKey(1), 64,
                  maturity=1.0)


def test_multi_asset_payoffs():
    m = basket_model(4)
    grid = TimeGrid(1.0, 1)
    key = StreamKey(11)
    batch_max = mc_samples(MaxOfNCall(100.0), m, grid, key, 5000, Scheme.EXACT)
    single = mc_samples(VanillaCall(100.0, asset=2), m, grid, key, 5000, Scheme.EXACT)
    basket = mc_samples(BasketCall.equal_weight(4, m.s0), m, grid, key, 5000, Scheme.EXACT)
    assert np.all(batch_max >= single - 1e-12)
    assert np.all(batch_max >= basket - 1e-12)
    with pytest.raises(ValueError):
        mc_samples(BasketCall.equal_weight(3, np.full(3, 100.0)), m, grid, key, 10)


def test_mlmc_with_equal_precisions_has_zero_correction():
    m = basket_model(4)
    payoff = BasketCall.equal_weight(4, m.s0)
    res = mlmc_two_level(payoff, m, TimeGrid(1.0, 5), StreamKey(2), 500, 5000,
                         coarse_mode="double", fine_mode="double")
    assert res.extras["correction"] == 0.0
    assert res.extras["variance_ratio"] == 0.0
    plain = mc_price(payoff, m, TimeGrid(1.0, 5), StreamKey(2), 5000)
    assert res.estimate == plain.estimate


def test_mlmc_mixed_correction_is_small():
    m = basket_model(8)
    payoff = BasketCall.equal_weight(8, m.s0)
    res = mlmc_two_level(payoff, m, TimeGrid(1.0, 10), StreamKey(2), 2000, 40_000)
    assert res.extras["variance_ratio"] < 0.05
    assert res.std_error == pytest.approx(math.hypot(res.extras["coarse_std_error"],
                                                     res.extras["correction_std_error"]))
    with pytest.raises(ValueError):
        mlmc_two_level(payoff, m, TimeGrid(1.0, 10), StreamKey(2), 50, 10)
