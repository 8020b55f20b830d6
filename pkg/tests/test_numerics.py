import numpy as np
import pytest
import scipy.linalg

from mcfin.numerics import (BF16_MAX, CholeskyError, PrecisionMode, cholesky, matmul, round_bf16,
                            solve_spd, solve_triangular)

ml_dtypes = pytest.importorskip("ml_dtypes")


def all_bf16_values():
    bits = (np.arange(2**16, dtype=np.uint32) << np.uint32(16))
    return bits.view(np.float32)


def test_every_bf16_pattern_is_a_fixed_point():
    v = all_bf16_values()
    finite = np.isfinite(v)
    out = round_bf16(v)
    assert np.array_equal(out[finite].view(np.uint32), v[finite].view(np.uint32))
    assert np.all(np.isnan(out[np.isnan(v)]))
    assert np.array_equal(np.isinf(out), np.isinf(v))
    out64 = round_bf16(v[finite].astype(np.float64))
    assert np.array_equal(out64, v[finite].astype(np.float64))


def test_rounding_matches_independent_bf16_on_float32_inputs():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2**32, size=2_000_000, dtype=np.uint64).astype(np.uint32)
    x = bits.view(np.float32)
    x = x[np.isfinite(x)]
    expected = x.astype(ml_dtypes.bfloat16).astype(np.float32)
    ours = round_bf16(x)
    assert np.array_equal(ours.view(np.uint32), expected.view(np.uint32))


def test_all_midpoints_round_to_even():
    # midpoint between every pair of adjacent positive finite bf16 values
    lo_bits = np.arange(0, 0x7F7F, dtype=np.uint32)
    lo = (lo_bits << np.uint32(16)).view(np.float32).astype(np.float64)
    hi = ((lo_bits + np.uint32(1)) << np.uint32(16)).view(np.float32).astype(np.float64)
    mid = 0.5 * (lo + hi)
    even_lo = (lo_bits & 1) == 0
    expected = np.where(even_lo, lo, hi)
    assert np.array_equal(round_bf16(mid), expected)
    assert np.array_equal(round_bf16(mid.astype(np.float32)), expected.astype(np.float32))
    assert np.array_equal(round_bf16(-mid), -expected)


def test_float64_and_float32_paths_agree():
    rng = np.random.default_rng(1)
    x = (rng.standard_normal(1_000_000) * np.exp(rng.uniform(-80, 80, 1_000_000))).astype(np.float32)
    assert np.array_equal(round_bf16(x.astype(np.float64)), round_bf16(x).astype(np.float64))


def test_rounding_is_monotone():
    rng = np.random.default_rng(2)
    x = np.sort(rng.standard_normal(200_000) * 1e3)
    r = round_bf16(x)
    assert np.all(np.diff(r) >= 0)


def test_overflow_and_scalars():
    assert round_bf16(BF16_MAX) == BF16_MAX
    assert round_bf16(1e39) == np.inf
    assert round_bf16(-1e39) == -np.inf
    assert round_bf16(0.1) == 0.10009765625
    assert isinstance(round_bf16(0.1), float)
    assert round_bf16(-0.0) == 0.0
    assert round_bf16(2.0**-133) == 2.0**-133
    assert round_bf16(2.0**-135) == 0.0


def test_precision_mode_parsing():
    assert PrecisionMode.parse("bf16") is PrecisionMode.MIXED_BF16
    assert PrecisionMode.parse("Double") is PrecisionMode.DOUBLE
    assert PrecisionMode.SINGLE.dtype == np.float32
    assert PrecisionMode.MIXED_BF16.dtype == np.float32
    with pytest.raises(ValueError):
        PrecisionMode.parse("half")


def naive_matmul(a, b, dtype, round_operands=False):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if round_operands:
        a = round_bf16(a.astype(np.float32)).astype(np.float64)
        b = round_bf16(b.astype(np.float32)).astype(np.float64)
    t = np.dtype(dtype).type
    out = np.zeros((a.shape[0], b.shape[1]), dtype=dtype)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = t(0)
            for k in range(a.shape[1]):
                s = t(s + t(t(a[i, k]) * t(b[k, j])))
            out[i, j] = s
    return out


@pytest.mark.parametrize("mode", list(PrecisionMode))
def test_matmul_bitwise_equals_loop_oracle(mode):
    rng = np.random.default_rng(3)
    a = rng.standard_normal((16, 16))
    b = rng.standard_normal((16, 16))
    expected = naive_matmul(a, b, mode.dtype, mode is PrecisionMode.MIXED_BF16)
    got = matmul(a, b, mode)
    assert got.dtype == mode.dtype
    assert np.array_equal(got, expected)


def test_mixed_matmul_error_is_bf16_sized():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((64, 64))
    b = rng.standard_normal((64, 64))
    exact = a @ b
    rel = np.linalg.norm(matmul(a, b, "mixed_bf16") - exact) / np.linalg.norm(exact)
    assert 1e-4 < rel < 2e-2
    rel32 = np.linalg.norm(matmul(a, b, "single") - exact) / np.linalg.norm(exact)
    assert rel32 < 1e-6


def test_matmul_row_partition_invariance():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((100, 37))
    b = rng.standard_normal((37, 9))
    full = matmul(a, b, "single")
    parts = np.vstack([matmul(a[i:i + 13], b, "single") for i in range(0, 100, 13)])
    assert np.array_equal(full, parts)


def test_matmul_shape_errors():
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        matmul(np.ones(3), np.ones((3, 1)))


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def test_cholesky_small_example():
    L = cholesky([[4.0, 2.0], [2.0, 3.0]])
    assert np.allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)


@pytest.mark.parametrize("n", [1, 5, 40])
def test_cholesky_double_matches_lapack(n):
    a = random_spd(n, n)
    assert np.allclose(cholesky(a), np.linalg.cholesky(a), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("mode,tol", [("single", 1e-5), ("mixed_bf16", 3e-2)])
def test_cholesky_low_precision_reconstructs(mode, tol):
    a = random_spd(20, 7)
    L = cholesky(a, mode).astype(np.float64)
    assert np.linalg.norm(L @ L.T - a) / np.linalg.norm(a) < tol
    assert np.all(np.triu(L, 1) == 0)


def test_cholesky_reports_failing_pivot():
    a = np.eye(4)
    a[2, 2] = -1.0
    with pytest.raises(CholeskyError) as info:
        cholesky(a)
    assert info.value.pivot == 2
    with pytest.raises(np.linalg.LinAlgError):
        cholesky([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        cholesky(np.ones((2, 3)))


@pytest.mark.parametrize("lower", [True, False])
@pytest.mark.parametrize("trans", [True, False])
def test_solve_triangular_matches_scipy(lower, trans):
    rng = np.random.default_rng(8)
    T = np.tril(rng.standard_normal((12, 12))) + 5 * np.eye(12)
    if not lower:
        T = T.T
    b = rng.standard_normal((12, 3))
    ref = scipy.linalg.solve_triangular(T, b, lower=lower, trans=1 if trans else 0)
    assert np.allclose(solve_triangular(T, b, lower=lower, trans=trans), ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(solve_triangular(T, b[:, 0], lower=lower, trans=trans), ref[:, 0], atol=1e-12)


def test_solve_spd_with_and_without_ridge():
    a = random_spd(15, 9)
    rng = np.random.default_rng(10)
    x = rng.standard_normal(15)
    assert np.allclose(solve_spd(a, a @ x), x, rtol=1e-10)
    lam = 0.7
    ref = np.linalg.solve(a + lam * np.eye(15), a @ x)
    assert np.allclose(solve_spd(a, a @ x, ridge=lam), ref, rtol=1e-10)
    assert np.allclose(solve_spd(a, a @ x, mode="single"), x, rtol=1e-3, atol=1e-4)
    with pytest.raises(ValueError):
        solve_spd(a, a @ x, ridge=-1.0)
    with pytest.raises(ValueError):
        solve_spd(a, np.ones(3))


def test_ridge_rescues_singular_grammian():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((50, 3))
    psi = np.column_stack([x, x[:, 0] + x[:, 1]])  # rank 3 of 4
    gram = psi.T @ psi
    rhs = psi.T @ rng.standard_normal(50)
    sol = solve_spd(gram, rhs, ridge=1e-6)
    assert np.all(np.isfinite(sol))
    assert np.linalg.norm((gram + 1e-6 * np.eye(4)) @ sol - rhs) < 1e-8
