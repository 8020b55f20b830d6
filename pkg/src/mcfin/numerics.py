"""Precision emulation and precision-parameterized linear algebra.

Three modes are modelled:

* ``DOUBLE``     -- everything in IEEE binary64.
* ``SINGLE``     -- everything in IEEE binary32.
* ``MIXED_BF16`` -- matrix-product operands rounded to bfloat16, products and
  accumulation in binary32; element-wise work in binary32.

The emulation is value-level: operands are rounded, the arithmetic itself is
done by the wider hardware type. A bfloat16 x bfloat16 product has at most 16
significant bits and is therefore exact in binary32, so the only rounding
left in a mixed product is the binary32 accumulation.

All kernels accumulate in a fixed order (ascending inner index) so results are
bitwise reproducible and independent of how rows are split across workers.
"""

from __future__ import annotations

import enum

import numpy as np
from numba import njit

__all__ = [
    "PrecisionMode",
    "CholeskyError",
    "round_bf16",
    "matmul",
    "cholesky",
    "solve_triangular",
    "solve_spd",
]

# largest finite bfloat16: (2 - 2**-7) * 2**127
BF16_MAX = float.fromhex("0x1.fep127")
_BF16_MIN_EXP = -126
_BF16_MANTISSA_BITS = 7


class PrecisionMode(str, enum.Enum):
    DOUBLE = "double"
    SINGLE = "single"
    MIXED_BF16 = "mixed_bf16"

    @property
    def dtype(self) -> np.dtype:
        """Working dtype for element-wise arithmetic."""
        return np.dtype(np.float64) if self is PrecisionMode.DOUBLE else np.dtype(np.float32)

    @classmethod
    def parse(cls, value) -> "PrecisionMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"fp64": "double", "float64": "double", "fp32": "single", "float32": "single",
                   "bf16": "mixed_bf16", "mixed": "mixed_bf16", "mixedbf16": "mixed_bf16"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown precision mode {value!r}; "
                             f"expected one of {[m.value for m in cls]}") from None

    def cast(self, x) -> np.ndarray:
        return np.asarray(x, dtype=self.dtype)


class CholeskyError(np.linalg.LinAlgError):
    """Non-positive pivot met during factorization."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"Cholesky failed: pivot {pivot} is {value!r} (matrix not positive definite)")
        self.pivot = pivot
        self.value = value


def round_bf16(x):
    """Round to the nearest bfloat16 value (ties to even), keeping the input dtype.

    Python scalars come back as Python floats. Values beyond the bfloat16
    range saturate to infinity, NaN stays NaN.
    """
    scalar = np.ndim(x) == 0 and not isinstance(x, np.ndarray)
    arr = np.asarray(x)
    if arr.dtype == np.float32 and not scalar:
        return _round_bf16_f32(arr)
    out_dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.dtype(np.float64)
    v = arr.astype(np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        finite = np.isfinite(v)
        _, e = np.frexp(np.where(finite, v, 1.0))
        # quantum = 2**(exponent - 7), clamped at the subnormal floor
        quantum_exp = np.maximum(e - 1, _BF16_MIN_EXP) - _BF16_MANTISSA_BITS
        rounded = np.ldexp(np.rint(np.ldexp(v, -quantum_exp)), quantum_exp)
        rounded = np.where(np.abs(rounded) > BF16_MAX, np.copysign(np.inf, v), rounded)
        out = np.where(finite, rounded, v).astype(out_dtype)
    if scalar:
        return float(out)
    return out


def _round_bf16_f32(arr: np.ndarray) -> np.ndarray:
    # binary32 and bfloat16 share the exponent field: round away the low 16 bits
    bits = np.ascontiguousarray(arr).view(np.uint32)
    bias = np.uint32(0x7FFF) + ((bits >> np.uint32(16)) & np.uint32(1))
    out = ((bits + bias) & np.uint32(0xFFFF0000)).view(np.float32)
    nan = np.isnan(arr)
    if nan.any():
        out = np.where(nan, arr, out)
    return out.reshape(arr.shape)


def _operands(a, b, mode: PrecisionMode):
    a = np.asarray(a)
    b = np.asarray(b)
    if mode is PrecisionMode.MIXED_BF16:
        a = round_bf16(a.astype(np.float32))
        b = round_bf16(b.astype(np.float32))
    else:
        a = a.astype(mode.dtype, copy=False)
        b = b.astype(mode.dtype, copy=False)
    return a, b


@njit(cache=True, nogil=True)
def _matmul_kernel(a, b, out):
    # ascending k for every (i, j); j innermost so the loop vectorizes across
    # output elements without reassociating any single sum
    m, kk = a.shape
    n = b.shape[1]
    for i in range(m):
        for j in range(n):
            out[i, j] = 0
        for k in range(kk):
            aik = a[i, k]
            for j in range(n):
                out[i, j] += aik * b[k, j]


def matmul(a, b, mode: PrecisionMode = PrecisionMode.DOUBLE) -> np.ndarray:
    """``a @ b`` in the arithmetic of ``mode``.

    Each output element is accumulated left to right over the inner index,
    so the result is bitwise reproducible however the rows are partitioned.
    """
    mode = PrecisionMode.parse(mode)
    a, b = _operands(a, b, mode)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    out = np.empty((a.shape[0], b.shape[1]), dtype=mode.dtype)
    _matmul_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b), out)
    return out


def _dot_rows(x, y, mode: PrecisionMode) -> np.ndarray:
    """Row-wise dot products of ``x`` (m, k) with vector ``y`` (k,), fixed order."""
    return matmul(x, y.reshape(-1, 1), mode)[:, 0]


def cholesky(a, mode: PrecisionMode = PrecisionMode.DOUBLE) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a`` (no pivoting).

    Raises :class:`CholeskyError` carrying the failing pivot index.
    """
    mode = PrecisionMode.parse(mode)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky expects a square matrix, got shape {a.shape}")
    n = a.shape[0]
    work = a.astype(mode.dtype)
    L = np.zeros((n, n), dtype=mode.dtype)
    for j in range(n):
        if j:
            col = work[j:, j] - _dot_rows(L[j:, :j], L[j, :j], mode)
        else:
            col = work[j:, j].copy()
        pivot = col[0]
        if not pivot > 0 or not np.isfinite(pivot):
            raise CholeskyError(j, float(pivot))
        d = np.sqrt(pivot)
        L[j, j] = d
        L[j + 1:, j] = col[1:] / d
    return L


def solve_triangular(L, rhs, lower: bool = True, trans: bool = False,
                     mode: PrecisionMode = PrecisionMode.DOUBLE) -> np.ndarray:
    """Substitution with a triangular matrix; ``trans`` solves with ``L.T``."""
    mode = PrecisionMode.parse(mode)
    T = np.asarray(L, dtype=mode.dtype)
    if trans:
        T = T.T
        lower = not lower
    b = np.asarray(rhs, dtype=mode.dtype)
    vec = b.ndim == 1
    b = b.reshape(b.shape[0], -1)
    n = T.shape[0]
    x = np.zeros_like(b)
    order = range(n) if lower else range(n - 1, -1, -1)
    for i in order:
        if lower:
            known = T[i:i + 1, :i]
            s = matmul(known, x[:i], mode)[0] if i else 0
        else:
            known = T[i:i + 1, i + 1:]
            s = matmul(known, x[i + 1:], mode)[0] if i < n - 1 else 0
        x[i] = (b[i] - s) / T[i, i]
    return x[:, 0] if vec else x


def solve_spd(a, rhs, ridge: float = 0.0, mode: PrecisionMode = PrecisionMode.DOUBLE) -> np.ndarray:
    """Solve ``(a + ridge * I) x = rhs`` by Cholesky and two triangular solves."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    mode = PrecisionMode.parse(mode)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"solve_spd expects a square matrix, got shape {a.shape}")
    if np.shape(rhs)[0] != a.shape[0]:
        raise ValueError(f"rhs with {np.shape(rhs)[0]} rows does not match {a.shape}")
    if ridge:
        a = a + ridge * np.eye(a.shape[0])
    L = cholesky(a, mode)
    y = solve_triangular(L, rhs, lower=True, mode=mode)
    return solve_triangular(L, y, lower=True, trans=True, mode=mode)
