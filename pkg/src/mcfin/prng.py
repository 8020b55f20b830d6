"""Keyed counter-based random numbers (Threefry-2x64, 20 rounds).

Every variate is a pure function of ``(key, path, draw)``: the counter is
``(path, draw)`` so a worker can jump to any path or step in O(1) and the
result never depends on how paths were partitioned across threads.

Normal variates are addressed by their own index ``d`` inside a path. The
pair ``(2m, 2m + 1)`` is produced by Box-Muller from the single block at
counter ``(path, m)``: word 0 gives the radius uniform, word 1 the angle.
Uniforms and normals drawn from the same key share counter space, so callers
that need both use distinct keys (see :meth:`StreamKey.derive`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "StreamKey",
    "CounterOverflowError",
    "threefry2x64",
    "threefry_block",
    "threefry_words",
    "uniforms",
    "uniform_block",
    "normals",
    "normal_block",
    "box_muller",
]

MASK64 = (1 << 64) - 1
ROTATIONS = (16, 42, 12, 31, 16, 32, 24, 21)
SKEIN_KS_PARITY = 0x1BD11BDAA9FC1A22
ROUNDS = 20


class CounterOverflowError(OverflowError):
    """A request would address draws beyond the 2**64 counter space of a path."""


@dataclass(frozen=True)
class StreamKey:
    """Identity of an independent stream: ``(seed, stream)`` as two 64-bit words."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= MASK64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def words(self) -> tuple[int, int]:
        return self.seed, self.stream

    def derive(self, tag: int) -> "StreamKey":
        """Child key for an auxiliary stream (bridge draws, shifts, ...).

        The child words are the Threefry output of this key at counter
        ``(tag, 2**63)``, a region never used for path draws in practice.
        """
        w0, w1 = threefry2x64(self.words, (int(tag) & MASK64, 1 << 63))
        return StreamKey(w0, w1)


def _rotl(x: int, r: int) -> int:
    return ((x << r) | (x >> (64 - r))) & MASK64


def threefry2x64(key: tuple[int, int], ctr: tuple[int, int], rounds: int = ROUNDS) -> tuple[int, int]:
    """Scalar Threefry-2x64 on Python integers.

    Slow but transparent; it is the reference the vectorized kernel is
    tested against.
    """
    k0, k1 = key[0] & MASK64, key[1] & MASK64
    ks = (k0, k1, SKEIN_KS_PARITY ^ k0 ^ k1)
    x0 = (ctr[0] + ks[0]) & MASK64
    x1 = (ctr[1] + ks[1]) & MASK64
    for r in range(rounds):
        x0 = (x0 + x1) & MASK64
        x1 = _rotl(x1, ROTATIONS[r % 8]) ^ x0
        if r % 4 == 3:
            s = (r + 1) // 4
            x0 = (x0 + ks[s % 3]) & MASK64
            x1 = (x1 + ks[(s + 1) % 3] + s) & MASK64
    return x0, x1


def threefry_block(key: StreamKey, ctr: tuple[int, int]) -> tuple[int, int]:
    """Two random 64-bit words for ``(key, ctr)``."""
    c0, c1 = int(ctr[0]), int(ctr[1])
    if not (0 <= c0 <= MASK64 and 0 <= c1 <= MASK64):
        raise CounterOverflowError(f"counter words must fit in 64 bits, got {ctr!r}")
    w0, w1 = _threefry(np.uint64(key.seed), np.uint64(key.stream), np.uint64(c0), np.uint64(c1))
    return int(w0), int(w1)


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True, nogil=True, inline="always")
def _rot(x, r):
    return (x << np.uint64(r)) | (x >> np.uint64(64 - r))


@njit(cache=True, nogil=True, inline="always")
def _four_rounds(x0, x1, ra, rb, rc, rd):
    x0 += x1
    x1 = _rot(x1, ra) ^ x0
    x0 += x1
    x1 = _rot(x1, rb) ^ x0
    x0 += x1
    x1 = _rot(x1, rc) ^ x0
    x0 += x1
    x1 = _rot(x1, rd) ^ x0
    return x0, x1


@njit(cache=True, nogil=True)
def _threefry(k0, k1, c0, c1):
    k2 = np.uint64(SKEIN_KS_PARITY) ^ k0 ^ k1
    x0 = c0 + k0
    x1 = c1 + k1
    x0, x1 = _four_rounds(x0, x1, 16, 42, 12, 31)
    x0 += k1
    x1 += k2 + np.uint64(1)
    x0, x1 = _four_rounds(x0, x1, 16, 32, 24, 21)
    x0 += k2
    x1 += k0 + np.uint64(2)
    x0, x1 = _four_rounds(x0, x1, 16, 42, 12, 31)
    x0 += k0
    x1 += k1 + np.uint64(3)
    x0, x1 = _four_rounds(x0, x1, 16, 32, 24, 21)
    x0 += k1
    x1 += k2 + np.uint64(4)
    x0, x1 = _four_rounds(x0, x1, 16, 42, 12, 31)
    x0 += k2
    x1 += k0 + np.uint64(5)
    return x0, x1


@njit(cache=True, nogil=True)
def _words_kernel(k0, k1, c0, c1, out0, out1):
    for i in range(c0.shape[0]):
        out0[i], out1[i] = _threefry(k0, k1, c0[i], c1[i])


@njit(cache=True, nogil=True)
def _uniform_kernel(k0, k1, paths, offset, shift, scale, open_interval, out):
    n = out.shape[1]
    for i in range(paths.shape[0]):
        p = paths[i]
        for j in range(n):
            w0, _ = _threefry(k0, k1, p, offset + np.uint64(j))
            u = np.float64(w0 >> np.uint64(shift)) * scale
            if open_interval and u == 0.0:
                u = scale
            out[i, j] = u


@njit(cache=True, nogil=True)
def _pair_kernel(k0, k1, paths, first_pair, shift, scale, u1_out, u2_out):
    m = u1_out.shape[1]
    for i in range(paths.shape[0]):
        p = paths[i]
        for j in range(m):
            w0, w1 = _threefry(k0, k1, p, first_pair + np.uint64(j))
            u1 = np.float64(w0 >> np.uint64(shift)) * scale
            if u1 == 0.0:
                u1 = scale
            u1_out[i, j] = u1
            u2_out[i, j] = np.float64(w1 >> np.uint64(shift)) * scale


# ---------------------------------------------------------------------------
# public array API

def _paths_array(paths) -> np.ndarray:
    arr = np.asarray(paths)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size and (arr.min() < 0 or int(arr.max()) > MASK64):
        raise CounterOverflowError("path index outside [0, 2**64)")
    return np.ascontiguousarray(arr, dtype=np.uint64)


def _check_draws(draw_offset: int, n: int, limit: int = MASK64) -> None:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if draw_offset < 0 or draw_offset + n - 1 > limit:
        raise CounterOverflowError(
            f"draws [{draw_offset}, {draw_offset + n}) exceed the 2**64 counter space of a path"
        )


def threefry_words(key: StreamKey, ctr0, ctr1) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`threefry_block` over counter arrays."""
    c0, c1 = np.broadcast_arrays(np.asarray(ctr0, dtype=np.uint64), np.asarray(ctr1, dtype=np.uint64))
    flat0 = np.ascontiguousarray(c0).ravel()
    flat1 = np.ascontiguousarray(c1).ravel()
    out0 = np.empty_like(flat0)
    out1 = np.empty_like(flat1)
    _words_kernel(np.uint64(key.seed), np.uint64(key.stream), flat0, flat1, out0, out1)
    return out0.reshape(c0.shape), out1.reshape(c0.shape)


def uniform_block(key: StreamKey, paths, draw_offset: int, n: int,
                  dtype=np.float64, open_interval: bool = False) -> np.ndarray:
    """Uniforms for several paths at once, shape ``(len(paths), n)``.

    Double precision keeps the top 53 bits of word 0, single precision the
    top 24. With ``open_interval`` a zero is replaced by the smallest
    positive lattice step, so the result lies in ``(0, 1)``.
    """
    dtype = np.dtype(dtype)
    p = _paths_array(paths)
    _check_draws(draw_offset, n)
    if dtype == np.float64:
        shift, scale = 11, 2.0 ** -53
    elif dtype == np.float32:
        shift, scale = 40, 2.0 ** -24
    else:
        raise TypeError(f"unsupported dtype {dtype}")
    out = np.empty((p.shape[0], n), dtype=dtype)
    _uniform_kernel(np.uint64(key.seed), np.uint64(key.stream), p, np.uint64(draw_offset),
                    shift, scale, open_interval, out)
    return out


def uniforms(key: StreamKey, path: int, draw_offset: int, n: int,
             dtype=np.float64, open_interval: bool = False) -> np.ndarray:
    """``n`` uniforms in [0, 1) for one path, starting at ``draw_offset``."""
    return uniform_block(key, [path], draw_offset, n, dtype, open_interval)[0]


def normal_block(key: StreamKey, paths, draw_offset: int, n: int, dtype=np.float64) -> np.ndarray:
    """Standard normals for several paths at once, shape ``(len(paths), n)``.

    Normal ``d`` of a path comes from the Box-Muller pair at counter
    ``(path, d // 2)``: cosine branch for even ``d``, sine branch for odd.
    """
    dtype = np.dtype(dtype)
    p = _paths_array(paths)
    _check_draws(draw_offset, n)
    if dtype == np.float64:
        shift, scale = 11, 2.0 ** -53
    elif dtype == np.float32:
        shift, scale = 40, 2.0 ** -24
    else:
        raise TypeError(f"unsupported dtype {dtype}")
    first = draw_offset >> 1
    n_pairs = ((draw_offset + n - 1) >> 1) - first + 1
    u1 = np.empty((p.shape[0], n_pairs), dtype=dtype)
    u2 = np.empty((p.shape[0], n_pairs), dtype=dtype)
    _pair_kernel(np.uint64(key.seed), np.uint64(key.stream), p, np.uint64(first), shift, scale, u1, u2)
    radius = np.log(u1, out=u1)
    radius *= dtype.type(-2.0)
    np.sqrt(radius, out=radius)
    angle = np.multiply(u2, dtype.type(2.0 * np.pi), out=u2)
    # contiguous temporaries keep the SIMD ufunc loops; interleave afterwards
    out = np.empty((p.shape[0], n_pairs, 2), dtype=dtype)
    out[:, :, 0] = np.cos(angle) * radius
    out[:, :, 1] = np.sin(angle, out=angle) * radius
    out = out.reshape(p.shape[0], 2 * n_pairs)
    lo = draw_offset & 1
    return np.ascontiguousarray(out[:, lo:lo + n])


def normals(key: StreamKey, path: int, draw_offset: int, n: int, dtype=np.float64) -> np.ndarray:
    """``n`` standard normals for one path, starting at normal index ``draw_offset``."""
    return normal_block(key, [path], draw_offset, n, dtype)[0]


def box_muller(u1, u2):
    """Box-Muller transform; ``u1`` must lie in (0, 1)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return radius * np.cos(angle), radius * np.sin(angle)
