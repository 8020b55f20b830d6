"""Forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a primal array of shape ``S`` and a tangent of shape
``S + (d,)``: one directional derivative per seed direction. Arithmetic with
plain arrays broadcasts against the primal shape.

The helper functions at the bottom (:func:`exp`, :func:`maximum`, ...) accept
either a plain array or a :class:`Dual`, so payoff and simulation code can be
written once and differentiated by passing a dual initial state.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Dual", "seed", "exp", "sqrt", "log", "maximum", "take", "weighted_sum", "max_last"]


class Dual:
    __array_ufunc__ = None  # make ndarray defer to our reflected operators

    def __init__(self, primal, tangent):
        self.primal = np.asarray(primal)
        self.tangent = np.asarray(tangent)
        if self.tangent.shape[:-1] != self.primal.shape:
            raise ValueError(f"tangent shape {self.tangent.shape} does not extend primal shape {self.primal.shape}")

    @property
    def shape(self):
        return self.primal.shape

    @property
    def ndim(self):
        return self.primal.ndim

    @property
    def n_seeds(self) -> int:
        return self.tangent.shape[-1]

    def __repr__(self):
        return f"Dual(primal={self.primal!r}, tangent={self.tangent!r})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.primal + other.primal, self.tangent + other.tangent)
        other = np.asarray(other)
        return Dual(self.primal + other, np.broadcast_to(self.tangent, np.broadcast_shapes(
            self.primal.shape, other.shape) + (self.n_seeds,)).copy())

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.primal * other.primal,
                        self.tangent * other.primal[..., None] + other.tangent * self.primal[..., None])
        other = np.asarray(other)
        return Dual(self.primal * other, self.tangent * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.primal
            return Dual(self.primal * inv,
                        (self.tangent - other.tangent * (self.primal * inv)[..., None]) * inv[..., None])
        other = np.asarray(other)
        return Dual(self.primal / other, self.tangent / other[..., None])

    def __rtruediv__(self, other):
        inv = 1.0 / self.primal
        other = np.asarray(other)
        return Dual(other * inv, -self.tangent * (other * inv * inv)[..., None])

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        # a trailing full slice addresses the seed axis, with or without an Ellipsis
        return Dual(self.primal[idx], self.tangent[idx + (slice(None),)])

    def astype(self, dtype):
        return Dual(self.primal.astype(dtype), self.tangent.astype(dtype))


def seed(x, components=None) -> Dual:
    """Dual number for ``x`` (shape ``(..., p)``) seeded on selected components.

    Seed ``k`` is the unit direction along component ``components[k]`` of the
    last axis.
    """
    x = np.asarray(x)
    p = x.shape[-1]
    comps = list(range(p)) if components is None else [int(c) for c in components]
    tangent = np.zeros(x.shape + (len(comps),), dtype=x.dtype)
    for k, c in enumerate(comps):
        tangent[..., c, k] = 1
    return Dual(x, tangent)


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.primal)
        return Dual(e, x.tangent * e[..., None])
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        s = np.sqrt(x.primal)
        return Dual(s, x.tangent * (0.5 / s)[..., None])
    return np.sqrt(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.primal), x.tangent / x.primal[..., None])
    return np.log(x)


def maximum(x, c):
    """``max(x, c)`` for a constant ``c``; the derivative at a tie is 0."""
    if isinstance(x, Dual):
        above = x.primal > c
        return Dual(np.where(above, x.primal, c).astype(x.primal.dtype), x.tangent * above[..., None])
    return np.maximum(x, c)


def take(x, j: int):
    """Component ``j`` of the last axis."""
    if isinstance(x, Dual):
        return Dual(x.primal[..., j], x.tangent[..., j, :])
    return np.asarray(x)[..., j]


def weighted_sum(x, w):
    """``sum_j w_j x[..., j]`` accumulated in ascending ``j``."""
    w = np.asarray(w)
    if isinstance(x, Dual):
        prim = np.zeros(x.primal.shape[:-1], dtype=x.primal.dtype)
        tan = np.zeros(x.tangent.shape[:-2] + (x.n_seeds,), dtype=x.tangent.dtype)
        for j in range(x.primal.shape[-1]):
            prim = prim + x.primal[..., j] * w[j].astype(prim.dtype)
            tan = tan + x.tangent[..., j, :] * w[j].astype(tan.dtype)
        return Dual(prim, tan)
    x = np.asarray(x)
    out = np.zeros(x.shape[:-1], dtype=x.dtype)
    for j in range(x.shape[-1]):
        out = out + x[..., j] * w[j].astype(x.dtype)
    return out


def max_last(x):
    """Maximum over the last axis; the tangent follows the (first) argmax."""
    if isinstance(x, Dual):
        idx = np.argmax(x.primal, axis=-1)
        prim = np.take_along_axis(x.primal, idx[..., None], axis=-1)[..., 0]
        tan = np.take_along_axis(x.tangent, idx[..., None, None], axis=-2)[..., 0, :]
        return Dual(prim, tan)
    return np.max(np.asarray(x), axis=-1)
