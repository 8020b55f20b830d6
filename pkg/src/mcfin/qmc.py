"""Sobol points with Joe-Kuo direction numbers and digital-shift randomization.

Points live on a 32-bit integer lattice. Point ``i`` is the XOR of the
direction numbers selected by the bits of its Gray code ``i ^ (i >> 1)``,
which equals what the classic sequential Gray-code recursion produces and
lets any index range be generated independently.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .prng import StreamKey, threefry_words

__all__ = [
    "DirectionNumberError",
    "DirectionNumberFile",
    "DirectionEntry",
    "load_direction_numbers",
    "default_direction_numbers",
    "SobolGenerator",
    "sobol_point",
    "sobol_points",
    "digital_shift",
    "DIRECTION_NUMBERS_ENV",
]

BITS = 32
MAX_INDEX = 1 << BITS
DIRECTION_NUMBERS_ENV = "MCFIN_DIRECTION_NUMBERS"
_DEFAULT_FILE = "new-joe-kuo-6.1024"


class DirectionNumberError(ValueError):
    """Malformed direction-number source; ``line`` is 1-based (0 if not line-specific)."""

    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class DirectionEntry:
    dimension: int
    degree: int
    a: int
    m: tuple[int, ...]


@dataclass(frozen=True)
class DirectionNumberFile:
    """Parsed primitive-polynomial table; dimension 1 is implicit."""

    entries: tuple[DirectionEntry, ...]
    source: str = ""

    @property
    def max_dimension(self) -> int:
        return len(self.entries) + 1


def load_direction_numbers(source) -> DirectionNumberFile:
    """Parse a Joe-Kuo style table ``d s a m1 .. ms`` (one header line).

    ``source`` is a path or an open text stream. Every row is validated:
    ``m_j`` odd and below ``2**j``, dimensions contiguous from 2.
    """
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "<stream>")
    else:
        name = str(source)
        text = Path(source).read_text()
    lines = text.splitlines()
    entries = []
    expected = 2
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        tokens = raw.split()
        try:
            values = [int(t) for t in tokens]
        except ValueError:
            raise DirectionNumberError(f"non-integer field in {raw.strip()!r}", lineno) from None
        if len(values) < 4:
            raise DirectionNumberError("row needs at least 'd s a m1'", lineno)
        d, s, a, *m = values
        if d != expected:
            raise DirectionNumberError(f"dimension {d} out of sequence (expected {expected})", lineno)
        if s < 1 or len(m) != s:
            raise DirectionNumberError(f"degree {s} but {len(m)} initial m-values", lineno)
        if s > BITS:
            raise DirectionNumberError(f"degree {s} exceeds the {BITS}-bit lattice", lineno)
        if not 0 <= a < (1 << (s - 1)):
            raise DirectionNumberError(f"coefficient a={a} does not fit degree {s}", lineno)
        for j, mj in enumerate(m, start=1):
            if mj % 2 == 0:
                raise DirectionNumberError(f"m_{j}={mj} is even", lineno)
            if not 0 < mj < (1 << j):
                raise DirectionNumberError(f"m_{j}={mj} is not below 2^{j}", lineno)
        entries.append(DirectionEntry(d, s, a, tuple(m)))
        expected += 1
    if not entries:
        raise DirectionNumberError(f"no direction-number rows in {name}")
    return DirectionNumberFile(tuple(entries), name)


def default_direction_numbers() -> DirectionNumberFile:
    """Table named by ``$MCFIN_DIRECTION_NUMBERS``, else the bundled Joe-Kuo file."""
    override = os.environ.get(DIRECTION_NUMBERS_ENV)
    if override:
        return load_direction_numbers(override)
    with resources.files("mcfin").joinpath("data", _DEFAULT_FILE).open("r") as fh:
        return load_direction_numbers(fh)


def _direction_table(table: DirectionNumberFile, dimension: int) -> np.ndarray:
    v = np.zeros((dimension, BITS), dtype=np.uint64)
    # dimension 1: van der Corput, v_k = 2^(32 - k)
    v[0] = [1 << (BITS - k) for k in range(1, BITS + 1)]
    for d in range(1, dimension):
        e = table.entries[d - 1]
        s, a = e.degree, e.a
        col = [0] * (BITS + 1)  # 1-based
        for k in range(1, BITS + 1):
            if k <= s:
                col[k] = e.m[k - 1] << (BITS - k)
            else:
                x = col[k - s] ^ (col[k - s] >> s)
                for j in range(1, s):
                    if (a >> (s - 1 - j)) & 1:
                        x ^= col[k - j]
                col[k] = x
        v[d] = col[1:]
    return v.astype(np.uint32)


@dataclass
class SobolGenerator:
    """Sobol sequence in ``dimension`` coordinates, optionally digitally shifted.

    Attributes
    ----------
    direction_numbers : ndarray, shape (dimension, 32), uint32
        Column ``k`` holds ``v_{k+1}`` on the 32-bit lattice.
    shift : ndarray of uint32 or None
        Per-dimension XOR mask applied to every point.
    current_index : int
        Position of the sequential facade (:meth:`next_point`).
    """

    dimension: int
    direction_numbers: np.ndarray = None
    shift: np.ndarray | None = None
    current_index: int = 0
    table: DirectionNumberFile | None = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        self.dimension = int(self.dimension)
        if self.direction_numbers is None:
            table = self.table if self.table is not None else default_direction_numbers()
            if self.dimension > table.max_dimension:
                raise ValueError(f"dimension {self.dimension} exceeds the {table.max_dimension} "
                                 f"dimensions of {table.source or 'the direction-number table'}")
            self.table = table
            self.direction_numbers = _direction_table(table, self.dimension)
        dn = np.asarray(self.direction_numbers, dtype=np.uint32)
        if dn.shape != (self.dimension, BITS):
            raise ValueError(f"direction numbers must have shape ({self.dimension}, {BITS})")
        self.direction_numbers = dn
        if self.shift is not None:
            self.shift = np.asarray(self.shift, dtype=np.uint32).reshape(self.dimension)

    def lattice(self, start: int, n: int) -> np.ndarray:
        """Integer points ``start .. start + n - 1`` as uint32, shape ``(n, dimension)``."""
        if start < 0 or n < 0:
            raise ValueError("index must be >= 0")
        if start + n > MAX_INDEX:
            raise OverflowError(f"Sobol index {start + n - 1} exceeds the 2^32 - 1 limit")
        idx = np.arange(start, start + n, dtype=np.uint64)
        gray = idx ^ (idx >> np.uint64(1))
        out = np.zeros((n, self.dimension), dtype=np.uint32)
        for k in range(int(gray.max(initial=0)).bit_length()):
            bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
            out[bit] ^= self.direction_numbers[:, k]
        if self.shift is not None:
            out ^= self.shift
        return out

    def points(self, start: int, n: int, dtype=np.float64) -> np.ndarray:
        """Points in [0, 1) for indices ``start .. start + n - 1``."""
        return (self.lattice(start, n).astype(np.float64) * 2.0 ** -BITS).astype(dtype)

    def point(self, i: int, dtype=np.float64) -> np.ndarray:
        return self.points(int(i), 1, dtype)[0]

    def next_point(self, dtype=np.float64) -> np.ndarray:
        """Sequential facade: return the current point and advance."""
        p = self.point(self.current_index, dtype)
        self.current_index += 1
        return p

    def reset(self) -> None:
        self.current_index = 0


def sobol_point(gen: SobolGenerator, i: int, dtype=np.float64) -> np.ndarray:
    """Point ``i`` of ``gen`` (a pure function of ``i``)."""
    if i < 0:
        raise ValueError(f"index must be >= 0, got {i}")
    if i >= MAX_INDEX:
        raise OverflowError(f"Sobol index {i} exceeds the 2^32 - 1 limit")
    return gen.point(i, dtype)


def sobol_points(gen: SobolGenerator, start: int, n: int, dtype=np.float64) -> np.ndarray:
    return gen.points(start, n, dtype)


def digital_shift(gen: SobolGenerator, key: StreamKey | None) -> SobolGenerator:
    """Copy of ``gen`` XOR-shifted by 32 random bits per dimension.

    The shift for dimension ``j`` is the top half of Threefry word 0 at
    counter ``(j, 0)`` of ``key``. ``key=None`` gives the zero shift.
    """
    if key is None:
        shift = np.zeros(gen.dimension, dtype=np.uint32)
    else:
        w0, _ = threefry_words(key, np.arange(gen.dimension, dtype=np.uint64), 0)
        shift = (w0 >> np.uint64(32)).astype(np.uint32)
    return replace(gen, shift=shift, current_index=0)


def shift_from_bits(gen: SobolGenerator, shift) -> SobolGenerator:
    """Copy of ``gen`` with an explicit uint32 shift vector."""
    return replace(gen, shift=np.asarray(shift, dtype=np.uint32), current_index=0)
