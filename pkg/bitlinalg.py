"""
Dense GF(2) vectors and matrices.

Bits are packed eight to a byte with position 0 in the most significant bit of
the first byte, so the packed order is the order of the '0'/'1' text form.
Values are immutable once built; the packed buffers are marked read-only.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

Seed = Union[int, np.random.SeedSequence, np.random.Generator, None]


def seed_sequence(seed: Seed) -> np.random.SeedSequence:
    """Normalize any accepted seed to a SeedSequence; a Generator seeds it from its stream."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(0, 2**63)))
    return np.random.SeedSequence(seed)


def child_seeds(seed: Seed, count: int) -> List[np.random.SeedSequence]:
    # Same children as SeedSequence.spawn, without advancing the caller's spawn counter.
    root = seed_sequence(seed)
    return [
        np.random.SeedSequence(root.entropy, spawn_key=root.spawn_key + (i,), pool_size=root.pool_size)
        for i in range(count)
    ]


_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


class DimensionError(ValueError):
    """Raised when operands do not have compatible lengths or shapes."""


def _nbytes(n: int) -> int:
    return (n + 7) // 8


def _tail_mask(n: int) -> int:
    rem = n % 8
    return 0xFF if rem == 0 else (0xFF << (8 - rem)) & 0xFF


def _as_bits(values: Union[Iterable[int], np.ndarray]) -> np.ndarray:
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("Bit values must be 0 or 1.")
    return arr.astype(np.uint8, copy=False)


class BitVec:
    """Fixed-length bit string over GF(2)."""

    __slots__ = ("_packed", "_n")

    def __init__(self, packed: np.ndarray, n: int):
        n = int(n)
        if n < 0:
            raise DimensionError(f"Negative length {n}.")
        packed = np.array(packed, dtype=np.uint8, copy=True).reshape(-1)
        if packed.size != _nbytes(n):
            raise DimensionError(f"Packed buffer of {packed.size} bytes cannot hold {n} bits.")
        if packed.size:
            packed[-1] &= _tail_mask(n)
        packed.setflags(write=False)
        self._packed = packed
        self._n = n

    @classmethod
    def _wrap(cls, packed: np.ndarray, n: int) -> "BitVec":
        # Trusted fast path: caller hands over a fresh, correctly padded buffer.
        obj = cls.__new__(cls)
        packed.setflags(write=False)
        obj._packed = packed
        obj._n = n
        return obj

    @classmethod
    def from_bits(cls, bits: Union[Iterable[int], np.ndarray]) -> "BitVec":
        arr = _as_bits(bits).reshape(-1)
        return cls._wrap(np.packbits(arr, bitorder="big"), int(arr.size))

    @classmethod
    def from_string(cls, text: str) -> "BitVec":
        text = text.strip()
        if any(ch not in "01" for ch in text):
            raise ValueError(f"Bit string may contain only '0' and '1': {text!r}")
        arr = np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")
        return cls.from_bits(arr)

    @classmethod
    def zeros(cls, n: int) -> "BitVec":
        return cls._wrap(np.zeros(_nbytes(n), dtype=np.uint8), int(n))

    @classmethod
    def from_indices(cls, indices: Iterable[int], n: int) -> "BitVec":
        arr = np.zeros(n, dtype=np.uint8)
        idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DimensionError(f"Index out of range for length {n}.")
        arr[idx] = 1
        return cls.from_bits(arr)

    @classmethod
    def random(cls, n: int, seed: Seed = None) -> "BitVec":
        rng = np.random.default_rng(seed)
        return cls.from_bits(rng.integers(0, 2, size=n, dtype=np.uint8))

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, index: int) -> int:
        if index < 0:
            index += self._n
        if not 0 <= index < self._n:
            raise IndexError(index)
        byte, bit = divmod(index, 8)
        return int((self._packed[byte] >> (7 - bit)) & 1)

    def __iter__(self) -> Iterator[int]:
        return iter(int(b) for b in self.to_array())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitVec):
            return NotImplemented
        return self._n == other._n and np.array_equal(self._packed, other._packed)

    def __hash__(self) -> int:
        return hash((self._n, self._packed.tobytes()))

    def __xor__(self, other: "BitVec") -> "BitVec":
        return xor_add(self, other)

    def __and__(self, other: "BitVec") -> "BitVec":
        _check_same_length(self, other)
        return BitVec._wrap(np.bitwise_and(self._packed, other._packed), self._n)

    def __repr__(self) -> str:
        text = self.to_string()
        if len(text) > 64:
            text = text[:61] + "..."
        return f"BitVec('{text}')"

    def to_array(self) -> np.ndarray:
        return np.unpackbits(self._packed, count=self._n, bitorder="big")

    def to_string(self) -> str:
        return (self.to_array() + ord("0")).tobytes().decode("ascii")

    def weight(self) -> int:
        return int(_POPCOUNT[self._packed].sum())

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.to_array())

    def is_zero(self) -> bool:
        return not self._packed.any()


def _check_same_length(u: BitVec, v: BitVec) -> None:
    if len(u) != len(v):
        raise DimensionError(f"Length mismatch: {len(u)} vs {len(v)}.")


def xor_add(u: BitVec, v: BitVec) -> BitVec:
    """Componentwise sum mod 2."""
    _check_same_length(u, v)
    return BitVec._wrap(np.bitwise_xor(u.packed, v.packed), len(u))


def masked_parity(v: BitVec, mask: BitVec) -> int:
    """Parity of `v` restricted to the positions where `mask` is 1."""
    _check_same_length(v, mask)
    return int(_POPCOUNT[np.bitwise_and(v.packed, mask.packed)].sum() & 1)


class BitMatrix:
    """An m x n matrix over GF(2), stored as packed rows."""

    __slots__ = ("_rows", "_ncols")

    def __init__(self, packed_rows: np.ndarray, ncols: int):
        rows = np.array(packed_rows, dtype=np.uint8, copy=True)
        if rows.ndim != 2 or rows.shape[1] != _nbytes(ncols):
            raise DimensionError(f"Packed rows of shape {rows.shape} do not fit {ncols} columns.")
        if rows.size:
            rows[:, -1] &= _tail_mask(ncols)
        rows.setflags(write=False)
        self._rows = rows
        self._ncols = int(ncols)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BitMatrix":
        a = _as_bits(np.asarray(array))
        if a.ndim != 2:
            raise DimensionError(f"Expected a 2-D array, got shape {a.shape}.")
        return cls(np.packbits(a, axis=1, bitorder="big"), a.shape[1])

    @classmethod
    def from_rows(cls, rows: Sequence[BitVec], ncols: Optional[int] = None) -> "BitMatrix":
        if not rows:
            if ncols is None:
                raise DimensionError("Cannot infer the column count of an empty row list.")
            return cls.zeros(0, ncols)
        n = len(rows[0]) if ncols is None else ncols
        for idx, row in enumerate(rows):
            if len(row) != n:
                raise DimensionError(f"Row {idx} has length {len(row)}, expected {n}.")
        return cls(np.stack([row.packed for row in rows]), n)

    @classmethod
    def from_strings(cls, rows: Sequence[str], ncols: Optional[int] = None) -> "BitMatrix":
        return cls.from_rows([BitVec.from_string(r) for r in rows], ncols)

    @classmethod
    def zeros(cls, m: int, n: int) -> "BitMatrix":
        return cls(np.zeros((m, _nbytes(n)), dtype=np.uint8), n)

    @classmethod
    def identity(cls, n: int) -> "BitMatrix":
        return cls.from_array(np.eye(n, dtype=np.uint8))

    @property
    def shape(self) -> tuple:
        return (self._rows.shape[0], self._ncols)

    @property
    def nrows(self) -> int:
        return self._rows.shape[0]

    @property
    def ncols(self) -> int:
        return self._ncols

    @property
    def packed(self) -> np.ndarray:
        return self._rows

    def row(self, index: int) -> BitVec:
        return BitVec(self._rows[index], self._ncols)

    def rows(self) -> List[BitVec]:
        return [self.row(i) for i in range(self.nrows)]

    def to_array(self) -> np.ndarray:
        if self.nrows == 0:
            return np.zeros((0, self._ncols), dtype=np.uint8)
        return np.unpackbits(self._rows, axis=1, count=self._ncols, bitorder="big")

    def mul_vec(self, v: BitVec) -> BitVec:
        """Return M·v over GF(2) (one parity per row)."""
        if len(v) != self._ncols:
            raise DimensionError(f"Vector of length {len(v)} does not match {self._ncols} columns.")
        if self.nrows == 0:
            return BitVec.zeros(0)
        parities = _POPCOUNT[np.bitwise_and(self._rows, v.packed)].sum(axis=1) & 1
        return BitVec.from_bits(parities.astype(np.uint8))

    def matmul(self, other: "BitMatrix") -> "BitMatrix":
        if self._ncols != other.nrows:
            raise DimensionError(f"Cannot multiply {self.shape} by {other.shape}.")
        product = self.to_array().astype(np.int64) @ other.to_array().astype(np.int64)
        return BitMatrix.from_array((product & 1).astype(np.uint8))

    def transpose(self) -> "BitMatrix":
        return BitMatrix.from_array(self.to_array().T)

    def stack(self, other: "BitMatrix") -> "BitMatrix":
        if self._ncols != other.ncols:
            raise DimensionError(f"Cannot stack {self.shape} on {other.shape}.")
        return BitMatrix(np.vstack([self._rows, other.packed]), self._ncols)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._rows, other.packed)

    def __hash__(self) -> int:
        return hash((self.shape, self._rows.tobytes()))

    def __repr__(self) -> str:
        m, n = self.shape
        return f"BitMatrix({m}x{n})"


def rank(matrix: BitMatrix) -> int:
    """GF(2) row rank by forward elimination on a private copy of the rows."""
    rows = np.array(matrix.packed, copy=True)
    m, n = matrix.shape
    r = 0
    for col in range(n):
        if r == m:
            break
        byte, shift = col // 8, 7 - (col % 8)
        hits = np.flatnonzero((rows[r:, byte] >> shift) & 1)
        if hits.size == 0:
            continue
        p = r + int(hits[0])
        if p != r:
            rows[[r, p]] = rows[[p, r]]
        below = r + 1 + np.flatnonzero((rows[r + 1 :, byte] >> shift) & 1)
        if below.size:
            rows[below] ^= rows[r]
        r += 1
    return r


@dataclass(frozen=True)
class RowReduction:
    reduced: BitMatrix
    pivots: List[int]
    # transform · original == reduced
    transform: BitMatrix


def row_reduce(matrix: BitMatrix) -> RowReduction:
    """Reduced row echelon form, its pivot columns and the row-operation transform."""
    a = matrix.to_array().copy()
    m, n = a.shape
    t = np.eye(m, dtype=np.uint8)
    pivots: List[int] = []
    r = 0
    for col in range(n):
        if r == m:
            break
        hits = np.flatnonzero(a[r:, col])
        if hits.size == 0:
            continue
        p = r + int(hits[0])
        if p != r:
            a[[r, p]] = a[[p, r]]
            t[[r, p]] = t[[p, r]]
        others = np.flatnonzero(a[:, col])
        others = others[others != r]
        if others.size:
            a[others] ^= a[r]
            t[others] ^= t[r]
        pivots.append(col)
        r += 1
    return RowReduction(BitMatrix.from_array(a), pivots, BitMatrix.from_array(t))


@dataclass(frozen=True)
class LinearSolution:
    consistent: bool
    solution: Optional[BitVec]
    kernel: List[BitVec]


def solve_or_kernel(matrix: BitMatrix, b: BitVec) -> LinearSolution:
    """Solve M·x = b over GF(2) and return a basis of ker M.

    An inconsistent system is reported through `consistent=False` (with the
    kernel still filled in), never raised.
    """
    m, n = matrix.shape
    if len(b) != m:
        raise DimensionError(f"Right-hand side of length {len(b)} does not match {m} rows.")
    augmented = np.hstack([matrix.to_array(), b.to_array().reshape(m, 1)])
    rr = row_reduce(BitMatrix.from_array(augmented))
    reduced = rr.reduced.to_array()
    pivots = [c for c in rr.pivots if c < n]
    consistent = n not in rr.pivots

    free = [c for c in range(n) if c not in set(pivots)]
    kernel: List[BitVec] = []
    for f in free:
        x = np.zeros(n, dtype=np.uint8)
        x[f] = 1
        for i, p in enumerate(pivots):
            x[p] = reduced[i, f]
        kernel.append(BitVec.from_bits(x))

    solution = None
    if consistent:
        x = np.zeros(n, dtype=np.uint8)
        for i, p in enumerate(pivots):
            x[p] = reduced[i, n]
        solution = BitVec.from_bits(x)
    return LinearSolution(consistent=consistent, solution=solution, kernel=kernel)


def row_space_contains(matrix: BitMatrix, v: BitVec) -> bool:
    if len(v) != matrix.ncols:
        raise DimensionError(f"Vector of length {len(v)} does not match {matrix.ncols} columns.")
    base = rank(matrix)
    return rank(matrix.stack(BitMatrix.from_rows([v]))) == base


def random_full_rank(m: int, n: int, seed: Seed = None) -> BitMatrix:
    """Uniform m x n matrix of rank m, by rejection sampling."""
    if m > n:
        raise DimensionError(f"Cannot build a rank-{m} matrix with only {n} columns.")
    rng = np.random.default_rng(seed)
    while True:
        candidate = BitMatrix.from_array(rng.integers(0, 2, size=(m, n), dtype=np.uint8))
        if rank(candidate) == m:
            return candidate
