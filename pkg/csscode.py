"""
CSS codes from nested classical codes C2 <= C1 and the one-way key extraction
they induce: Alice broadcasts w + u for a random codeword u, Bob decodes
u + e back to C1 and both keep the coset u + C2.

Only bit-flip information enters this module.
"""

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import entr

from bellsim import UnsupportedScaleError
from bitlinalg import BitMatrix, BitVec, DimensionError, rank, row_reduce, solve_or_kernel

DECODE_TABLE_LIMIT = 24
ENUMERATION_LIMIT = 20


class CodeConstructionError(ValueError):
    pass


class MembershipError(ValueError):
    pass


@dataclass(frozen=True)
class ClassicalCode:
    generator: BitMatrix  # k x n, full row rank
    parity_check: BitMatrix  # (n - k) x n

    def __post_init__(self) -> None:
        g, h = self.generator, self.parity_check
        if g.ncols != h.ncols:
            raise CodeConstructionError(f"Generator has {g.ncols} columns, parity check {h.ncols}.")
        if rank(g) != g.nrows:
            raise CodeConstructionError(f"Generator rows are dependent (rank {rank(g)} < {g.nrows}).")
        if g.nrows and h.nrows and g.matmul(h.transpose()).to_array().any():
            raise CodeConstructionError("generator . parity_check^T is not zero.")
        if rank(h) != g.ncols - g.nrows:
            raise CodeConstructionError(
                f"Parity check has rank {rank(h)}, expected n - k = {g.ncols - g.nrows}."
            )

    @classmethod
    def from_generator(cls, generator: BitMatrix) -> "ClassicalCode":
        if rank(generator) != generator.nrows:
            raise CodeConstructionError(
                f"Generator rows are dependent (rank {rank(generator)} < {generator.nrows})."
            )
        n = generator.ncols
        kernel = solve_or_kernel(generator, BitVec.zeros(generator.nrows)).kernel
        return cls(generator, BitMatrix.from_rows(kernel, n))

    @classmethod
    def from_strings(cls, rows: Iterable[str], ncols: Optional[int] = None) -> "ClassicalCode":
        return cls.from_generator(BitMatrix.from_strings(list(rows), ncols))

    @property
    def n(self) -> int:
        return self.generator.ncols

    @property
    def k(self) -> int:
        return self.generator.nrows

    def syndrome(self, v: BitVec) -> BitVec:
        return self.parity_check.mul_vec(v)

    def contains(self, v: BitVec) -> bool:
        if len(v) != self.n:
            raise DimensionError(f"Vector of length {len(v)} does not match code length {self.n}.")
        return self.parity_check.nrows == 0 or self.syndrome(v).is_zero()

    def encode(self, message: BitVec) -> BitVec:
        return self.generator.transpose().mul_vec(message)

    def codewords(self) -> np.ndarray:
        """All 2^k codewords as rows of a (2^k, n) uint8 array."""
        if self.k > ENUMERATION_LIMIT:
            raise UnsupportedScaleError(f"Refusing to enumerate 2^{self.k} codewords.")
        coeffs = (np.arange(2**self.k)[:, None] >> np.arange(self.k)[None, :]) & 1
        return ((coeffs @ self.generator.to_array().astype(np.int64)) & 1).astype(np.uint8)

    @cached_property
    def min_distance(self) -> int:
        """n + 1 for the zero code, which has no nonzero codeword."""
        if self.k == 0:
            return self.n + 1
        return int(self.codewords()[1:].sum(axis=1).min())

    @property
    def correction_radius(self) -> int:
        return (self.min_distance - 1) // 2

    def dual(self) -> "ClassicalCode":
        return ClassicalCode(self.parity_check, self.generator)

    @cached_property
    def _decode_table(self) -> Dict[bytes, np.ndarray]:
        if self.n > DECODE_TABLE_LIMIT:
            raise UnsupportedScaleError(
                f"Syndrome tables are limited to n <= {DECODE_TABLE_LIMIT}, got {self.n}."
            )
        table: Dict[bytes, np.ndarray] = {}
        for weight in range(1, min(self.correction_radius, self.n) + 1):
            for support in itertools.combinations(range(self.n), weight):
                error = BitVec.from_indices(support, self.n)
                table.setdefault(self.syndrome(error).packed.tobytes(), error.to_array())
        return table

    def decode(self, y: BitVec) -> Tuple[BitVec, bool]:
        """Nearest codeword within the correction radius, else (y, False)."""
        if self.contains(y):
            return y, True
        error = self._decode_table.get(self.syndrome(y).packed.tobytes())
        if error is None:
            return y, False
        return BitVec.from_bits(y.to_array() ^ error), True


@dataclass(frozen=True)
class CssCode:
    c1: ClassicalCode
    c2: ClassicalCode

    def __post_init__(self) -> None:
        if self.c1.n != self.c2.n:
            raise CodeConstructionError(f"C1 has length {self.c1.n}, C2 has length {self.c2.n}.")
        for idx, row in enumerate(self.c2.generator.rows()):
            if not self.c1.contains(row):
                raise CodeConstructionError(f"Generator row {idx} of C2 ({row.to_string()}) is not in C1.")

    @property
    def n(self) -> int:
        return self.c1.n

    @property
    def key_length(self) -> int:
        return self.c1.k - self.c2.k

    @cached_property
    def _label_map(self) -> Tuple[np.ndarray, np.ndarray]:
        # Basis [C2 rows; complement rows taken from RREF(G1)], then read the
        # complement coordinates of u off the pivot columns.
        basis = self.c2.generator
        for row in row_reduce(self.c1.generator).reduced.rows():
            if row.is_zero():
                continue
            candidate = basis.stack(BitMatrix.from_rows([row]))
            if rank(candidate) > basis.nrows:
                basis = candidate
        rr = row_reduce(basis)
        pivots = np.asarray(rr.pivots, dtype=np.int64)
        coords = rr.transform.to_array().T[self.c2.k :]
        return coords.astype(np.int64), pivots

    def _label(self, u: BitVec) -> BitVec:
        coords, pivots = self._label_map
        if coords.shape[0] == 0:
            return BitVec.zeros(0)
        return BitVec.from_bits(((coords @ u.to_array()[pivots].astype(np.int64)) & 1).astype(np.uint8))

    def coset_label(self, u: BitVec) -> BitVec:
        if not self.c1.contains(u):
            raise MembershipError(f"{u.to_string()} is not a codeword of C1.")
        return self._label(u)


def build_css(c1: ClassicalCode, c2: ClassicalCode) -> CssCode:
    return CssCode(c1, c2)


def coset_label(u: BitVec, code: CssCode) -> BitVec:
    return code.coset_label(u)


@dataclass(frozen=True)
class Extraction:
    key: BitVec
    success: bool
    codeword: BitVec


def extract_key(w: BitVec, received: BitVec, u: BitVec, code: CssCode) -> Extraction:
    """Bob's side: (received) + (w + u) = u + e, decode to C1, keep the coset."""
    if not code.c1.contains(u):
        raise MembershipError(f"{u.to_string()} is not a codeword of C1.")
    if len(w) != code.n or len(received) != code.n:
        raise DimensionError(f"w and received must have length {code.n}.")
    public = w ^ u
    estimate, decoded = code.c1.decode(received ^ public)
    key = code._label(estimate)
    return Extraction(key=key, success=decoded and estimate == u, codeword=estimate)


def binary_entropy(p):
    """H2(p) in bits; accepts scalars or arrays."""
    return (entr(p) + entr(1.0 - np.asarray(p, dtype=np.float64))) / math.log(2.0)


def one_way_rate(p: float) -> float:
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"Error rate must lie in [0, 0.5], got {p}.")
    return float(1.0 - 2.0 * binary_entropy(p))


def one_way_threshold(tol: float = 1e-6) -> float:
    """Root of 1 - 2 H2(p) on (0, 0.5) by bisection."""
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}.")
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if one_way_rate(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def coset_key_length(n: int, disclosed_rank: int, t: int) -> int:
    """dim C1 - dim C2 with dim C1 = n - disclosed_rank and dim C2 = t."""
    return (n - disclosed_rank) - t


def repetition_code(n: int) -> ClassicalCode:
    return ClassicalCode.from_generator(BitMatrix.from_array(np.ones((1, n), dtype=np.uint8)))


def zero_code(n: int) -> ClassicalCode:
    return ClassicalCode.from_generator(BitMatrix.zeros(0, n))


def hamming_7_4() -> ClassicalCode:
    return ClassicalCode.from_strings(["1000011", "0100101", "0010110", "0001111"])


def css_repetition() -> CssCode:
    return build_css(repetition_code(3), zero_code(3))


def css_steane() -> CssCode:
    c1 = hamming_7_4()
    return build_css(c1, c1.dual())


def load_code(path: str) -> ClassicalCode:
    """Generator rows as bit strings, one per line; '#' starts a comment."""
    rows: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if set(line) - {"0", "1"}:
                raise CodeConstructionError(f"{path}:{lineno}: expected a bit string, got {line!r}.")
            if rows and len(line) != len(rows[0]):
                raise CodeConstructionError(
                    f"{path}:{lineno}: row has length {len(line)}, expected {len(rows[0])}."
                )
            rows.append(line)
    if not rows:
        raise CodeConstructionError(f"{path}: no generator rows.")
    return ClassicalCode.from_strings(rows)
