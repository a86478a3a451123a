"""
Bell-diagonal simulation of N shared EPR pairs.

Each pair is labelled by two bits (a, b): a is the phase bit, b the flip bit,
00 = Phi+, 01 = Psi+, 10 = Phi-, 11 = Psi-. A Pauli error X sets b, Z sets a
and Y sets both, so a correlated Pauli strategy maps to a distribution over
2N-bit labels and never needs amplitudes.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, xlogy

from bitlinalg import BitMatrix, BitVec, DimensionError, Seed, child_seeds, masked_parity
from ledger import ResourceExhausted
from pauli import PauliOp, PauliType, css_type

NORMALIZATION_TOL = 1e-12
EXHAUSTIVE_LIMIT = 12


class ChannelError(ValueError):
    pass


class UnsupportedOperatorError(ValueError):
    pass


class UnsupportedScaleError(ValueError):
    pass


@dataclass(frozen=True)
class PauliChannel:
    """Either an iid per-pair channel (p_I, p_X, p_Y, p_Z) or an explicit
    finite mixture of N-qubit Pauli operators."""

    iid: Optional[Tuple[float, float, float, float]] = None
    mixture: Tuple[Tuple[float, PauliOp], ...] = ()

    def __post_init__(self) -> None:
        if (self.iid is None) == (not self.mixture):
            raise ChannelError("A channel is either iid probabilities or a mixture, not both or neither.")
        if self.iid is not None:
            object.__setattr__(self, "iid", tuple(float(p) for p in self.iid))
        object.__setattr__(self, "mixture", tuple((float(p), op) for p, op in self.mixture))

    @classmethod
    def from_probabilities(cls, p_i: float, p_x: float, p_y: float, p_z: float) -> "PauliChannel":
        return cls(iid=(p_i, p_x, p_y, p_z))

    @classmethod
    def depolarizing(cls, q: float) -> "PauliChannel":
        return cls(iid=(1.0 - q, q / 3, q / 3, q / 3))

    @classmethod
    def bit_flip(cls, p: float) -> "PauliChannel":
        return cls(iid=(1.0 - p, p, 0.0, 0.0))

    @classmethod
    def phase_flip(cls, p: float) -> "PauliChannel":
        return cls(iid=(1.0 - p, 0.0, 0.0, p))

    @classmethod
    def symmetric_qber(cls, q: float) -> "PauliChannel":
        """pX = pY = pZ = q/2: error rate q in both the Z and the X basis."""
        if not 0.0 <= q <= 2.0 / 3.0:
            raise ChannelError(f"symmetric_qber needs 0 <= q <= 2/3, got {q}.")
        return cls(iid=(1.0 - 1.5 * q, q / 2, q / 2, q / 2))

    @classmethod
    def correlated(cls, components: Sequence[Tuple[float, PauliOp]]) -> "PauliChannel":
        return cls(mixture=tuple(components))

    @property
    def is_iid(self) -> bool:
        return self.iid is not None

    def probabilities(self) -> np.ndarray:
        if self.iid is not None:
            return np.array(self.iid, dtype=np.float64)
        return np.array([p for p, _ in self.mixture], dtype=np.float64)

    def validate(self, n_pairs: Optional[int] = None) -> None:
        probs = self.probabilities()
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ChannelError(f"Channel probabilities must lie in [0, 1]: {probs.tolist()}")
        if abs(float(probs.sum()) - 1.0) > NORMALIZATION_TOL:
            raise ChannelError(f"Channel probabilities sum to {float(probs.sum())!r}, not 1.")
        if self.mixture and n_pairs is not None:
            for _, op in self.mixture:
                if op.n != n_pairs:
                    raise DimensionError(f"Mixture operator acts on {op.n} pairs, expected {n_pairs}.")

    def to_dict(self) -> dict:
        if self.iid is not None:
            return dict(zip(("pI", "pX", "pY", "pZ"), self.iid))
        return {"mixture": [{"prob": p, "pauli": op.to_string()} for p, op in self.mixture]}


_LABELS = {(0, 0): "Phi+", (0, 1): "Psi+", (1, 0): "Phi-", (1, 1): "Psi-"}


@dataclass(frozen=True)
class BellPattern:
    a: BitVec  # phase bits
    b: BitVec  # flip bits

    def __post_init__(self) -> None:
        if len(self.a) != len(self.b):
            raise DimensionError(f"Phase bits ({len(self.a)}) and flip bits ({len(self.b)}) differ in length.")

    @classmethod
    def perfect(cls, n_pairs: int) -> "BellPattern":
        return cls(BitVec.zeros(n_pairs), BitVec.zeros(n_pairs))

    @classmethod
    def from_pauli(cls, op: PauliOp) -> "BellPattern":
        return cls(a=op.z_mask, b=op.x_mask)

    @classmethod
    def from_string(cls, text: str) -> "BellPattern":
        parts = dict(
            (key.strip(), value.strip())
            for key, value in (item.split("=", 1) for item in text.split(";") if item.strip())
        )
        if set(parts) != {"a", "b"}:
            raise ValueError(f"Pattern text must read 'a=...; b=...': {text!r}")
        return cls(BitVec.from_string(parts["a"]), BitVec.from_string(parts["b"]))

    @property
    def n_pairs(self) -> int:
        return len(self.a)

    def is_perfect(self) -> bool:
        return self.a.is_zero() and self.b.is_zero()

    def labels(self) -> List[str]:
        return [_LABELS[(int(x), int(y))] for x, y in zip(self.a.to_array(), self.b.to_array())]

    def to_string(self) -> str:
        return f"a={self.a.to_string()}; b={self.b.to_string()}"


def apply_channel(n_pairs: int, ch: PauliChannel, seed: Seed = None) -> BellPattern:
    """Sample the Bell label of N pairs after the channel."""
    ch.validate(n_pairs)
    rng = np.random.default_rng(seed)
    if ch.is_iid:
        a, b = _sample_iid(ch, rng, (n_pairs,))
        return BellPattern(BitVec.from_bits(a), BitVec.from_bits(b))
    k = int(rng.choice(len(ch.mixture), p=ch.probabilities()))
    return BellPattern.from_pauli(ch.mixture[k][1])


def _sample_iid(ch: PauliChannel, rng: np.random.Generator, shape: tuple) -> Tuple[np.ndarray, np.ndarray]:
    # codes: 0 = I, 1 = X, 2 = Y, 3 = Z
    codes = rng.choice(4, size=shape, p=ch.probabilities())
    b = ((codes == 1) | (codes == 2)).astype(np.uint8)
    a = ((codes == 2) | (codes == 3)).astype(np.uint8)
    return a, b


def measure_symmetric(pat: BellPattern, m: PauliOp) -> int:
    """Eigenvalue (+1/-1) of the symmetric operator m (x) m on the pattern."""
    if m.n != pat.n_pairs:
        raise DimensionError(f"Operator acts on {m.n} pairs, pattern has {pat.n_pairs}.")
    kind = css_type(m)
    if kind == PauliType.MIXED:
        raise UnsupportedOperatorError(f"Symmetric measurement of mixed operator {m.describe()} is not supported.")
    if kind == PauliType.Z_TYPE:
        return -1 if masked_parity(pat.b, m.z_mask) else 1
    if kind == PauliType.X_TYPE:
        return -1 if masked_parity(pat.a, m.x_mask) else 1
    return 1


@dataclass(frozen=True)
class AncillaPool:
    """Perfect pre-shared EPR pairs (equivalently, pre-shared secret bits)."""

    remaining: int

    def __post_init__(self) -> None:
        if self.remaining < 0:
            raise ValueError(f"AncillaPool.remaining must be >= 0, got {self.remaining}.")

    def take(self) -> "AncillaPool":
        if self.remaining < 1:
            raise ResourceExhausted("No ancillary EPR pair left for a breeding measurement.")
        return AncillaPool(self.remaining - 1)


@dataclass(frozen=True)
class BreedingOutcome:
    alice: int
    bob: int
    pool: AncillaPool
    pattern: BellPattern

    @property
    def relative(self) -> int:
        return self.alice * self.bob


def breed_measure(pat: BellPattern, m: PauliOp, pool: AncillaPool, seed: Seed = None) -> BreedingOutcome:
    """Measure m (x) m through one ancilla pair.

    Alice measures m (x) Z on her half of the ancilla, Bob the same on his; each
    outcome alone is uniform, their product is the eigenvalue. The data pairs
    are left as they were.
    """
    eigenvalue = measure_symmetric(pat, m)
    pool = pool.take()
    rng = np.random.default_rng(seed)
    alice = 1 if rng.integers(0, 2) == 0 else -1
    ancilla_zz = 1  # perfect ancilla: Phi+ has ZZ eigenvalue +1
    bob = alice * eigenvalue * ancilla_zz
    return BreedingOutcome(alice=alice, bob=bob, pool=pool, pattern=pat)


def breed_sequence(
    pat: BellPattern, ops: Sequence[PauliOp], pool: AncillaPool, seed: Seed = None
) -> Tuple[List[BreedingOutcome], AncillaPool]:
    """Run r symmetric measurements with r ancillas, one independent stream each."""
    children = child_seeds(seed, len(ops))
    outcomes: List[BreedingOutcome] = []
    for op, child in zip(ops, children):
        outcome = breed_measure(pat, op, pool, child)
        pool = outcome.pool
        outcomes.append(outcome)
    return outcomes, pool


def good_space_weight(
    ch: PauliChannel, n_pairs: int, t_bitflip: int, t_phase: int, *, mode: str = "auto"
) -> float:
    """Probability that the sampled pattern has at most t_bitflip flip bits and
    at most t_phase phase bits (the weight tr(Pi rho) of the good subspace)."""
    ch.validate(n_pairs)
    if mode not in ("auto", "exhaustive", "analytic"):
        raise ValueError(f"Unknown mode {mode!r}.")
    if mode == "exhaustive":
        if n_pairs > EXHAUSTIVE_LIMIT:
            raise UnsupportedScaleError(
                f"Exhaustive enumeration is limited to {EXHAUSTIVE_LIMIT} pairs, got {n_pairs}."
            )
        if ch.is_iid:
            return _good_weight_exhaustive(ch, n_pairs, t_bitflip, t_phase)
    if not ch.is_iid:
        return float(
            sum(
                p
                for p, op in ch.mixture
                if op.x_mask.weight() <= t_bitflip and op.z_mask.weight() <= t_phase
            )
        )
    return _good_weight_analytic(ch, n_pairs, t_bitflip, t_phase)


def _good_weight_analytic(ch: PauliChannel, n: int, tb: int, tp: int) -> float:
    tb = min(max(tb, -1), n)
    tp = min(max(tp, -1), n)
    if tb < 0 or tp < 0:
        return 0.0
    if tb == n and tp == n:
        return 1.0
    p_i, p_x, p_y, p_z = ch.iid
    total = 0.0
    nx = np.arange(tb + 1)[:, None]
    nz = np.arange(tp + 1)[None, :]
    for ny in range(min(tb, tp) + 1):
        cx = nx[: tb - ny + 1]
        cz = nz[:, : tp - ny + 1]
        ni = n - ny - cx - cz
        valid = ni >= 0
        ni_safe = np.where(valid, ni, 0)
        log_terms = (
            gammaln(n + 1)
            - gammaln(ny + 1)
            - gammaln(cx + 1)
            - gammaln(cz + 1)
            - gammaln(ni_safe + 1)
            + xlogy(ny, p_y)
            + xlogy(cx, p_x)
            + xlogy(cz, p_z)
            + xlogy(ni_safe, p_i)
        )
        total += float(np.exp(log_terms)[valid].sum())
    return min(total, 1.0)


def _good_weight_exhaustive(ch: PauliChannel, n: int, tb: int, tp: int, chunk: int = 1 << 16) -> float:
    probs = ch.probabilities()
    shifts = 2 * np.arange(n, dtype=np.int64)
    total = 0.0
    for start in range(0, 4**n, chunk):
        codes = np.arange(start, min(start + chunk, 4**n), dtype=np.int64)
        digits = (codes[:, None] >> shifts) & 3
        flips = ((digits == 1) | (digits == 2)).sum(axis=1)
        phases = ((digits == 2) | (digits == 3)).sum(axis=1)
        weight = probs[digits].prod(axis=1)
        total += float(weight[(flips <= tb) & (phases <= tp)].sum())
    return total


class Corrector(Protocol):
    t_bitflip: int
    t_phase: int

    def __call__(self, pat: BellPattern) -> BellPattern:
        ...


class HammingSyndromeCorrector:
    """Single-error-correcting rule: shortened Hamming checks on both the flip
    bits and the phase bits (check column j is the binary form of j + 1)."""

    t_bitflip = 1
    t_phase = 1

    def __init__(self, n_pairs: int):
        self.n_pairs = n_pairs
        self.n_checks = max(1, int(n_pairs).bit_length())
        cols = np.arange(1, n_pairs + 1)
        weights = 1 << np.arange(self.n_checks - 1, -1, -1)
        self._weights = weights
        self.checks = BitMatrix.from_array(((cols[None, :] & weights[:, None]) > 0).astype(np.uint8))

    def _fix(self, bits: np.ndarray) -> np.ndarray:
        # bits: (trials, n) array; returns a corrected copy.
        check = self.checks.to_array().astype(np.int64)
        syndrome = (bits.astype(np.int64) @ check.T) & 1
        position = syndrome @ self._weights - 1
        out = bits.copy()
        rows = np.flatnonzero((position >= 0) & (position < self.n_pairs))
        out[rows, position[rows]] ^= 1
        return out

    def correct_batch(self, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self._fix(a), self._fix(b)

    def __call__(self, pat: BellPattern) -> BellPattern:
        a, b = self.correct_batch(pat.a.to_array()[None, :], pat.b.to_array()[None, :])
        return BellPattern(BitVec.from_bits(a[0]), BitVec.from_bits(b[0]))


@dataclass(frozen=True)
class FidelityReport:
    trials: int
    successes: int
    bound: float
    sigma: float

    @property
    def success_fraction(self) -> float:
        return self.successes / self.trials if self.trials else 1.0

    @property
    def holds(self) -> bool:
        return self.success_fraction >= self.bound - 3.0 * self.sigma - 1e-12

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "success_fraction": self.success_fraction,
            "bound": self.bound,
            "sigma": self.sigma,
            "holds": self.holds,
        }


def fidelity_bound_check(
    ch: PauliChannel, n_pairs: int, corrector: Corrector, trials: int, seed: Seed = None
) -> FidelityReport:
    """Monte-Carlo recovery rate of `corrector` against the good-subspace weight."""
    bound = good_space_weight(ch, n_pairs, corrector.t_bitflip, corrector.t_phase)
    rng = np.random.default_rng(seed)
    if ch.is_iid:
        a, b = _sample_iid(ch, rng, (trials, n_pairs))
    else:
        ch.validate(n_pairs)
        picks = rng.choice(len(ch.mixture), size=trials, p=ch.probabilities())
        za = np.stack([op.z_mask.to_array() for _, op in ch.mixture])
        xb = np.stack([op.x_mask.to_array() for _, op in ch.mixture])
        a, b = za[picks], xb[picks]

    batch: Optional[Callable] = getattr(corrector, "correct_batch", None)
    if batch is not None:
        ca, cb = batch(a, b)
        successes = int(np.count_nonzero(~ca.any(axis=1) & ~cb.any(axis=1)))
    else:
        successes = 0
        for row_a, row_b in zip(a, b):
            fixed = corrector(BellPattern(BitVec.from_bits(row_a), BitVec.from_bits(row_b)))
            successes += int(fixed.is_perfect())
    sigma = float(np.sqrt(bound * (1.0 - bound) / trials)) if trials else 0.0
    return FidelityReport(trials=trials, successes=successes, bound=bound, sigma=sigma)
