"""
Cascade reconciliation with one-time-pad encrypted parities.

Bob initiates every exchange and Alice answers; both encrypt their parity of
the same mask with the same pad bit, so only the relative parity is public.
Each party draws from its own copy of the pre-shared pad and the two cursors
move in lockstep.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from bitlinalg import BitVec, DimensionError, Seed
from ledger import KeyLedger, ResourceExhausted
from transcript import Stage, Transcript, TranscriptEntry, leakage

Role = Literal["alice", "bob"]
Mask = Union[BitVec, Sequence[int], np.ndarray]


class PreconditionError(ValueError):
    pass


class PadExhausted(ResourceExhausted):
    def __init__(self, message: str, transcript: Optional[Transcript] = None):
        super().__init__(message)
        self.transcript = transcript


@dataclass(frozen=True)
class CascadeConfig:
    passes: int = 4
    block_size_factor: float = 0.73
    block_growth: int = 2

    def __post_init__(self) -> None:
        if self.passes < 1:
            raise ValueError(f"cascade.passes must be >= 1, got {self.passes}.")
        if self.block_size_factor <= 0:
            raise ValueError(f"cascade.block_size_factor must be > 0, got {self.block_size_factor}.")
        if self.block_growth < 1:
            raise ValueError(f"cascade.block_growth must be >= 1, got {self.block_growth}.")


class PadPool:
    """Pre-shared secret bits with a cursor; each bit is handed out once."""

    def __init__(self, pad: BitVec, cursor: int = 0):
        if not 0 <= cursor <= len(pad):
            raise ValueError(f"Pad cursor {cursor} outside 0..{len(pad)}.")
        self.pad = pad
        self.cursor = cursor
        self._bits = pad.to_array()

    @classmethod
    def random(cls, size: int, seed: Seed = None) -> "PadPool":
        return cls(BitVec.random(size, seed))

    def __len__(self) -> int:
        return len(self.pad)

    @property
    def remaining(self) -> int:
        return len(self.pad) - self.cursor

    def draw(self) -> Tuple[int, int]:
        """(pad index, pad bit) of the next unused bit."""
        if self.cursor >= len(self.pad):
            raise PadExhausted(f"Pad exhausted after {len(self.pad)} bits.")
        index = self.cursor
        self.cursor += 1
        return index, int(self._bits[index])

    def copy(self) -> "PadPool":
        return PadPool(self.pad, self.cursor)


class PartyState:
    def __init__(self, key: BitVec, role: Role):
        if role not in ("alice", "bob"):
            raise ValueError(f"Unknown role {role!r}.")
        self.role = role
        self._key = key.to_array().copy()
        self.permutations: List[np.ndarray] = []
        self.partitions: List[List[np.ndarray]] = []

    @property
    def n(self) -> int:
        return int(self._key.size)

    @property
    def key(self) -> BitVec:
        return BitVec.from_bits(self._key)

    def parity(self, indices: np.ndarray) -> int:
        return int(self._key[indices].sum() & 1)

    def flip(self, index: int) -> None:
        self._key[index] ^= 1


def _as_indices(mask: Mask, n: int) -> np.ndarray:
    if isinstance(mask, BitVec):
        if len(mask) != n:
            raise DimensionError(f"Mask length {len(mask)} does not match key length {n}.")
        return mask.support()
    return np.asarray(mask, dtype=np.int64)


def announce_parity(p: PartyState, mask: Mask, pool: PadPool) -> Tuple[int, PadPool]:
    """Encrypted parity of `p`'s key on `mask`; advances the pool."""
    _, pad_bit = pool.draw()
    return p.parity(_as_indices(mask, p.n)) ^ pad_bit, pool


class ParityChannel:
    """Synchronous in-process request/response between Bob and Alice.

    `exchange` is the only operation a socket-backed channel would need to
    provide: Bob sends his encrypted bit, Alice replies with hers.
    """

    def __init__(
        self,
        alice: PartyState,
        bob: PartyState,
        alice_pool: PadPool,
        bob_pool: PadPool,
        transcript: Transcript,
        stage: Stage = "cascade",
    ):
        if alice.n != bob.n:
            raise DimensionError(f"Key lengths differ: alice {alice.n}, bob {bob.n}.")
        self.alice = alice
        self.bob = bob
        self.alice_pool = alice_pool
        self.bob_pool = bob_pool
        self.transcript = transcript
        self.stage = stage
        self.round = 1

    def _respond(self, indices: np.ndarray, pad_index: int) -> int:
        index, pad_bit = self.alice_pool.draw()
        if index != pad_index:
            raise RuntimeError(f"Pad cursors out of step: bob used {pad_index}, alice {index}.")
        return self.alice.parity(indices) ^ pad_bit

    def exchange(self, indices: np.ndarray) -> int:
        """Relative parity of the two keys on `indices`; one pad bit."""
        try:
            pad_index, pad_bit = self.bob_pool.draw()
        except PadExhausted as exc:
            exc.transcript = self.transcript
            raise
        bit = self.bob.parity(indices) ^ pad_bit
        reply = self._respond(indices, pad_index)
        self.transcript.append(
            TranscriptEntry(
                seq=self.transcript.next_seq(),
                stage=self.stage,
                round=self.round,
                sender="bob",
                indices=tuple(int(i) for i in indices),
                length=self.bob.n,
                bit=bit,
                reply=reply,
                encrypted=True,
                pad_index=pad_index,
            )
        )
        return bit ^ reply


class _BlockBook:
    """Blocks whose relative parity is known, indexed by key position."""

    def __init__(self, n: int):
        self.indices: List[np.ndarray] = []
        self.parity: List[int] = []
        self.members: List[List[int]] = [[] for _ in range(n)]
        self._by_mask: Dict[bytes, int] = {}

    def find(self, indices: np.ndarray) -> Optional[int]:
        return self._by_mask.get(indices.tobytes())

    def add(self, indices: np.ndarray, parity: int) -> int:
        block_id = len(self.indices)
        self.indices.append(indices)
        self.parity.append(parity)
        self._by_mask.setdefault(indices.tobytes(), block_id)
        for i in indices.tolist():
            self.members[i].append(block_id)
        return block_id

    def flip(self, position: int) -> List[int]:
        """Toggle every block holding `position`; returns those now odd."""
        odd = []
        for block_id in self.members[position]:
            self.parity[block_id] ^= 1
            if self.parity[block_id]:
                odd.append(block_id)
        return odd


def _bisect(channel: ParityChannel, block: np.ndarray, book: Optional[_BlockBook]) -> int:
    # Both halves of every split go into the book, so re-opening a block walks
    # down known parities and only pays for halves never announced before.
    current = block
    while current.size > 1:
        half = (current.size + 1) // 2
        left, right = current[:half], current[half:]
        known = book.find(left) if book is not None else None
        if known is not None:
            left_odd = book.parity[known]
        else:
            left_odd = channel.exchange(left)
            if book is not None:
                book.add(left, left_odd)
                if book.find(right) is None:
                    book.add(right, left_odd ^ 1)
        current = left if left_odd else right
    return int(current[0])


def run_binary(
    alice: PartyState,
    bob: PartyState,
    block: Sequence[int],
    pool: PadPool,
    *,
    round: int = 1,
) -> Tuple[int, Transcript]:
    """Locate one disagreement inside a block of odd relative parity.

    The block parity itself is announced first and costs one pad bit; each
    halving costs one more. `pool` is Bob's; Alice answers from a copy at the
    same cursor.
    """
    segment = Transcript()
    channel = ParityChannel(alice, bob, pool.copy(), pool, segment)
    channel.round = round
    indices = np.asarray(block, dtype=np.int64)
    if indices.size == 0:
        raise PreconditionError("BINARY needs a non-empty block.")
    if not channel.exchange(indices):
        raise PreconditionError(f"Relative parity of the {indices.size}-bit block is even.")
    return _bisect(channel, indices, None), segment


def first_block_size(n: int, qber_estimate: float, cfg: CascadeConfig) -> int:
    if qber_estimate <= 0.0:
        return n
    return max(1, min(n, math.ceil(cfg.block_size_factor / qber_estimate)))


def _pass_sizes(n: int, qber_estimate: float, cfg: CascadeConfig) -> List[int]:
    sizes: List[int] = []
    k = first_block_size(n, qber_estimate, cfg)
    for _ in range(1 if qber_estimate <= 0.0 else cfg.passes):
        sizes.append(min(k, n))
        if k >= n:
            break
        k *= cfg.block_growth
    return sizes


def pad_budget(n: int, qber_estimate: float, cfg: CascadeConfig) -> int:
    """B + E * (ceil(log2 k1) + 3): every block parity plus a BINARY allowance
    for 1.5x the expected number of errors (at least one)."""
    if n == 0:
        return 0
    sizes = _pass_sizes(n, qber_estimate, cfg)
    blocks = sum(math.ceil(n / k) for k in sizes if k < n) + (1 if sizes[0] >= n else 0)
    errors = max(1, math.ceil(1.5 * qber_estimate * n))
    return blocks + errors * (math.ceil(math.log2(sizes[0])) + 3)


@dataclass
class CascadeResult:
    corrected: BitVec
    transcript: Transcript
    ledger: KeyLedger
    corrections: List[Tuple[int, int]] = field(default_factory=list)  # (after seq, position)
    residual_risk: bool = False


def run_cascade(
    alice_key: BitVec,
    bob_key: BitVec,
    qber_estimate: float,
    cfg: CascadeConfig,
    pool: PadPool,
    seed: Seed = None,
    *,
    transcript: Optional[Transcript] = None,
) -> CascadeResult:
    """Reconcile Bob's key to Alice's.

    Pass 1 uses contiguous blocks of k1 = ceil(factor / q); later passes
    permute positions with a seeded shuffle and grow the block size. A block
    that covers the whole key reuses the known total parity. Every correction
    re-opens earlier known-parity blocks that turned odd, FIFO.
    """
    if len(alice_key) != len(bob_key):
        raise DimensionError(f"Key lengths differ: alice {len(alice_key)}, bob {len(bob_key)}.")
    if not 0.0 <= qber_estimate < 0.5:
        raise PreconditionError(f"qber_estimate must lie in [0, 0.5), got {qber_estimate}.")
    n = len(alice_key)
    transcript = transcript if transcript is not None else Transcript()
    start = len(transcript)
    need = pad_budget(n, qber_estimate, cfg)
    if pool.remaining < need:
        raise PadExhausted(
            f"Pad pool holds {pool.remaining} bits, Cascade budget needs {need}.", transcript
        )

    alice = PartyState(alice_key, "alice")
    bob = PartyState(bob_key, "bob")
    channel = ParityChannel(alice, bob, pool.copy(), pool, transcript)
    book = _BlockBook(n)
    rng = np.random.default_rng(seed)
    corrections: List[Tuple[int, int]] = []
    top_level: List[int] = []

    def correct(block_id: int) -> None:
        queue: Deque[int] = deque([block_id])
        while queue:
            current = queue.popleft()
            if not book.parity[current]:
                continue
            position = _bisect(channel, book.indices[current], book)
            bob.flip(position)
            corrections.append((transcript.next_seq() - 1, position))
            queue.extend(book.flip(position))

    sizes = _pass_sizes(n, qber_estimate, cfg) if n else []
    for pass_no, k in enumerate(sizes, start=1):
        channel.round = pass_no
        order = np.arange(n, dtype=np.int64) if pass_no == 1 else rng.permutation(n)
        blocks = [order[i : i + k] for i in range(0, n, k)]
        for party in (alice, bob):
            party.permutations.append(order)
            party.partitions.append(blocks)
        this_pass: List[int] = []
        for idx, block in enumerate(blocks):
            if pass_no > 1 and idx == len(blocks) - 1:
                # blocks of a pass tile the key: the last parity follows from the total
                total = sum(book.parity[b] for b in top_level)
                parity = (total + sum(book.parity[b] for b in this_pass)) & 1
            else:
                parity = channel.exchange(block)
            block_id = book.add(block, parity)
            this_pass.append(block_id)
            if pass_no == 1:
                top_level.append(block_id)
            if parity:
                correct(block_id)

    s = leakage(transcript) - sum(1 for e in transcript.entries[:start] if e.encrypted)
    ledger = KeyLedger(n=n).add_disclosures(s=s, pad_consumed=s)
    return CascadeResult(
        corrected=bob.key,
        transcript=transcript,
        ledger=ledger,
        corrections=corrections,
        residual_risk=qber_estimate <= 0.0,
    )
