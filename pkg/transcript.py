import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np

from bitlinalg import BitVec

Stage = Literal["cascade", "verify"]
Sender = Literal["alice", "bob"]


class TranscriptFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TranscriptEntry:
    """One symmetric parity exchange.

    `bit` is the sender's encrypted announcement, `reply` the responder's under
    the same pad index, so bit ^ reply is the relative parity and each entry
    costs exactly one pad bit.
    """

    seq: int
    stage: Stage
    round: int
    sender: Sender
    indices: Tuple[int, ...]
    length: int
    bit: int
    reply: int
    encrypted: bool = True
    pad_index: Optional[int] = None

    @property
    def mask(self) -> BitVec:
        return BitVec.from_indices(self.indices, self.length)

    @property
    def relative(self) -> int:
        return self.bit ^ self.reply

    def to_record(self) -> dict:
        return {
            "kind": "parity",
            "seq": self.seq,
            "stage": self.stage,
            "round": self.round,
            "sender": self.sender,
            "mask": self.mask.to_string(),
            "bit": self.bit,
            "reply": self.reply,
            "encrypted": self.encrypted,
            "pad_index": self.pad_index,
        }

    @classmethod
    def from_record(cls, record: dict, *, where: str = "<record>") -> "TranscriptEntry":
        try:
            mask = BitVec.from_string(str(record["mask"]))
            entry = cls(
                seq=int(record["seq"]),
                stage=record["stage"],
                round=int(record["round"]),
                sender=record["sender"],
                indices=tuple(int(i) for i in mask.support()),
                length=len(mask),
                bit=int(record["bit"]),
                reply=int(record["reply"]),
                encrypted=bool(record["encrypted"]),
                pad_index=None if record.get("pad_index") is None else int(record["pad_index"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TranscriptFormatError(f"{where}: malformed parity record ({exc}).") from exc
        if entry.stage not in ("cascade", "verify") or entry.sender not in ("alice", "bob"):
            raise TranscriptFormatError(f"{where}: unknown stage/sender {entry.stage!r}/{entry.sender!r}.")
        if entry.bit not in (0, 1) or entry.reply not in (0, 1):
            raise TranscriptFormatError(f"{where}: announced bits must be 0 or 1.")
        if entry.encrypted and entry.pad_index is None:
            raise TranscriptFormatError(f"{where}: encrypted entry without pad_index.")
        return entry


@dataclass(frozen=True)
class HashRecord:
    """Public description of the privacy-amplification hash."""

    family: str
    seed: int
    rows: int
    cols: int

    def to_record(self) -> dict:
        return {"kind": "hash", "family": self.family, "seed": self.seed, "rows": self.rows, "cols": self.cols}


@dataclass
class Transcript:
    header: Dict = field(default_factory=dict)
    entries: List[TranscriptEntry] = field(default_factory=list)
    hash: Optional[HashRecord] = None
    end: Optional[Dict] = None

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def next_seq(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TranscriptEntry]:
        return iter(self.entries)

    def stage_entries(self, stage: Stage) -> List[TranscriptEntry]:
        return [e for e in self.entries if e.stage == stage]

    def extend(self, other: "Transcript") -> None:
        for entry in other.entries:
            self.entries.append(_renumber(entry, len(self.entries)))

    def records(self) -> List[dict]:
        out: List[dict] = []
        if self.header:
            out.append({"kind": "header", **self.header})
        out.extend(e.to_record() for e in self.entries)
        if self.hash is not None:
            out.append(self.hash.to_record())
        out.append({"kind": "end", "count": len(self.entries), "s": leakage(self)})
        return out

    def to_jsonl(self) -> str:
        return "".join(_dumps(r) + "\n" for r in self.records())

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())


def _renumber(entry: TranscriptEntry, seq: int) -> TranscriptEntry:
    if entry.seq == seq:
        return entry
    return TranscriptEntry(
        seq=seq,
        stage=entry.stage,
        round=entry.round,
        sender=entry.sender,
        indices=entry.indices,
        length=entry.length,
        bit=entry.bit,
        reply=entry.reply,
        encrypted=entry.encrypted,
        pad_index=entry.pad_index,
    )


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def leakage(t: Transcript) -> int:
    """s: encrypted announcements, one per symmetric parity."""
    return sum(1 for e in t.entries if e.encrypted)


def parse_transcript(lines: Iterable[str], *, source: str = "<transcript>") -> Transcript:
    transcript = Transcript()
    saw_header = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if transcript.end is not None:
            raise TranscriptFormatError(f"{where}: record after the end record.")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TranscriptFormatError(f"{where}: invalid JSON ({exc.msg}).") from exc
        if not isinstance(record, dict):
            raise TranscriptFormatError(f"{where}: record must be a JSON object.")
        kind = record.get("kind")
        if kind == "header":
            if saw_header or transcript.entries:
                raise TranscriptFormatError(f"{where}: header must be the first record.")
            saw_header = True
            transcript.header = {k: v for k, v in record.items() if k != "kind"}
        elif kind == "parity":
            transcript.append(TranscriptEntry.from_record(record, where=where))
        elif kind == "hash":
            try:
                transcript.hash = HashRecord(
                    family=str(record["family"]),
                    seed=int(record["seed"]),
                    rows=int(record["rows"]),
                    cols=int(record["cols"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise TranscriptFormatError(f"{where}: malformed hash record ({exc}).") from exc
        elif kind == "end":
            transcript.end = {k: v for k, v in record.items() if k != "kind"}
        else:
            raise TranscriptFormatError(f"{where}: unknown record kind {kind!r}.")
    if transcript.end is None:
        raise TranscriptFormatError(f"{source}: truncated transcript (no end record).")
    return transcript


def load_transcript(path: str) -> Transcript:
    with open(path, "r", encoding="utf-8") as f:
        return parse_transcript(f, source=path)


def duplicate_pad_indices(t: Transcript) -> Dict[int, List[int]]:
    """pad_index -> seqs, for every pad index used more than once."""
    uses: Dict[int, List[int]] = defaultdict(list)
    for e in t.entries:
        if e.encrypted and e.pad_index is not None:
            uses[e.pad_index].append(e.seq)
    return {idx: seqs for idx, seqs in sorted(uses.items()) if len(seqs) > 1}


def replay(t: Transcript, alice_key: BitVec, bob_key: BitVec, pad: BitVec) -> List[int]:
    """Recompute every announcement from the inputs; returns mismatching seqs.

    The keys are the ones in force at each entry, so callers replaying a
    Cascade run pass Bob's key per entry via `replay_with_flips`.
    """
    return replay_with_flips(t, alice_key, bob_key, pad, flips=())


def replay_with_flips(
    t: Transcript,
    alice_key: BitVec,
    bob_key: BitVec,
    pad: BitVec,
    flips: Sequence[Tuple[int, int]],
) -> List[int]:
    """Like `replay`, applying Bob's corrections (after_seq, position) as they happened."""
    a = alice_key.to_array()
    b = bob_key.to_array().copy()
    pad_bits = pad.to_array()
    pending = sorted(flips)
    cursor = 0
    mismatches: List[int] = []
    for e in t.entries:
        while cursor < len(pending) and pending[cursor][0] < e.seq:
            b[pending[cursor][1]] ^= 1
            cursor += 1
        idx = np.asarray(e.indices, dtype=np.int64)
        key_bit = pad_bits[e.pad_index] if e.encrypted else 0
        sender, responder = (b, a) if e.sender == "bob" else (a, b)
        bit = int(sender[idx].sum() & 1) ^ int(key_bit)
        reply = int(responder[idx].sum() & 1) ^ int(key_bit)
        if (bit, reply) != (e.bit, e.reply):
            mismatches.append(e.seq)
    return mismatches


@dataclass(frozen=True)
class AuditReport:
    s: int
    entry_count: int
    duplicates: Dict[int, List[int]]
    end_consistent: bool
    replay_checked: bool
    replay_mismatches: Tuple[int, ...] = ()
    replay_error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return (
            not self.duplicates
            and self.end_consistent
            and (not self.replay_checked or (not self.replay_mismatches and self.replay_error is None))
        )

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "entry_count": self.entry_count,
            "duplicate_pad_indices": {str(k): v for k, v in self.duplicates.items()},
            "end_consistent": self.end_consistent,
            "replay_checked": self.replay_checked,
            "replay_mismatches": list(self.replay_mismatches),
            "replay_error": self.replay_error,
            "passed": self.passed,
        }


def audit(t: Transcript, regenerate: Optional[Callable[[dict], Transcript]] = None) -> AuditReport:
    """Recount s, look for reused pad bits, and optionally re-run the session
    from the header to compare it record by record."""
    s = leakage(t)
    end = t.end or {}
    end_consistent = end.get("count") == len(t.entries) and end.get("s") == s
    mismatches: List[int] = []
    error: Optional[str] = None
    if regenerate is not None:
        try:
            fresh = regenerate(t.header)
        except Exception as exc:  # replay of a foreign or edited header
            error = f"{type(exc).__name__}: {exc}"
        else:
            ours = [e.to_record() for e in t.entries]
            theirs = [e.to_record() for e in fresh.entries]
            mismatches = [i for i, (x, y) in enumerate(zip(ours, theirs)) if x != y]
            if len(ours) != len(theirs):
                mismatches.append(min(len(ours), len(theirs)))
            if (t.hash is None) != (fresh.hash is None) or (
                t.hash is not None and t.hash != fresh.hash
            ):
                error = "privacy-amplification hash record differs on replay"
    return AuditReport(
        s=s,
        entry_count=len(t.entries),
        duplicates=duplicate_pad_indices(t),
        end_consistent=end_consistent,
        replay_checked=regenerate is not None,
        replay_mismatches=tuple(mismatches),
        replay_error=error,
    )
