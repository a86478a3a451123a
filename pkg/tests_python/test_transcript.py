import json
import os
import tempfile
import unittest

from bitlinalg import BitVec
from transcript import (
    HashRecord,
    Transcript,
    TranscriptEntry,
    TranscriptFormatError,
    audit,
    duplicate_pad_indices,
    leakage,
    load_transcript,
    parse_transcript,
    replay,
)


def entry(seq: int, indices, pad_index, *, bit=0, reply=0, stage="cascade", encrypted=True) -> TranscriptEntry:
    return TranscriptEntry(
        seq=seq,
        stage=stage,
        round=1,
        sender="bob",
        indices=tuple(indices),
        length=4,
        bit=bit,
        reply=reply,
        encrypted=encrypted,
        pad_index=pad_index,
    )


def sample_transcript() -> Transcript:
    t = Transcript(header={"seed": 7, "signals": 100})
    t.append(entry(0, [0, 1], 0, bit=1, reply=0))
    t.append(entry(1, [2, 3], 1, bit=1, reply=1))
    t.append(entry(2, [0, 1, 2, 3], 2, stage="verify"))
    t.hash = HashRecord(family="dense", seed=11, rows=2, cols=4)
    return t


class TranscriptFileTest(unittest.TestCase):
    def test_records_layout(self) -> None:
        records = sample_transcript().records()
        self.assertEqual([r["kind"] for r in records], ["header", "parity", "parity", "parity", "hash", "end"])
        self.assertEqual(records[1]["mask"], "1100")
        self.assertEqual(records[-1], {"kind": "end", "count": 3, "s": 3})

    def test_written_file_loads_back(self) -> None:
        original = sample_transcript()
        with tempfile.TemporaryDirectory(prefix="synforge-transcript-") as tmp:
            path = os.path.join(tmp, "transcript.jsonl")
            original.write(path)
            loaded = load_transcript(path)
        self.assertEqual(loaded.entries, original.entries)
        self.assertEqual(loaded.header, original.header)
        self.assertEqual(loaded.hash, original.hash)
        self.assertEqual(loaded.digest(), original.digest())
        self.assertEqual(loaded.entries[0].relative, 1)
        self.assertEqual(len(loaded.stage_entries("verify")), 1)

    def test_missing_end_record_is_truncation(self) -> None:
        lines = sample_transcript().to_jsonl().splitlines()
        with self.assertRaises(TranscriptFormatError) as ctx:
            parse_transcript(lines[:-1], source="t.jsonl")
        self.assertIn("truncated", str(ctx.exception))

    def test_structural_errors_name_the_line(self) -> None:
        lines = sample_transcript().to_jsonl().splitlines()
        cases = [
            (lines + [lines[1]], "t.jsonl:7"),
            ([lines[1], lines[0]] + lines[2:], "t.jsonl:2"),
            (lines[:2] + ["{not json"] + lines[2:], "t.jsonl:3"),
            (lines[:1] + ['{"kind": "mystery"}'] + lines[1:], "t.jsonl:2"),
            (lines[:1] + ['{"kind": "parity", "seq": 0}'] + lines[1:], "t.jsonl:2"),
        ]
        for bad, where in cases:
            with self.assertRaises(TranscriptFormatError, msg=where) as ctx:
                parse_transcript(bad, source="t.jsonl")
            self.assertIn(where, str(ctx.exception))

    def test_encrypted_entry_needs_pad_index(self) -> None:
        record = entry(0, [0], 0).to_record()
        record["pad_index"] = None
        with self.assertRaises(TranscriptFormatError):
            TranscriptEntry.from_record(record)

    def test_extend_renumbers(self) -> None:
        t = sample_transcript()
        other = Transcript()
        other.append(entry(0, [3], 9))
        t.extend(other)
        self.assertEqual([e.seq for e in t], [0, 1, 2, 3])
        self.assertEqual(leakage(t), 4)


class AuditTest(unittest.TestCase):
    def test_clean_transcript_passes(self) -> None:
        t = parse_transcript(sample_transcript().to_jsonl().splitlines())
        report = audit(t, lambda header: sample_transcript())
        self.assertTrue(report.passed)
        self.assertEqual(report.s, 3)
        self.assertTrue(report.to_dict()["passed"])

    def test_duplicate_pad_index_fails(self) -> None:
        t = sample_transcript()
        t.append(entry(3, [1], 1))
        self.assertEqual(duplicate_pad_indices(t), {1: [1, 3]})
        reloaded = parse_transcript(t.to_jsonl().splitlines())
        self.assertFalse(audit(reloaded).passed)

    def test_unencrypted_entries_do_not_count(self) -> None:
        t = sample_transcript()
        t.append(entry(3, [1], None, encrypted=False))
        self.assertEqual(leakage(t), 3)
        self.assertEqual(duplicate_pad_indices(t), {})

    def test_end_record_mismatch_fails(self) -> None:
        records = sample_transcript().records()
        records[-1]["s"] = 2
        t = parse_transcript(json.dumps(r) for r in records)
        report = audit(t)
        self.assertFalse(report.end_consistent)
        self.assertFalse(report.passed)

    def test_replay_differences_are_reported(self) -> None:
        t = sample_transcript()
        edited = sample_transcript()
        edited.entries[1] = entry(1, [2, 3], 1, bit=0, reply=0)
        report = audit(t, lambda header: edited)
        self.assertEqual(report.replay_mismatches, (1,))
        self.assertFalse(report.passed)

    def test_replay_failure_is_captured(self) -> None:
        def broken(header: dict) -> Transcript:
            raise KeyError("seed")

        report = audit(sample_transcript(), broken)
        self.assertIn("KeyError", report.replay_error)
        self.assertFalse(report.passed)

    def test_replay_from_keys_and_pad(self) -> None:
        alice = BitVec.from_string("1010")
        bob = BitVec.from_string("1000")
        pad = BitVec.from_string("101")
        t = Transcript()
        # bob's parity on {0,1} is 1, pad 1 -> 0; alice 1 ^ 1 -> 0
        t.append(entry(0, [0, 1], 0, bit=0, reply=0))
        # {2,3}: bob 0 ^ 0, alice 1 ^ 0
        t.append(entry(1, [2, 3], 1, bit=0, reply=1))
        t.append(entry(2, [0, 2], 2, bit=1, reply=0))
        self.assertEqual(replay(t, alice, bob, pad), [2])


if __name__ == "__main__":
    unittest.main()
