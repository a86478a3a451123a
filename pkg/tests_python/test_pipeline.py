import unittest

import numpy as np

from bitlinalg import BitVec
from cascade import CascadeConfig, PadPool, pad_budget, run_cascade
from ledger import KeyLedger
from pauli import is_symmetric_protocol_valid
from pipeline import (
    SWEEP_COLUMNS,
    X_BASIS,
    Z_BASIS,
    Sifted,
    estimate_and_test,
    footnote_check,
    hash_matrix,
    kl_upper_bound,
    pa_parities,
    pa_parities_per_basis,
    privacy_amplify,
    protocol_operators,
    regenerate_transcript,
    run_session,
    run_sweep,
    sift,
    simulate_transmission,
    verify_equal,
)
from session_config import config_from_dict
from transcript import HashRecord, Transcript, TranscriptEntry, duplicate_pad_indices, leakage


def make_config(qber: float, *, signals: int = 3000, test_sample: int = 300, seed: int = 1, **sections):
    raw = {
        "session": {"signals": signals, "test_sample": test_sample, "seed": seed},
        "channel": {"qber": qber},
    }
    raw.update(sections)
    return config_from_dict(raw)


class TransmissionTest(unittest.TestCase):
    def test_noiseless_sifted_bits_agree(self) -> None:
        tx = simulate_transmission(make_config(0.0, signals=4000))
        s = sift(tx)
        self.assertTrue(np.array_equal(s.alice, s.bob))
        self.assertAlmostEqual(len(s) / 4000, 0.5, delta=0.05)
        self.assertEqual(tx.signals, 4000)

    def test_bit_flip_hits_only_the_z_basis(self) -> None:
        cfg = make_config(0.0, signals=2000).with_channel(
            config_from_dict({"channel": {"pX": 1.0}}).channel
        )
        s = sift(simulate_transmission(cfg))
        z = s.bases == Z_BASIS
        self.assertTrue(np.all(s.alice[z] != s.bob[z]))
        self.assertTrue(np.all(s.alice[~z] == s.bob[~z]))

    def test_seed_determines_transmission(self) -> None:
        a = simulate_transmission(make_config(0.05), seed=3)
        b = simulate_transmission(make_config(0.05), seed=3)
        self.assertTrue(np.array_equal(a.bob_bits, b.bob_bits))


class SamplingBoundTest(unittest.TestCase):
    def test_zero_errors_bound(self) -> None:
        self.assertAlmostEqual(kl_upper_bound(0.0, 1000, 1e-6), 0.0137, delta=0.0002)

    def test_bound_sits_above_estimate_and_shrinks_with_m(self) -> None:
        small = kl_upper_bound(0.05, 200, 1e-6)
        large = kl_upper_bound(0.05, 20000, 1e-6)
        self.assertGreater(small, large)
        self.assertGreater(large, 0.05)
        self.assertEqual(kl_upper_bound(0.1, 0, 1e-6), 1.0)


def alternating_sifted(size: int, x_errors: bool = False) -> Sifted:
    bases = np.arange(size, dtype=np.uint8) % 2
    alice = np.zeros(size, dtype=np.uint8)
    bob = ((bases == X_BASIS) & x_errors).astype(np.uint8)
    return Sifted(np.arange(size), bases, alice, bob)


class EstimateAndTestTest(unittest.TestCase):
    def test_clean_sample_passes_and_splits_positions(self) -> None:
        est = estimate_and_test(alternating_sifted(1000), make_config(0.0), seed=2)
        self.assertFalse(est.abort)
        self.assertEqual((est.p_z, est.p_x), (0.0, 0.0))
        self.assertLess(est.upper_x, 0.11)
        self.assertEqual(est.tested.size, 600)
        self.assertEqual(est.key.size, 400)
        self.assertEqual(np.intersect1d(est.tested, est.key).size, 0)

    def test_errors_in_one_basis_abort(self) -> None:
        est = estimate_and_test(alternating_sifted(1000, x_errors=True), make_config(0.0), seed=2)
        self.assertTrue(est.abort)
        self.assertEqual(est.p_x, 1.0)
        self.assertEqual(est.p_z, 0.0)
        self.assertIn("X error rate", est.reason)
        self.assertNotIn("Z error rate", est.reason)

    def test_too_few_sifted_bits_abort(self) -> None:
        est = estimate_and_test(alternating_sifted(400), make_config(0.0), seed=2)
        self.assertTrue(est.abort)
        self.assertIn("insufficient sifted data", est.reason)
        self.assertEqual(est.key.size, 400)


class FootnoteTest(unittest.TestCase):
    def entry(self, seq: int, indices, pad_index: int) -> TranscriptEntry:
        return TranscriptEntry(
            seq=seq, stage="cascade", round=1, sender="bob",
            indices=tuple(indices), length=16, bit=0, reply=0, encrypted=True, pad_index=pad_index,
        )

    def test_independent_masks_close_the_gap(self) -> None:
        transcript = Transcript(entries=[self.entry(0, [0, 1], 0), self.entry(1, [2, 3], 1)])
        note = footnote_check(KeyLedger(n=16, s=2, t=4), transcript, margin=3)
        self.assertEqual(note.disclosed_rank, 2)
        self.assertEqual(note.breeding_net, note.coset_net)
        self.assertEqual(note.coset_net, 10)
        self.assertTrue(note.within_margin)

    def test_repeated_mask_shows_as_difference(self) -> None:
        transcript = Transcript(
            entries=[self.entry(0, [0, 1], 0), self.entry(1, [0, 1], 1), self.entry(2, [5], 2)]
        )
        note = footnote_check(KeyLedger(n=16, s=3, t=4), transcript, margin=0)
        self.assertEqual(note.disclosed_rank, 2)
        self.assertEqual(note.difference, 1)
        self.assertFalse(note.within_margin)
        self.assertEqual(note.to_dict()["difference"], 1)


class PrivacyAmplificationTest(unittest.TestCase):
    def test_toeplitz_fft_matches_explicit_matrix(self) -> None:
        key = BitVec.random(100, seed=2)
        out = privacy_amplify(key, 60, 3, family="toeplitz")
        self.assertEqual(out.hash, HashRecord(family="toeplitz", seed=3, rows=40, cols=100))
        self.assertEqual(out.key, hash_matrix(out.hash).mul_vec(key))

    def test_output_lengths(self) -> None:
        key = BitVec.random(64, seed=5)
        self.assertEqual(len(privacy_amplify(key, 20, 7).key), 44)
        self.assertEqual(privacy_amplify(key, 0, 7, family="toeplitz").key, key)
        empty = privacy_amplify(key, 64, 7)
        self.assertTrue(empty.empty)
        self.assertIsNone(empty.hash)
        self.assertEqual(len(empty.key), 0)

    def test_same_seed_same_hash(self) -> None:
        key = BitVec.random(64, seed=5)
        self.assertEqual(privacy_amplify(key, 10, 9).key, privacy_amplify(key, 10, 9).key)

    def test_seed_sequence_and_generator_seeds_are_deterministic(self) -> None:
        key = BitVec.random(64, seed=5)
        first = privacy_amplify(key, 10, np.random.SeedSequence(42), family="toeplitz")
        second = privacy_amplify(key, 10, np.random.SeedSequence(42), family="toeplitz")
        self.assertEqual(first.hash, second.hash)
        self.assertEqual(first.key, second.key)
        from_rng = privacy_amplify(key, 10, np.random.default_rng(8))
        self.assertEqual(from_rng.key, privacy_amplify(key, 10, np.random.default_rng(8)).key)

    def test_unknown_family(self) -> None:
        with self.assertRaises(ValueError):
            hash_matrix(HashRecord(family="sha", seed=0, rows=2, cols=4))

    def test_pa_parities(self) -> None:
        self.assertEqual(pa_parities(1000, 0.0, 32), 32)
        self.assertEqual(pa_parities(1000, 0.11, 0), 500)
        self.assertEqual(pa_parities_per_basis(1000, 0, 0.0, 0.11, 0), 500)
        self.assertEqual(pa_parities_per_basis(0, 1000, 0.11, 0.0, 32), 532)
        self.assertEqual(pa_parities_per_basis(500, 500, 0.0, 0.0, 32), 32)


class VerifyTest(unittest.TestCase):
    def test_equal_and_unequal_keys(self) -> None:
        key = BitVec.random(200, seed=1)
        pool = PadPool.random(100, seed=2)
        transcript = Transcript()
        result = verify_equal(key, key, 20, pool, seed=3, transcript=transcript)
        self.assertTrue(result.equal)
        self.assertEqual(pool.remaining, 80)
        self.assertEqual([e.stage for e in transcript], ["verify"] * 20)
        other = key ^ BitVec.from_indices([7], 200)
        self.assertFalse(verify_equal(key, other, 50, PadPool.random(50, seed=4), seed=5).equal)
        self.assertTrue(verify_equal(key, other, 0, PadPool.random(0, seed=4)).unverified)


class RunSessionTest(unittest.TestCase):
    def test_noiseless_session_spends_only_the_margin(self) -> None:
        cfg = make_config(0.0, privacy_amplification={"finite_size": False})
        stages = []
        report = run_session(cfg, on_stage=lambda stage, status, counters: stages.append((stage, status)))
        self.assertFalse(report.aborted)
        self.assertEqual(
            [s for s, _ in stages],
            ["transmission", "sampling", "reconciliation", "verification", "privacy_amplification"],
        )
        ledger = report.ledger
        self.assertEqual(ledger.t, 32)
        self.assertEqual(ledger.s, 1 + cfg.verify_rounds)
        self.assertTrue(report.residual_risk)
        self.assertTrue(report.keys_equal)
        self.assertEqual(len(report.final_key), ledger.net + ledger.s)
        self.assertEqual(report.hash_family, "dense")

    def test_counts_are_conserved(self) -> None:
        report = run_session(make_config(0.02))
        data = report.to_dict()
        counts = data["counts"]
        self.assertEqual(counts["sifted"] + counts["discarded"], counts["signals"])
        self.assertEqual(counts["tested"] + counts["reconciled"], counts["sifted"])
        self.assertEqual(counts["tested"], 600)
        ledger = data["ledger"]
        self.assertEqual(ledger["net"], ledger["n"] - ledger["s"] - ledger["t"])
        self.assertEqual(data["pad"]["consumed"], ledger["s"])
        self.assertEqual(data["pad"]["sunk"], 0)

    def test_high_error_rate_aborts_at_sampling(self) -> None:
        report = run_session(make_config(0.12, signals=10000, test_sample=1000))
        self.assertTrue(report.aborted)
        self.assertEqual(report.abort_stage, "sampling")
        self.assertIn("exceeds threshold", report.abort_reason)
        self.assertEqual(report.ledger.s, 0)
        self.assertIsNone(report.final_key)

    def test_three_percent_session_yields_key(self) -> None:
        report = run_session(make_config(0.03, signals=12000, test_sample=1000, seed=7))
        self.assertFalse(report.aborted, report.abort_reason)
        self.assertTrue(report.keys_equal)
        self.assertTrue(report.verified)
        self.assertGreater(report.ledger.net, 0)
        self.assertEqual(report.hash_family, "toeplitz")
        self.assertLess(report.ledger.net, report.asymptotic_key_bits)
        self.assertEqual(duplicate_pad_indices(report.transcript), {})
        self.assertEqual(leakage(report.transcript), report.ledger.s)
        self.assertTrue(report.footnote.within_margin, report.footnote.to_dict())

    def test_same_seed_same_report(self) -> None:
        cfg = make_config(0.04, seed=11)
        first, second = run_session(cfg), run_session(cfg)
        self.assertEqual(first.to_dict(), second.to_dict())
        self.assertEqual(first.transcript.to_jsonl(), second.transcript.to_jsonl())
        self.assertNotEqual(first.transcript_digest, run_session(cfg.with_seed(12)).transcript_digest)

    def test_header_regenerates_transcript(self) -> None:
        report = run_session(make_config(0.03, seed=5))
        self.assertEqual(regenerate_transcript(report.transcript.header).digest(), report.transcript_digest)
        with self.assertRaises(ValueError):
            regenerate_transcript({})

    def test_short_pad_aborts_reconciliation(self) -> None:
        report = run_session(make_config(0.03, pad={"bits": 5}))
        self.assertEqual(report.abort_stage, "reconciliation")
        self.assertEqual(report.to_dict()["pad"], {"size": 5, "consumed": 0, "sunk": 0})

    def test_oversized_margin_aborts_hashing_and_sinks_pad(self) -> None:
        report = run_session(make_config(0.0, privacy_amplification={"safety_margin": 100000}))
        self.assertEqual(report.abort_stage, "privacy_amplification")
        pad = report.to_dict()["pad"]
        self.assertGreater(pad["consumed"], 0)
        self.assertEqual(pad["sunk"], pad["consumed"])

    def test_explicit_dense_hash(self) -> None:
        report = run_session(make_config(0.02, privacy_amplification={"hash": "dense"}))
        self.assertEqual(report.hash_family, "dense")
        self.assertEqual(report.transcript.hash.family, "dense")

    def test_per_basis_sizing_charges_z_errors_to_x_key_bits(self) -> None:
        def session(per_basis: bool):
            return run_session(
                make_config(
                    0.0, signals=8000, test_sample=1000, seed=3,
                    channel={"pX": 0.05},
                    privacy_amplification={"finite_size": False, "per_basis": per_basis},
                )
            )

        single, split = session(False), session(True)
        for report in (single, split):
            self.assertFalse(report.aborted, report.abort_reason)
            self.assertTrue(report.keys_equal)
        self.assertEqual(single.estimate.p_x, 0.0)
        self.assertGreater(single.estimate.p_z, 0.0)
        self.assertEqual(single.ledger.t, 32)
        self.assertGreater(split.ledger.t, single.ledger.t + 200)
        self.assertEqual(single.ledger.n, split.ledger.n)
        self.assertEqual(single.ledger.s, split.ledger.s)


def noisy_pair(n: int, q: float, seed: int):
    rng = np.random.default_rng(seed)
    alice = rng.integers(0, 2, size=n, dtype=np.uint8)
    errors = (rng.random(n) < q).astype(np.uint8)
    return BitVec.from_bits(alice), BitVec.from_bits(alice ^ errors)


class ReconciliationAcceptanceTest(unittest.TestCase):
    def test_ten_thousand_bit_keys_reconcile_and_verify_catches_failures(self) -> None:
        n, runs, rounds = 10_000, 100, 64
        cfg = CascadeConfig()
        for q in (0.01, 0.03, 0.05):
            equal = 0
            for seed in range(runs):
                alice, bob = noisy_pair(n, q, seed=int(q * 100) * 1000 + seed)
                pool = PadPool.random(pad_budget(n, q, cfg) + rounds, seed=seed)
                result = run_cascade(alice, bob, q, cfg, pool, seed=seed)
                same = result.corrected == alice
                check = verify_equal(alice, result.corrected, rounds, pool, seed=seed)
                # no residual error may pass verification unnoticed
                self.assertEqual(check.equal, same, msg=f"q={q} seed={seed}")
                equal += int(same)
            self.assertGreaterEqual(equal, 99, msg=f"q={q}")


class ProtocolOperatorsTest(unittest.TestCase):
    def test_disclosed_singleton_is_in_the_noncommuting_set(self) -> None:
        alice = BitVec.random(16, seed=4)
        bob = alice ^ BitVec.from_indices([5], 16)
        result = run_cascade(alice, bob, 0.0625, CascadeConfig(), PadPool.random(16, seed=5), seed=6)
        transcript = result.transcript
        transcript.append(
            TranscriptEntry(
                seq=transcript.next_seq(), stage="verify", round=1, sender="bob",
                indices=(3,), length=16, bit=0, reply=0, encrypted=True, pad_index=99,
            )
        )
        rows = hash_matrix(HashRecord(family="toeplitz", seed=5, rows=12, cols=16))
        ops, deps = protocol_operators(transcript, rows)
        self.assertEqual(len(ops), len(transcript) + 12)
        report = is_symmetric_protocol_valid(ops, deps)
        self.assertTrue(report.css_like)
        self.assertTrue(report.conditional_on_z_only)
        singleton = ops.labels.index(f"verify{len(transcript) - 1}")
        self.assertIn(singleton, report.noncommuting.members)
        touched = {int(i) for i, _ in report.edge_list()}
        self.assertEqual(set(report.noncommuting.members), touched)
        self.assertLessEqual(report.pad_bits_required, leakage(transcript))


class SweepTest(unittest.TestCase):
    def test_rows_cover_the_grid(self) -> None:
        seen = []
        rows = run_sweep(make_config(0.0), [0.02, 0.15], [1, 2], workers=2, on_row=seen.append)
        self.assertEqual(len(seen), 4)
        self.assertEqual([(r.qber, r.seed) for r in rows], [(0.02, 1), (0.02, 2), (0.15, 1), (0.15, 2)])
        for row in rows:
            data = row.to_row()
            self.assertEqual(tuple(data), SWEEP_COLUMNS)
            if row.qber == 0.15:
                self.assertTrue(data["aborted"])
                self.assertEqual((data["net"], data["gross"]), (0, 0))
                self.assertTrue(data["nonpositive_net"])
        with self.assertRaises(ValueError):
            run_sweep(make_config(0.0), [], [1])


if __name__ == "__main__":
    unittest.main()
