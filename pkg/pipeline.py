"""
End-to-end prepare-and-measure session.

transmission -> sifting -> sampling test -> Cascade (encrypted parities)
-> verification -> privacy amplification -> ledger.

Everything random is drawn from child streams of one SeedSequence(seed), so a
config and a seed determine the report and the transcript bit for bit.
"""

import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import rel_entr

from bellsim import BellPattern, PauliChannel, apply_channel
from bitlinalg import BitMatrix, BitVec, Seed, random_full_rank, rank, seed_sequence
from cascade import PadExhausted, PadPool, ParityChannel, PartyState, pad_budget, run_cascade
from csscode import binary_entropy, coset_key_length
from ledger import KeyLedger
from pauli import PauliOp, StabilizerSet
from session_config import SessionConfig, config_from_dict
from transcript import HashRecord, Transcript, leakage

AbortStage = Literal["sampling", "reconciliation", "verification", "privacy_amplification"]

Z_BASIS, X_BASIS = 0, 1
_STREAMS = ("transmission", "channel", "sampling", "pad", "cascade", "verify", "hash")


def _streams(seed: int) -> Dict[str, np.random.SeedSequence]:
    return dict(zip(_STREAMS, np.random.SeedSequence(seed).spawn(len(_STREAMS))))


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class Transmission:
    alice_bits: np.ndarray
    alice_bases: np.ndarray
    bob_bits: np.ndarray
    bob_bases: np.ndarray
    pattern: BellPattern

    @property
    def signals(self) -> int:
        return int(self.alice_bits.size)


def simulate_transmission(cfg: SessionConfig, seed: Seed = None) -> Transmission:
    """BB84 over the Bell-pattern model.

    With matching bases Bob's bit is Alice's bit plus the flip bit (Z basis)
    or the phase bit (X basis); with mismatched bases it is a fair coin.
    """
    seeds = _streams(cfg.seed if seed is None else seed)
    rng = np.random.default_rng(seeds["transmission"])
    m = cfg.signals
    alice_bits = rng.integers(0, 2, size=m, dtype=np.uint8)
    alice_bases = rng.integers(0, 2, size=m, dtype=np.uint8)
    bob_bases = rng.integers(0, 2, size=m, dtype=np.uint8)
    coins = rng.integers(0, 2, size=m, dtype=np.uint8)
    pattern = apply_channel(m, cfg.channel, seeds["channel"])
    error = np.where(alice_bases == Z_BASIS, pattern.b.to_array(), pattern.a.to_array())
    bob_bits = np.where(alice_bases == bob_bases, alice_bits ^ error, coins).astype(np.uint8)
    return Transmission(alice_bits, alice_bases, bob_bits, bob_bases, pattern)


@dataclass(frozen=True)
class Sifted:
    positions: np.ndarray
    bases: np.ndarray
    alice: np.ndarray
    bob: np.ndarray

    def __len__(self) -> int:
        return int(self.positions.size)


def sift(tx: Transmission) -> Sifted:
    keep = np.flatnonzero(tx.alice_bases == tx.bob_bases)
    return Sifted(keep, tx.alice_bases[keep], tx.alice_bits[keep], tx.bob_bits[keep])


def kl_upper_bound(p_hat: float, m: int, delta: float) -> float:
    """Largest p >= p_hat with m * D(p_hat || p) <= ln(1/delta) (Chernoff-Hoeffding)."""
    if m <= 0:
        return 1.0
    target = math.log(1.0 / delta) / m
    lo, hi = p_hat, 1.0
    if p_hat >= 1.0:
        return 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if rel_entr(p_hat, mid) + rel_entr(1.0 - p_hat, 1.0 - mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class SampleEstimate:
    p_z: float
    p_x: float
    upper_z: float
    upper_x: float
    tested: np.ndarray  # indices into the sifted arrays
    key: np.ndarray  # untested sifted indices, in sifted order
    abort: bool
    reason: Optional[str] = None

    @property
    def eps_z(self) -> float:
        return self.upper_z - self.p_z

    @property
    def eps_x(self) -> float:
        return self.upper_x - self.p_x

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p_z": self.p_z,
            "p_x": self.p_x,
            "eps_z": self.eps_z,
            "eps_x": self.eps_x,
            "upper_z": self.upper_z,
            "upper_x": self.upper_x,
            "tested": int(self.tested.size),
        }


def estimate_and_test(sifted: Sifted, cfg: SessionConfig, seed: Seed = None) -> SampleEstimate:
    """Disjoint samples of m positions per basis; abort when an upper bound
    crosses its threshold."""
    rng = np.random.default_rng(seed)
    m = cfg.test_sample
    delta = cfg.thresholds.confidence_delta
    by_basis = [np.flatnonzero(sifted.bases == basis) for basis in (Z_BASIS, X_BASIS)]
    if min(idx.size for idx in by_basis) < m:
        counts = ", ".join(f"{name}={idx.size}" for name, idx in zip(("Z", "X"), by_basis))
        empty = np.zeros(0, dtype=np.int64)
        return SampleEstimate(
            0.0, 0.0, 1.0, 1.0, empty, np.arange(len(sifted)), True,
            f"insufficient sifted data: need {m} per basis, have {counts}",
        )
    samples = [np.sort(rng.choice(idx, size=m, replace=False)) for idx in by_basis]
    rates = [float(np.mean(sifted.alice[s] != sifted.bob[s])) for s in samples]
    uppers = [kl_upper_bound(p, m, delta) for p in rates]
    tested = np.sort(np.concatenate(samples))
    key = np.setdiff1d(np.arange(len(sifted)), tested, assume_unique=True)
    limits = (cfg.thresholds.max_qber_z, cfg.thresholds.max_qber_x)
    reasons = [
        f"{name} error rate {p:.4f} (upper bound {u:.4f}) exceeds threshold {limit}"
        for name, p, u, limit in zip(("Z", "X"), rates, uppers, limits)
        if u > limit
    ]
    return SampleEstimate(
        p_z=rates[0],
        p_x=rates[1],
        upper_z=uppers[0],
        upper_x=uppers[1],
        tested=tested,
        key=key,
        abort=bool(reasons),
        reason="; ".join(reasons) or None,
    )


def choose_hash_family(n: int, cfg: SessionConfig) -> str:
    if cfg.pa.hash != "auto":
        return cfg.pa.hash
    return "dense" if n <= cfg.pa.dense_limit else "toeplitz"


def _toeplitz_diagonals(record: HashRecord) -> np.ndarray:
    rng = np.random.default_rng(record.seed)
    return rng.integers(0, 2, size=max(record.cols - 1, 0), dtype=np.uint8)


def hash_matrix(record: HashRecord) -> BitMatrix:
    """Materialize the published hash as an explicit rows x cols matrix."""
    r, n = record.rows, record.cols
    if record.family == "dense":
        return random_full_rank(r, n, record.seed)
    if record.family != "toeplitz":
        raise ValueError(f"Unknown hash family {record.family!r}.")
    d = _toeplitz_diagonals(record)
    width = n - r
    if width == 0:
        return BitMatrix.identity(r)
    # T[i, j] = d[i - j + width - 1]
    t = toeplitz(d[width - 1 : width - 1 + r], d[width - 1 :: -1])
    return BitMatrix.from_array(np.hstack([np.eye(r, dtype=np.uint8), t.astype(np.uint8)]))


def _apply_toeplitz(record: HashRecord, key: np.ndarray) -> np.ndarray:
    r, n = record.rows, record.cols
    width = n - r
    head = key[:r].astype(np.int64)
    if width == 0:
        return head.astype(np.uint8)
    d = _toeplitz_diagonals(record).astype(np.float64)
    tail = key[r:].astype(np.float64)
    size = 1 << int(math.ceil(math.log2(d.size + tail.size)))
    conv = np.fft.irfft(np.fft.rfft(d, size) * np.fft.rfft(tail, size), size)
    products = np.rint(conv[width - 1 : width - 1 + r]).astype(np.int64)
    return ((head + products) & 1).astype(np.uint8)


@dataclass(frozen=True)
class PaResult:
    key: BitVec
    hash: Optional[HashRecord]
    empty: bool = False


def privacy_amplify(key: BitVec, t: int, seed: Seed = None, *, family: str = "dense") -> PaResult:
    """Compress `key` to n - t bits with a public, seeded full-rank hash."""
    n = len(key)
    if t >= n:
        return PaResult(BitVec.zeros(0), None, empty=True)
    t = max(t, 0)
    hash_seed = seed if isinstance(seed, int) else _int_seed(seed_sequence(seed))
    record = HashRecord(family=family, seed=int(hash_seed), rows=n - t, cols=n)
    if family == "toeplitz":
        return PaResult(BitVec.from_bits(_apply_toeplitz(record, key.to_array())), record)
    return PaResult(hash_matrix(record).mul_vec(key), record)


@dataclass(frozen=True)
class VerifyResult:
    equal: bool
    rounds: int

    @property
    def unverified(self) -> bool:
        return self.rounds == 0


def verify_equal(
    alice_key: BitVec,
    bob_key: BitVec,
    rounds: int,
    pool: PadPool,
    seed: Seed = None,
    *,
    transcript: Optional[Transcript] = None,
) -> VerifyResult:
    """`rounds` encrypted random-mask parity comparisons; false accepts at 2^-rounds."""
    transcript = transcript if transcript is not None else Transcript()
    channel = ParityChannel(
        PartyState(alice_key, "alice"), PartyState(bob_key, "bob"), pool.copy(), pool, transcript, "verify"
    )
    rng = np.random.default_rng(seed)
    equal = True
    for r in range(1, rounds + 1):
        channel.round = r
        mask = np.flatnonzero(rng.integers(0, 2, size=len(alice_key)))
        if channel.exchange(mask):
            equal = False
    return VerifyResult(equal=equal, rounds=rounds)


def pa_parities(n: int, p_x: float, margin: int) -> int:
    """t = ceil(n * H2(p_x)) + margin."""
    return int(math.ceil(n * float(binary_entropy(min(p_x, 0.5))) - 1e-9)) + margin


def pa_parities_per_basis(n_z: int, n_x: int, p_z: float, p_x: float, margin: int) -> int:
    """Phase errors on Z-basis key bits show up as X-basis bit errors, and the
    other way round, so each share is charged at the opposite basis' rate."""
    return pa_parities(n_z, p_x, 0) + pa_parities(n_x, p_z, 0) + margin


@dataclass(frozen=True)
class Footnote:
    breeding_net: int
    coset_net: int
    disclosed_rank: int
    margin: int

    @property
    def difference(self) -> int:
        """s - rank: disclosures that were linearly redundant."""
        return self.coset_net - self.breeding_net

    @property
    def within_margin(self) -> bool:
        return 0 <= self.difference <= self.margin

    def to_dict(self) -> Dict[str, Any]:
        return {
            "breeding_net": self.breeding_net,
            "coset_net": self.coset_net,
            "disclosed_rank": self.disclosed_rank,
            "difference": self.difference,
            "within_margin": self.within_margin,
        }


def disclosed_rank(transcript: Transcript) -> int:
    masks = [e.mask for e in transcript.entries]
    if not masks:
        return 0
    return rank(BitMatrix.from_rows(masks))


def footnote_check(ledger: KeyLedger, transcript: Transcript, margin: int) -> Footnote:
    """Encrypted-parity accounting against the coset count of a CSS code whose
    C1 is cut out by the disclosed masks and whose C2 has dimension t."""
    r = disclosed_rank(transcript)
    return Footnote(
        breeding_net=ledger.net,
        coset_net=coset_key_length(ledger.n, r, ledger.t),
        disclosed_rank=r,
        margin=margin,
    )


@dataclass
class RunReport:
    seed: int
    signals: int
    sifted: int
    tested: int
    reconciled: int
    aborted: bool
    abort_stage: Optional[AbortStage]
    abort_reason: Optional[str]
    estimate: Optional[SampleEstimate]
    ledger: KeyLedger
    pad_size: int
    residual_risk: bool
    verified: bool
    keys_equal: bool
    hash_family: Optional[str]
    footnote: Optional[Footnote]
    asymptotic_key_bits: Optional[float]
    transcript: Transcript = field(repr=False, default_factory=Transcript)
    final_key: Optional[BitVec] = field(repr=False, default=None)

    @property
    def discarded(self) -> int:
        return self.signals - self.sifted

    @property
    def transcript_digest(self) -> str:
        return self.transcript.digest()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "aborted": self.aborted,
            "abort_stage": self.abort_stage,
            "abort_reason": self.abort_reason,
            "counts": {
                "signals": self.signals,
                "sifted": self.sifted,
                "discarded": self.discarded,
                "tested": self.tested,
                "reconciled": self.reconciled,
            },
            "estimates": None if self.estimate is None else self.estimate.to_dict(),
            "ledger": self.ledger.to_dict(),
            "pad": {
                "size": self.pad_size,
                "consumed": self.ledger.pad_consumed,
                "sunk": self.ledger.pad_consumed if self.aborted else 0,
            },
            "residual_risk": self.residual_risk,
            "verified": self.verified,
            "keys_equal": self.keys_equal,
            "final_key_length": None if self.final_key is None else len(self.final_key),
            "hash_family": self.hash_family,
            "footnote": None if self.footnote is None else self.footnote.to_dict(),
            "asymptotic_key_bits": self.asymptotic_key_bits,
            "transcript_digest": self.transcript_digest,
        }


StageHook = Callable[[str, str, Dict[str, Any]], None]


def run_session(cfg: SessionConfig, on_stage: Optional[StageHook] = None) -> RunReport:
    """Run one session; `on_stage(stage, status, counters)` sees each transition."""
    notify: StageHook = on_stage or (lambda stage, status, counters: None)
    seeds = _streams(cfg.seed)
    transcript = Transcript(header={"config": cfg.to_dict(), "seed": cfg.seed})
    tx = simulate_transmission(cfg)
    sifted = sift(tx)
    notify("transmission", "done", {"signals": cfg.signals, "sifted": len(sifted)})
    est = estimate_and_test(sifted, cfg, seeds["sampling"])
    n = int(est.key.size)

    def finish(stage: Optional[AbortStage], reason: Optional[str], **extra: Any) -> RunReport:
        values: Dict[str, Any] = dict(
            seed=cfg.seed,
            signals=cfg.signals,
            sifted=len(sifted),
            tested=int(est.tested.size),
            reconciled=n,
            aborted=stage is not None,
            abort_stage=stage,
            abort_reason=reason,
            estimate=est,
            ledger=KeyLedger(n=n, raw=cfg.signals),
            pad_size=0,
            residual_risk=False,
            verified=False,
            keys_equal=False,
            hash_family=None,
            footnote=None,
            asymptotic_key_bits=None,
            transcript=transcript,
        )
        values.update(extra)
        if stage is not None:
            notify(stage, "aborted", {"reason": reason})
        return RunReport(**values)

    if est.abort:
        return finish("sampling", est.reason)
    notify("sampling", "done", {"p_z": round(est.p_z, 6), "p_x": round(est.p_x, 6), "key_bits": n})

    alice_key = BitVec.from_bits(sifted.alice[est.key])
    bob_key = BitVec.from_bits(sifted.bob[est.key])
    z_share = float(np.mean(sifted.bases[est.key] == Z_BASIS)) if n else 0.0
    q = min(z_share * est.p_z + (1.0 - z_share) * est.p_x, 0.49)
    budget = pad_budget(n, q, cfg.cascade)
    pad_size = cfg.pad_bits if cfg.pad_bits is not None else budget + cfg.verify_rounds
    pool = PadPool.random(pad_size, seeds["pad"])

    try:
        rec = run_cascade(alice_key, bob_key, q, cfg.cascade, pool, _int_seed(seeds["cascade"]), transcript=transcript)
    except PadExhausted as exc:
        spent = leakage(transcript)
        return finish(
            "reconciliation",
            str(exc),
            pad_size=pad_size,
            ledger=KeyLedger(n=n, raw=cfg.signals).add_disclosures(spent, spent),
        )
    ledger = KeyLedger(n=n, raw=cfg.signals).add_disclosures(rec.ledger.s, rec.ledger.pad_consumed)
    notify("reconciliation", "done", {"s": rec.ledger.s, "corrections": len(rec.corrections)})

    try:
        check = verify_equal(alice_key, rec.corrected, cfg.verify_rounds, pool, seeds["verify"], transcript=transcript)
    except PadExhausted as exc:
        spent = leakage(transcript)
        return finish(
            "verification",
            str(exc),
            pad_size=pad_size,
            residual_risk=rec.residual_risk,
            ledger=KeyLedger(n=n, raw=cfg.signals).add_disclosures(spent, spent),
        )
    spent = leakage(transcript)
    ledger = KeyLedger(n=n, raw=cfg.signals).add_disclosures(spent, spent)
    notify("verification", "done", {"rounds": check.rounds, "equal": check.equal})
    if not check.equal:
        return finish(
            "verification",
            "verification parities disagree after reconciliation",
            pad_size=pad_size,
            residual_risk=rec.residual_risk,
            ledger=ledger,
        )

    p_x_for_t = est.upper_x if cfg.pa.finite_size else est.p_x
    if cfg.pa.per_basis:
        p_z_for_t = est.upper_z if cfg.pa.finite_size else est.p_z
        n_z = int(np.count_nonzero(sifted.bases[est.key] == Z_BASIS))
        t = pa_parities_per_basis(n_z, n - n_z, p_z_for_t, p_x_for_t, cfg.pa.safety_margin)
    else:
        t = pa_parities(n, p_x_for_t, cfg.pa.safety_margin)
    ledger = ledger.with_hashing(min(t, n))
    asymptotic = float(n * (1.0 - binary_entropy(est.p_z) - binary_entropy(est.p_x)))
    if t >= n:
        return finish(
            "privacy_amplification",
            f"hashing needs t = {t} parities but only {n} reconciled bits remain",
            pad_size=pad_size,
            residual_risk=rec.residual_risk,
            verified=not check.unverified,
            ledger=ledger,
            asymptotic_key_bits=asymptotic,
        )

    family = choose_hash_family(n, cfg)
    hash_seed = _int_seed(seeds["hash"])
    alice_final = privacy_amplify(alice_key, t, hash_seed, family=family)
    bob_final = privacy_amplify(rec.corrected, t, hash_seed, family=family)
    transcript.hash = alice_final.hash
    notify("privacy_amplification", "done", {"t": ledger.t, "net": ledger.net, "family": family})
    return finish(
        None,
        None,
        ledger=ledger,
        pad_size=pad_size,
        residual_risk=rec.residual_risk,
        verified=not check.unverified,
        keys_equal=alice_final.key == bob_final.key,
        hash_family=family,
        footnote=footnote_check(ledger, transcript, cfg.pa.safety_margin),
        asymptotic_key_bits=asymptotic,
        final_key=alice_final.key,
    )


def regenerate_transcript(header: Dict[str, Any]) -> Transcript:
    """Re-run a session from a transcript header."""
    if "config" not in header or "seed" not in header:
        raise ValueError("Transcript header lacks config or seed.")
    cfg = config_from_dict(header["config"], source="<transcript header>").with_seed(int(header["seed"]))
    return run_session(cfg).transcript


def protocol_operators(
    transcript: Transcript, hash_rows: Optional[BitMatrix] = None
) -> Tuple[StabilizerSet, List[Tuple[int, int]]]:
    """Symmetric operators of a finished session.

    One Z-type op per disclosed parity mask and one X-type op per hash row.
    Each Cascade parity depends on the one announced before it.
    """
    n = transcript.entries[0].length if transcript.entries else (hash_rows.ncols if hash_rows is not None else 0)
    ops: List[PauliOp] = []
    labels: List[str] = []
    deps: List[Tuple[int, int]] = []
    zeros = BitVec.zeros(n)
    previous: Optional[int] = None
    for e in transcript.entries:
        ops.append(PauliOp(x_mask=zeros, z_mask=e.mask))
        labels.append(f"{e.stage}{e.seq}")
        if e.stage == "cascade":
            if previous is not None:
                deps.append((len(ops) - 1, previous))
            previous = len(ops) - 1
    if hash_rows is not None:
        for i, row in enumerate(hash_rows.rows()):
            ops.append(PauliOp(x_mask=row, z_mask=zeros))
            labels.append(f"hash{i}")
    return StabilizerSet(tuple(ops), tuple(labels)), deps


@dataclass(frozen=True)
class SweepRow:
    qber: float
    seed: int
    report: RunReport

    def to_row(self) -> Dict[str, Any]:
        ledger = self.report.ledger
        aborted = self.report.aborted
        net = 0 if aborted else ledger.net
        n = ledger.n
        return {
            "qber": self.qber,
            "n": n,
            "s": ledger.s,
            "t": ledger.t,
            "gross": 0 if aborted else ledger.gross,
            "net": net,
            "aborted": aborted,
            "keys_equal": self.report.keys_equal,
            "seed": self.seed,
            "net_rate": (net / n) if n else 0.0,
            "nonpositive_net": net <= 0,
        }


SWEEP_COLUMNS = ("qber", "n", "s", "t", "gross", "net", "aborted", "keys_equal", "seed", "net_rate", "nonpositive_net")


def run_sweep(
    base: SessionConfig,
    qbers: Sequence[float],
    seeds: Sequence[int],
    *,
    workers: int = 4,
    on_row: Optional[Callable[[SweepRow], None]] = None,
) -> List[SweepRow]:
    """One session per (qber, seed) on the symmetric channel, in a thread pool."""
    if not qbers or not seeds:
        raise ValueError("A sweep needs at least one qber and one seed.")
    jobs = [(q, s) for q in qbers for s in seeds]
    rows: List[SweepRow] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {
            pool.submit(run_session, base.with_channel(PauliChannel.symmetric_qber(q)).with_seed(s)): (q, s)
            for q, s in jobs
        }
        for future in as_completed(futures):
            q, s = futures[future]
            row = SweepRow(qber=q, seed=s, report=future.result())
            rows.append(row)
            if on_row is not None:
                on_row(row)
    rows.sort(key=lambda r: (r.qber, r.seed))
    return rows
