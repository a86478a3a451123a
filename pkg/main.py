import argparse
import csv
import json
import os
import sys
from collections import defaultdict
from typing import Any, Dict, List, Optional, Sequence

from csscode import one_way_rate, one_way_threshold
from ledger import ResourceExhausted
from pauli import ClassificationError, PauliType, css_type, is_symmetric_protocol_valid, load_operators
from pipeline import SWEEP_COLUMNS, hash_matrix, protocol_operators, regenerate_transcript, run_session, run_sweep
from run_log import RunLog, write_json_atomic
from session_config import ConfigError, SessionConfig, read_session_config, resolve_seed
from transcript import audit, load_transcript

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2
EXIT_AUDIT = 3


def resolve_config_path(config_arg: Optional[str]) -> str:
    """Explicit `-c` path, else a synforge.yaml in the working directory, else
    the config.yaml shipped next to this file."""
    if config_arg:
        return config_arg
    for candidate in ("synforge.yaml", "synforge.yml", "synforge.json"):
        if os.path.exists(candidate):
            return candidate
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.yaml")


def _load(args: argparse.Namespace) -> SessionConfig:
    path = resolve_config_path(args.config)
    if not os.path.exists(path):
        raise ConfigError(f"{path}:0: config file not found.")
    cfg = read_session_config(path)
    return cfg.with_seed(resolve_seed(cfg.seed, getattr(args, "seed", None)))


def _table(rows: Sequence[Sequence[Any]]) -> str:
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip() for row in rows)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    log = RunLog(args.out)
    log.event(f"run seed={cfg.seed} signals={cfg.signals}")

    def on_stage(stage: str, status: str, counters: Dict[str, Any]) -> None:
        log.stage(stage, status, **counters)
        print(f"{stage:<22} {status}")

    report = run_session(cfg, on_stage=on_stage)
    data = report.to_dict()
    write_json_atomic(os.path.join(args.out, "report.json"), data)
    report.transcript.write(os.path.join(args.out, "transcript.jsonl"))
    log.finish("aborted" if report.aborted else "complete")

    ledger = data["ledger"]
    est = data["estimates"] or {}
    print(
        _table(
            [
                ("field", "value"),
                ("seed", cfg.seed),
                ("p_z", f"{est.get('p_z', 0.0):.4f}"),
                ("p_x", f"{est.get('p_x', 0.0):.4f}"),
                ("n", ledger["n"]),
                ("s", ledger["s"]),
                ("t", ledger["t"]),
                ("net", ledger["net"]),
                ("keys_equal", str(report.keys_equal).lower()),
                ("aborted", report.abort_stage or "no"),
            ]
        )
    )
    if report.aborted:
        print(f"Session aborted at {report.abort_stage}: {report.abort_reason}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def parse_grid(text: str) -> List[float]:
    """LO:HI:STEP, inclusive of HI up to rounding."""
    try:
        lo, hi, step = (float(part) for part in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"--qber expects LO:HI:STEP, got {text!r}.") from exc
    if step <= 0:
        raise ConfigError(f"--qber step must be > 0, got {step}.")
    values: List[float] = []
    k = 0
    while lo + k * step <= hi + 1e-12:
        values.append(round(lo + k * step, 10))
        k += 1
    if not values:
        raise ConfigError(f"--qber grid {text!r} is empty.")
    bad = [q for q in values if not 0.0 < q < 0.5]
    if bad:
        raise ConfigError(f"--qber values must lie in (0, 0.5); got {bad[0]}.")
    return values


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args)
    qbers = parse_grid(args.qber)
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}.")
    seeds = [cfg.seed + i for i in range(args.seeds)]
    print(f"Sweeping {len(qbers)} qber points x {len(seeds)} seeds ({args.workers} workers)")
    rows = run_sweep(cfg, qbers, seeds, workers=args.workers)

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(SWEEP_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_row())

    by_q: Dict[float, List[float]] = defaultdict(list)
    for row in rows:
        by_q[row.qber].append(row.to_row()["net_rate"])
    table = [("qber", "mean_net_rate", "runs")]
    table += [(f"{q:.4f}", f"{sum(v) / len(v):.4f}", len(v)) for q, v in sorted(by_q.items())]
    print(_table(table))
    print(f"Wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_threshold(args: argparse.Namespace) -> int:
    p_star = one_way_threshold(args.tol)
    print(f"p* = {p_star:.6f}")
    rows = [("p", "rate")] + [(f"{p:.2f}", f"{one_way_rate(p):+.4f}") for p in (0.0, 0.01, 0.05, 0.10, 0.11, 0.15)]
    print(_table(rows))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.file.endswith(".jsonl"):
        transcript = load_transcript(args.file)
        rows = hash_matrix(transcript.hash) if transcript.hash is not None else None
        ops, deps = protocol_operators(transcript, rows)
    else:
        ops, deps = load_operators(args.file), None
    for label, op in zip(ops.labels, ops.ops):
        if css_type(op) == PauliType.MIXED:
            raise ClassificationError(f"Operator {label} ({op.to_string()}) mixes X and Z sites.")
    report = is_symmetric_protocol_valid(ops, deps)
    data = report.to_dict()
    if args.json:
        print(json.dumps(data, indent=2, sort_keys=True))
        return EXIT_OK

    if len(ops) <= 60:
        print(_table([("label", "type", "operator")] + [(o["label"], o["type"], o["operator"]) for o in data["operators"]]))
    else:
        counts: Dict[str, int] = defaultdict(int)
        for o in data["operators"]:
            counts[o["type"]] += 1
        print(_table([("type", "count")] + sorted(counts.items())))
    print(f"anticommuting pairs: {data['edge_count']}")
    nc = data["noncommuting_set"]
    if nc is not None:
        members = nc["members"]
        shown = ", ".join(members[:20]) + (" ..." if len(members) > 20 else "")
        print(f"R = {{{shown}}}")
        print(f"r = {nc['r']} (exact={str(nc['exact']).lower()}, minimal={str(nc['minimal']).lower()})")
    if data["conditional_on_z_only"] is not None:
        print(f"conditional on Z only: {str(data['conditional_on_z_only']).lower()}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    transcript = load_transcript(args.file)
    result = audit(transcript, regenerate_transcript)
    print(f"s = {result.s} ({result.entry_count} entries)")
    print(f"end record consistent: {str(result.end_consistent).lower()}")
    if result.duplicates:
        for index, seqs in result.duplicates.items():
            print(f"duplicate pad index {index}: entries {', '.join(map(str, seqs))}")
    else:
        print("duplicate pad indices: none")
    if result.replay_error:
        print(f"replay: failed ({result.replay_error})")
    elif result.replay_mismatches:
        print(f"replay: {len(result.replay_mismatches)} mismatching entries, first {result.replay_mismatches[0]}")
    else:
        print("replay: identical")
    return EXIT_OK if result.passed else EXIT_AUDIT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synforge", description="QKD post-processing simulator with encrypted Cascade parities"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one session and write its report and transcript.")
    run.add_argument("-c", "--config", type=str, default=None, help="Session config (YAML or JSON).")
    run.add_argument("-o", "--out", type=str, required=True, help="Output directory.")
    run.add_argument("--seed", type=int, default=None, help="Overrides SYNFORGE_SEED and the config seed.")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="Run sessions over a qber grid and write sweep.csv.")
    sweep.add_argument("-c", "--config", type=str, default=None)
    sweep.add_argument("--qber", type=str, required=True, help="LO:HI:STEP")
    sweep.add_argument("--seeds", type=int, required=True, help="Seeds per qber point.")
    sweep.add_argument("-o", "--out", type=str, default=".")
    sweep.add_argument("--workers", type=int, default=4)
    sweep.add_argument("--seed", type=int, default=None, help="First seed of the sweep.")
    sweep.set_defaults(func=cmd_sweep)

    threshold = sub.add_parser("threshold", help="Solve 1 - 2 H2(p) = 0.")
    threshold.add_argument("--tol", type=float, default=1e-6)
    threshold.set_defaults(func=cmd_threshold)

    analyze = sub.add_parser("analyze", help="Commutation analysis of an operator file or a transcript.")
    analyze.add_argument("-f", "--file", type=str, required=True)
    analyze.add_argument("--json", action="store_true", help="Print the analysis as JSON.")
    analyze.set_defaults(func=cmd_analyze)

    audit_p = sub.add_parser("audit", help="Check pad hygiene and replay determinism of a transcript.")
    audit_p.add_argument("-f", "--file", type=str, required=True)
    audit_p.set_defaults(func=cmd_audit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ValueError, ResourceExhausted) as exc:
        # ConfigError, TranscriptFormatError, ClassificationError, parse errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
