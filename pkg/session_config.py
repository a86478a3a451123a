import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from bellsim import ChannelError, PauliChannel
from cascade import CascadeConfig
from pauli import PauliOp

SEED_ENV = "SYNFORGE_SEED"

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "session": {"signals": 24000, "test_sample": 1000, "seed": 0},
    "channel": {"qber": 0.03},
    "thresholds": {"max_qber_x": 0.11, "max_qber_z": 0.11, "confidence_delta": 1e-6},
    "cascade": {"passes": 4, "block_size_factor": 0.73, "block_growth": 2},
    "pad": {"bits": None},
    "verification": {"rounds": 50},
    "privacy_amplification": {
        "safety_margin": 32,
        "hash": "auto",
        "dense_limit": 2048,
        "finite_size": True,
        "per_basis": False,
    },
}

_CHANNEL_KEYS = {"pI", "pX", "pY", "pZ", "mixture", "qber"}
_HASH_FAMILIES = ("auto", "dense", "toeplitz")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Thresholds:
    max_qber_x: float = 0.11
    max_qber_z: float = 0.11
    confidence_delta: float = 1e-6


@dataclass(frozen=True)
class PaConfig:
    safety_margin: int = 32
    hash: str = "auto"  # "auto" | "dense" | "toeplitz"
    dense_limit: int = 2048
    # size t from p_X + sampling deviation rather than the point estimate
    finite_size: bool = True
    # charge Z-basis key bits at the X error rate and X-basis key bits at the Z rate
    per_basis: bool = False


@dataclass(frozen=True)
class SessionConfig:
    signals: int
    test_sample: int
    channel: PauliChannel
    thresholds: Thresholds = field(default_factory=Thresholds)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    pad_bits: Optional[int] = None
    verify_rounds: int = 50
    pa: PaConfig = field(default_factory=PaConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 2 * self.test_sample < self.signals:
            raise ConfigError(f"2 * test_sample ({2 * self.test_sample}) must be below signals ({self.signals}).")
        for name in ("max_qber_x", "max_qber_z"):
            value = getattr(self.thresholds, name)
            if not 0.0 < value < 0.5:
                raise ConfigError(f"thresholds.{name} must lie in (0, 0.5), got {value}.")

    def with_seed(self, seed: int) -> "SessionConfig":
        return replace(self, seed=seed)

    def with_channel(self, channel: PauliChannel) -> "SessionConfig":
        return replace(self, channel=channel)

    def to_dict(self) -> Dict[str, Any]:
        """Snapshot in config-file shape; `config_from_dict` reads it back."""
        return {
            "session": {"signals": self.signals, "test_sample": self.test_sample, "seed": self.seed},
            "channel": self.channel.to_dict(),
            "thresholds": asdict(self.thresholds),
            "cascade": asdict(self.cascade),
            "pad": {"bits": self.pad_bits},
            "verification": {"rounds": self.verify_rounds},
            "privacy_amplification": asdict(self.pa),
        }


Marks = Dict[Tuple[str, ...], int]


def _collect_marks(node: yaml.Node, path: Tuple[str, ...], marks: Marks) -> None:
    marks[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            _collect_marks(value_node, path + (str(key_node.value),), marks)
    elif isinstance(node, yaml.SequenceNode):
        for idx, item in enumerate(node.value):
            _collect_marks(item, path + (str(idx),), marks)


def _line(marks: Marks, path: Tuple[str, ...]) -> int:
    while path and path not in marks:
        path = path[:-1]
    return marks.get(path, 1)


def load_config(path: str) -> Tuple[Dict[str, Any], Marks]:
    """Read a JSON or YAML config; returns the raw mapping and key line numbers."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read config ({exc.strerror}).") from exc
    if path.endswith(".json"):
        try:
            json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg}).") from exc
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
        data = loader.construct_document(node) if node is not None else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{path}:{line}: invalid YAML ({getattr(exc, 'problem', exc)}).") from exc
    finally:
        loader.dispose()
    marks: Marks = {}
    if node is not None:
        _collect_marks(node, (), marks)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping of sections.")
    return data, marks


class _Reader:
    def __init__(self, source: str, marks: Marks):
        self.source = source
        self.marks = marks

    def fail(self, path: Tuple[str, ...], message: str) -> ConfigError:
        return ConfigError(f"{self.source}:{_line(self.marks, path)}: {'.'.join(path) or 'config'}: {message}")

    def section(self, raw: Mapping[str, Any], name: str, allowed) -> Dict[str, Any]:
        value = raw.get(name)
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise self.fail((name,), "must be a mapping.")
        unknown = sorted(set(value) - set(allowed))
        if unknown:
            raise self.fail((name, str(unknown[0])), f"unknown key {unknown[0]!r}.")
        return value

    def integer(self, path, value, *, minimum: int = 0) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(path, f"expected an integer, got {value!r}.")
        if value < minimum:
            raise self.fail(path, f"must be >= {minimum}, got {value}.")
        return value

    def number(self, path, value, *, low: float, high: float, open_low: bool = False) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(path, f"expected a number, got {value!r}.")
        value = float(value)
        if value > high or value < low or (open_low and value == low):
            raise self.fail(path, f"{value} is out of range.")
        return value


def _read_channel(reader: _Reader, raw: Dict[str, Any], n_pairs: int) -> PauliChannel:
    keys = set(raw)
    try:
        if "qber" in keys:
            if keys != {"qber"}:
                raise reader.fail(("channel",), "qber cannot be combined with other channel keys.")
            return PauliChannel.symmetric_qber(
                reader.number(("channel", "qber"), raw["qber"], low=0.0, high=2.0 / 3.0)
            )
        if "mixture" in keys:
            if keys != {"mixture"}:
                raise reader.fail(("channel",), "mixture cannot be combined with other channel keys.")
            items = raw["mixture"]
            if not isinstance(items, list) or not items:
                raise reader.fail(("channel", "mixture"), "must be a non-empty list.")
            components = []
            for idx, item in enumerate(items):
                where = ("channel", "mixture", str(idx))
                if not isinstance(item, dict) or set(item) != {"prob", "pauli"}:
                    raise reader.fail(where, "each component needs exactly 'prob' and 'pauli'.")
                try:
                    op = PauliOp.from_string(str(item["pauli"]))
                except ValueError as exc:
                    raise reader.fail(where + ("pauli",), str(exc)) from exc
                components.append((reader.number(where + ("prob",), item["prob"], low=0.0, high=1.0), op))
            channel = PauliChannel.correlated(components)
        else:
            probs = {k: reader.number(("channel", k), raw.get(k, 0.0), low=0.0, high=1.0) for k in ("pX", "pY", "pZ")}
            p_i = raw.get("pI", 1.0 - sum(probs.values()))
            p_i = reader.number(("channel", "pI"), p_i, low=0.0, high=1.0)
            channel = PauliChannel.from_probabilities(p_i, probs["pX"], probs["pY"], probs["pZ"])
        channel.validate(n_pairs)
    except (ChannelError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise reader.fail(("channel",), str(exc)) from exc
    return channel


def config_from_dict(raw: Mapping[str, Any], *, source: str = "<config>", marks: Optional[Marks] = None) -> SessionConfig:
    """Strictly validate a raw mapping; missing keys take the built-in defaults."""
    reader = _Reader(source, marks or {})
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise reader.fail((str(unknown[0]),), f"unknown section {unknown[0]!r}.")

    def merged(name: str) -> Dict[str, Any]:
        return {**DEFAULTS[name], **reader.section(raw, name, DEFAULTS[name])}

    session = merged("session")
    signals = reader.integer(("session", "signals"), session["signals"], minimum=1)
    test_sample = reader.integer(("session", "test_sample"), session["test_sample"], minimum=1)
    seed = reader.integer(("session", "seed"), session["seed"])

    channel_raw = reader.section(raw, "channel", _CHANNEL_KEYS) if "channel" in raw else dict(DEFAULTS["channel"])
    channel = _read_channel(reader, channel_raw, signals)

    th = merged("thresholds")
    thresholds = Thresholds(
        max_qber_x=reader.number(("thresholds", "max_qber_x"), th["max_qber_x"], low=0.0, high=0.5, open_low=True),
        max_qber_z=reader.number(("thresholds", "max_qber_z"), th["max_qber_z"], low=0.0, high=0.5, open_low=True),
        confidence_delta=reader.number(
            ("thresholds", "confidence_delta"), th["confidence_delta"], low=0.0, high=1.0, open_low=True
        ),
    )
    for name in ("max_qber_x", "max_qber_z"):
        if getattr(thresholds, name) >= 0.5:
            raise reader.fail(("thresholds", name), "must be below 0.5.")

    cc = merged("cascade")
    cascade_cfg = CascadeConfig(
        passes=reader.integer(("cascade", "passes"), cc["passes"], minimum=1),
        block_size_factor=reader.number(
            ("cascade", "block_size_factor"), cc["block_size_factor"], low=0.0, high=1e9, open_low=True
        ),
        block_growth=reader.integer(("cascade", "block_growth"), cc["block_growth"], minimum=1),
    )

    pad = merged("pad")
    pad_bits = None if pad["bits"] is None else reader.integer(("pad", "bits"), pad["bits"])
    rounds = reader.integer(("verification", "rounds"), merged("verification")["rounds"])

    pa = merged("privacy_amplification")
    if pa["hash"] not in _HASH_FAMILIES:
        raise reader.fail(("privacy_amplification", "hash"), f"must be one of {', '.join(_HASH_FAMILIES)}.")
    for flag in ("finite_size", "per_basis"):
        if not isinstance(pa[flag], bool):
            raise reader.fail(("privacy_amplification", flag), "expected true or false.")
    pa_cfg = PaConfig(
        safety_margin=reader.integer(("privacy_amplification", "safety_margin"), pa["safety_margin"]),
        hash=pa["hash"],
        dense_limit=reader.integer(("privacy_amplification", "dense_limit"), pa["dense_limit"], minimum=1),
        finite_size=pa["finite_size"],
        per_basis=pa["per_basis"],
    )

    try:
        return SessionConfig(
            signals=signals,
            test_sample=test_sample,
            channel=channel,
            thresholds=thresholds,
            cascade=cascade_cfg,
            pad_bits=pad_bits,
            verify_rounds=rounds,
            pa=pa_cfg,
            seed=seed,
        )
    except ConfigError as exc:
        raise reader.fail(("session",), str(exc)) from exc


def read_session_config(path: str) -> SessionConfig:
    raw, marks = load_config(path)
    return config_from_dict(raw, source=path, marks=marks)


def resolve_seed(config_seed: int, cli_seed: Optional[int] = None, environ: Optional[Mapping[str, str]] = None) -> int:
    """--seed beats SYNFORGE_SEED beats the config file."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ if environ is None else environ
    raw = env.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return config_seed
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer.") from exc
    if value < 0:
        raise ConfigError(f"{SEED_ENV} must be >= 0, got {value}.")
    return value
