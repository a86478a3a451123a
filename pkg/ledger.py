from dataclasses import asdict, dataclass
from typing import Dict


class ResourceExhausted(RuntimeError):
    """Raised when a pre-shared resource (pad bits, ancilla pairs) runs out."""


@dataclass(frozen=True)
class KeyLedger:
    """Key accounting for one session.

    n: reconciled block length; s: encrypted parities (pad bits sacrificed);
    t: privacy-amplification parities. gross and net are differences and go
    negative when the session costs more secret than it yields.
    """

    n: int = 0
    s: int = 0
    t: int = 0
    raw: int = 0
    pad_consumed: int = 0

    def __post_init__(self) -> None:
        for name in ("n", "s", "t", "raw", "pad_consumed"):
            if getattr(self, name) < 0:
                raise ValueError(f"KeyLedger.{name} must be >= 0, got {getattr(self, name)}.")

    @property
    def gross(self) -> int:
        return self.n - self.t

    @property
    def net(self) -> int:
        return self.n - self.t - self.s

    def add_disclosures(self, s: int, pad_consumed: int) -> "KeyLedger":
        return KeyLedger(
            n=self.n,
            s=self.s + s,
            t=self.t,
            raw=self.raw,
            pad_consumed=self.pad_consumed + pad_consumed,
        )

    def with_hashing(self, t: int) -> "KeyLedger":
        return KeyLedger(n=self.n, s=self.s, t=t, raw=self.raw, pad_consumed=self.pad_consumed)

    def to_dict(self) -> Dict[str, int]:
        data = asdict(self)
        data["gross"] = self.gross
        data["net"] = self.net
        return data
