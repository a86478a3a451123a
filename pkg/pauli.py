"""
Symplectic Pauli operators and commutation analysis of symmetric protocols.

A Pauli operator on n qubits is an (x-mask, z-mask) pair; phases are dropped.
Every operator of a symmetric protocol is measured by both parties, so one
PauliOp describes Alice's side and Bob's side alike and "locally commuting"
means commuting as n-qubit operators on one side.
"""

import heapq
import re
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from bitlinalg import BitVec, DimensionError, masked_parity


class ClassificationError(ValueError):
    """Raised when an operator is not of the CSS type an analysis requires."""


class PauliType(str, Enum):
    Z_TYPE = "Z-type"
    X_TYPE = "X-type"
    MIXED = "mixed"
    IDENTITY = "identity"


_SPARSE_RE = re.compile(r"^(?P<kind>[XYZ]):(?P<sites>[0-9,\s]*)/(?P<n>\d+)$")


@dataclass(frozen=True)
class PauliOp:
    x_mask: BitVec
    z_mask: BitVec

    def __post_init__(self) -> None:
        if len(self.x_mask) != len(self.z_mask):
            raise DimensionError(
                f"x-mask has length {len(self.x_mask)} but z-mask has length {len(self.z_mask)}."
            )

    @property
    def n(self) -> int:
        return len(self.x_mask)

    @classmethod
    def from_string(cls, text: str) -> "PauliOp":
        """Parse a dense string over {I,X,Y,Z} ("ZIZ") or the sparse form "Z:0,2/3"."""
        text = text.strip()
        m = _SPARSE_RE.match(text)
        if m:
            n = int(m.group("n"))
            sites = [int(s) for s in m.group("sites").replace(" ", "").split(",") if s]
            kind = m.group("kind")
            x = BitVec.from_indices(sites, n) if kind in ("X", "Y") else BitVec.zeros(n)
            z = BitVec.from_indices(sites, n) if kind in ("Z", "Y") else BitVec.zeros(n)
            return cls(x, z)
        upper = text.upper()
        if not upper or any(ch not in "IXYZ" for ch in upper):
            raise ValueError(f"Not a Pauli string: {text!r}")
        chars = np.frombuffer(upper.encode("ascii"), dtype=np.uint8)
        x = (chars == ord("X")) | (chars == ord("Y"))
        z = (chars == ord("Z")) | (chars == ord("Y"))
        return cls(BitVec.from_bits(x.astype(np.uint8)), BitVec.from_bits(z.astype(np.uint8)))

    @classmethod
    def z_on(cls, sites: Iterable[int], n: int) -> "PauliOp":
        return cls(BitVec.zeros(n), BitVec.from_indices(list(sites), n))

    @classmethod
    def x_on(cls, sites: Iterable[int], n: int) -> "PauliOp":
        return cls(BitVec.from_indices(list(sites), n), BitVec.zeros(n))

    def to_string(self) -> str:
        x = self.x_mask.to_array()
        z = self.z_mask.to_array()
        letters = np.array(["I", "X", "Z", "Y"])
        return "".join(letters[x + 2 * z])

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.x_mask.to_array() | self.z_mask.to_array())

    def describe(self) -> str:
        kind = css_type(self)
        if kind == PauliType.IDENTITY:
            return "I"
        if kind == PauliType.MIXED:
            return self.to_string() if self.n <= 64 else f"mixed{{{_format_sites(self.support())}}}"
        letter = "Z" if kind == PauliType.Z_TYPE else "X"
        return f"{letter}{{{_format_sites(self.support())}}}"


def _format_sites(sites: np.ndarray, limit: int = 12) -> str:
    items = [str(int(s)) for s in sites[:limit]]
    if len(sites) > limit:
        items.append(f"...+{len(sites) - limit}")
    return ",".join(items)


def commutes(p: PauliOp, q: PauliOp) -> bool:
    """True iff the symplectic inner product <p.x, q.z> + <p.z, q.x> vanishes."""
    if p.n != q.n:
        raise DimensionError(f"Operators act on {p.n} and {q.n} qubits.")
    return (masked_parity(p.x_mask, q.z_mask) ^ masked_parity(p.z_mask, q.x_mask)) == 0


def css_type(p: PauliOp) -> PauliType:
    has_x = not p.x_mask.is_zero()
    has_z = not p.z_mask.is_zero()
    if has_x and has_z:
        return PauliType.MIXED
    if has_z:
        return PauliType.Z_TYPE
    if has_x:
        return PauliType.X_TYPE
    return PauliType.IDENTITY


@dataclass(frozen=True)
class StabilizerSet:
    ops: Tuple[PauliOp, ...]
    labels: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.ops:
            n = self.ops[0].n
            for idx, op in enumerate(self.ops):
                if op.n != n:
                    raise DimensionError(f"Operator {idx} acts on {op.n} qubits, expected {n}.")
        labels = tuple(self.labels) or tuple(f"M{i}" for i in range(len(self.ops)))
        if len(labels) != len(self.ops):
            raise ValueError("labels must match ops one to one.")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_strings(cls, texts: Sequence[str]) -> "StabilizerSet":
        return cls(tuple(PauliOp.from_string(t) for t in texts))

    @property
    def n(self) -> int:
        return self.ops[0].n if self.ops else 0

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self) -> Iterator[PauliOp]:
        return iter(self.ops)


def parse_operators(lines: Iterable[str], *, source: str = "<operators>") -> StabilizerSet:
    """Read one operator per line; '#' starts a comment.

    A line may carry a label as `label = OPERATOR`.
    """
    ops: List[PauliOp] = []
    labels: List[str] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        label = f"M{len(ops)}"
        if "=" in line:
            label, line = (part.strip() for part in line.split("=", 1))
        try:
            op = PauliOp.from_string(line)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from exc
        if ops and op.n != ops[0].n:
            raise ValueError(f"{source}:{lineno}: operator acts on {op.n} qubits, expected {ops[0].n}.")
        ops.append(op)
        labels.append(label)
    return StabilizerSet(tuple(ops), tuple(labels))


def load_operators(path: str) -> StabilizerSet:
    with open(path, "r") as f:
        return parse_operators(f, source=path)


def _stack_masks(ops: Sequence[PauliOp]) -> Tuple[np.ndarray, np.ndarray]:
    if not ops:
        return np.zeros((0, 0), dtype=np.float32), np.zeros((0, 0), dtype=np.float32)
    x = np.stack([op.x_mask.to_array() for op in ops]).astype(np.float32)
    z = np.stack([op.z_mask.to_array() for op in ops]).astype(np.float32)
    return x, z


def _symplectic_block(
    xa: np.ndarray, za: np.ndarray, xb: np.ndarray, zb: np.ndarray, *, chunk: int = 1024
) -> np.ndarray:
    # Overlap counts stay below 2**24, so float32 products are exact.
    out = np.zeros((xa.shape[0], xb.shape[0]), dtype=np.uint8)
    for start in range(0, xb.shape[0], chunk):
        stop = start + chunk
        counts = xa @ zb[start:stop].T + za @ xb[start:stop].T
        out[:, start:stop] = np.rint(counts).astype(np.int64) & 1
    return out


def anticommuting_pairs(s: StabilizerSet) -> np.ndarray:
    """Edges (i, j), i < j, of the local commutation graph as an (E, 2) array."""
    ops = list(s.ops)
    empty = np.zeros((0, 2), dtype=np.int64)
    if len(ops) < 2:
        return empty
    types = [css_type(op) for op in ops]
    if PauliType.MIXED in types:
        x, z = _stack_masks(ops)
        table = _symplectic_block(x, z, x, z)
        rows, cols = np.nonzero(np.triu(table, k=1))
        return np.stack([rows, cols], axis=1).astype(np.int64)
    # Same-type pairs always commute; only the Z-vs-X block can hold edges.
    z_idx = np.array([i for i, t in enumerate(types) if t == PauliType.Z_TYPE], dtype=np.int64)
    x_idx = np.array([i for i, t in enumerate(types) if t == PauliType.X_TYPE], dtype=np.int64)
    if not z_idx.size or not x_idx.size:
        return empty
    zz = np.stack([ops[i].z_mask.to_array() for i in z_idx]).astype(np.float32)
    parts = []
    for start in range(0, x_idx.size, 1024):
        chunk = x_idx[start : start + 1024]
        xx = np.stack([ops[i].x_mask.to_array() for i in chunk]).astype(np.float32)
        counts = zz @ xx.T
        zi, xj = np.nonzero(np.rint(counts).astype(np.int64) & 1)
        a, b = z_idx[zi], x_idx[start + xj]
        parts.append(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1))
    edges = np.concatenate(parts) if parts else empty
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


EXACT_SEARCH_LIMIT = 20


@dataclass(frozen=True)
class NoncommutingSet:
    members: Tuple[int, ...]
    feasible: bool
    exact: bool
    minimal: bool

    @property
    def r(self) -> int:
        return len(self.members)


def _require_css(s: StabilizerSet) -> List[PauliType]:
    types = [css_type(op) for op in s.ops]
    for idx, t in enumerate(types):
        if t == PauliType.MIXED:
            raise ClassificationError(
                f"Operator {s.labels[idx]} ({s.ops[idx].describe()}) mixes X and Z sites."
            )
    return types


def find_noncommuting_set(s: StabilizerSet, edges: Optional[np.ndarray] = None) -> NoncommutingSet:
    """Smallest set R of Z-type operators whose deletion leaves the rest locally commuting.

    Exact subset search up to EXACT_SEARCH_LIMIT candidates, greedy max-degree
    deletion beyond. A greedy R is reported minimal only when every member
    anticommutes with an operator that can never be deleted.
    """
    types = _require_css(s)
    if edges is None:
        edges = anticommuting_pairs(s)
    if not len(edges):
        return NoncommutingSet(members=(), feasible=True, exact=True, minimal=True)

    is_candidate = np.array([t == PauliType.Z_TYPE for t in types], dtype=bool)
    cand_i = is_candidate[edges[:, 0]]
    cand_j = is_candidate[edges[:, 1]]
    if np.any(~cand_i & ~cand_j):
        return NoncommutingSet(members=(), feasible=False, exact=True, minimal=False)

    # A candidate adjacent to a non-candidate must be deleted in every valid R.
    mixed_edges = cand_i != cand_j
    forced = set(np.where(cand_i[mixed_edges], edges[mixed_edges, 0], edges[mixed_edges, 1]).tolist())
    candidates = np.unique(edges[is_candidate[edges]])
    both = edges[cand_i & cand_j]

    if candidates.size <= EXACT_SEARCH_LIMIT:
        residual = [(i, j) for i, j in both.tolist() if i not in forced and j not in forced]
        optional = sorted({v for e in residual for v in e})
        for size in range(len(optional) + 1):
            for subset in combinations(optional, size):
                chosen = set(subset)
                if all(i in chosen or j in chosen for i, j in residual):
                    return NoncommutingSet(tuple(sorted(forced | chosen)), True, True, True)

    degree = np.bincount(edges[is_candidate[edges]], minlength=len(types))
    neighbours: Dict[int, List[int]] = {}
    for i, j in both.tolist():
        neighbours.setdefault(i, []).append(j)
        neighbours.setdefault(j, []).append(i)
    heap = [(-int(degree[v]), int(v)) for v in candidates]
    heapq.heapify(heap)
    chosen: set = set()
    while heap:
        neg, v = heapq.heappop(heap)
        if v in chosen or -neg != degree[v]:
            continue
        if degree[v] == 0:
            break
        chosen.add(v)
        for u in neighbours.get(v, ()):
            if u not in chosen:
                degree[u] -= 1
                heapq.heappush(heap, (-int(degree[u]), u))
    return NoncommutingSet(tuple(sorted(chosen)), True, exact=False, minimal=chosen <= forced)


REPORT_EDGE_LIMIT = 200


@dataclass(frozen=True)
class ProtocolReport:
    labels: Tuple[str, ...]
    types: Tuple[PauliType, ...]
    descriptions: Tuple[str, ...]
    css_like: bool
    edges: np.ndarray
    conditional_on_z_only: Optional[bool]
    noncommuting: Optional[NoncommutingSet]

    @property
    def locally_commuting(self) -> bool:
        return not len(self.edges)

    @property
    def pad_bits_required(self) -> Optional[int]:
        if self.noncommuting is None or not self.noncommuting.feasible:
            return None
        return self.noncommuting.r

    def edge_list(self) -> List[Tuple[int, int]]:
        return [tuple(e) for e in self.edges.tolist()]

    def to_dict(self) -> Dict[str, Any]:
        nc = self.noncommuting
        shown = self.edges[:REPORT_EDGE_LIMIT].tolist()
        return {
            "operators": [
                {"label": label, "type": t.value, "operator": desc}
                for label, t, desc in zip(self.labels, self.types, self.descriptions)
            ],
            "css_like": self.css_like,
            "edge_count": int(len(self.edges)),
            "edges": [[self.labels[i], self.labels[j]] for i, j in shown],
            "edges_truncated": len(self.edges) > REPORT_EDGE_LIMIT,
            "locally_commuting": self.locally_commuting,
            "conditional_on_z_only": self.conditional_on_z_only,
            "noncommuting_set": None
            if nc is None
            else {
                "members": [self.labels[i] for i in nc.members],
                "r": nc.r,
                "feasible": nc.feasible,
                "exact": nc.exact,
                "minimal": nc.minimal,
            },
            "pad_bits_required": self.pad_bits_required,
        }


def is_symmetric_protocol_valid(
    s: StabilizerSet, dependencies: Optional[Sequence[Tuple[int, int]]] = None
) -> ProtocolReport:
    """Check the symmetric / CSS-like / locally-commuting structure of a protocol.

    `dependencies` lists (op, depends_on) pairs: the choice of `op` was made
    after seeing the outcome of `depends_on`.
    """
    types = tuple(css_type(op) for op in s.ops)
    css_like = PauliType.MIXED not in types
    edges = anticommuting_pairs(s)
    conditional = None
    if dependencies is not None:
        conditional = all(types[dep] != PauliType.X_TYPE for _, dep in dependencies)
    return ProtocolReport(
        labels=s.labels,
        types=types,
        descriptions=tuple(op.describe() for op in s.ops),
        css_like=css_like,
        edges=edges,
        conditional_on_z_only=conditional,
        noncommuting=find_noncommuting_set(s, edges) if css_like else None,
    )
