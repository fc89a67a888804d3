"""Workload generators: the three-relation overlap instance and random graphs."""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CSVParseError, ParameterError
from .query import JoinQuery, chain_query
from .storage import Table, _check_range


@dataclass(frozen=True)
class SyntheticParams:
    N: int = 100_000
    r: int = 1_000
    d: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ParameterError(f"N must be positive, got {self.N}")
        if not 0 <= self.r <= self.N:
            raise ParameterError(f"r must lie in [0, N], got r={self.r}, N={self.N}")
        if (self.N + self.r) % 2:
            raise ParameterError(f"N and r must have the same parity (N+r = {self.N + self.r} is odd)")
        if self.d < 1:
            raise ParameterError(f"d must be at least 1, got {self.d}")

    @property
    def expected_cardinality(self) -> int:
        return self.r * self.d ** 3

    def as_dict(self) -> dict:
        return asdict(self)


def _dup(lo: int, hi: int, d: int) -> np.ndarray:
    # value-major: each value's d copies sit next to each other
    return np.repeat(np.arange(lo, hi + 1, dtype=np.int64), d)


def gen_synthetic(params: SyntheticParams) -> tuple[Table, Table, Table]:
    """R = 1..N, S = 1..(N+r)/2, T = (N-r)/2+1..N; every value repeated d times.

    S and T overlap in exactly r values, all of which are in R, so the
    natural join R ⋈ S ⋈ T on ``x`` holds r·d³ tuples.  The layout does not
    depend on ``seed``; it is carried along for provenance only.
    """
    N, r, d = params.N, params.r, params.d
    R = Table("R", {"x": _dup(1, N, d)})
    S = Table("S", {"x": _dup(1, (N + r) // 2, d)})
    T = Table("T", {"x": _dup((N - r) // 2 + 1, N, d)})
    return R, S, T


def synthetic_query() -> JoinQuery:
    return chain_query(("R", "S", "T"), "x")


def synthetic_catalog(params: SyntheticParams) -> dict[str, Table]:
    return {t.name: t for t in gen_synthetic(params)}


def gen_random_graph(nodes: int, edges: int, seed: int = 0, name: str = "edges") -> Table:
    """Uniform sample of ``edges`` distinct directed edges without self-loops."""
    if nodes < 0 or edges < 0:
        raise ParameterError("node and edge counts must be non-negative")
    possible = nodes * (nodes - 1)
    if edges > possible:
        raise ParameterError(f"{edges} edges do not fit a simple directed graph on {nodes} nodes "
                             f"(at most {possible})")
    rng = np.random.default_rng(seed)
    picks = rng.choice(possible, size=edges, replace=False) if edges else np.zeros(0, dtype=np.int64)
    src = picks // max(nodes - 1, 1)
    off = picks % max(nodes - 1, 1)
    # skip the diagonal: offsets at or past src shift up by one
    dst = off + (off >= src)
    return Table(name, {"src": src.astype(np.int64), "dst": dst.astype(np.int64)})


_SPLIT = re.compile(r"[,\s]+")


def load_edge_list(path: str | os.PathLike, name: str = "edges") -> Table:
    """Read ``src dst`` pairs (whitespace or comma separated); ``#`` starts a comment line."""
    src, dst = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f for f in _SPLIT.split(line) if f]
            if len(fields) != 2:
                raise CSVParseError(f"expected two ids, found {len(fields)} fields", lineno, str(path))
            try:
                a, b = (_check_range(int(f)) for f in fields)
            except ValueError:
                raise CSVParseError(f"ids must be integers: {line!r}", lineno, str(path)) from None
            src.append(a)
            dst.append(b)
    return Table(name, {"src": np.asarray(src, dtype=np.int64), "dst": np.asarray(dst, dtype=np.int64)})


def write_edge_list(table: Table, path: str | os.PathLike) -> Path:
    p = Path(path)
    with open(p, "w", encoding="utf-8") as fh:
        fh.write("# src dst\n")
        for a, b in zip(table.column("src").tolist(), table.column("dst").tolist()):
            fh.write(f"{a} {b}\n")
    return p
