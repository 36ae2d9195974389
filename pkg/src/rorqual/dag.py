"""Vertices and the local DAG store.

Reachability is answered from per-vertex ancestor bitsets: every admitted
vertex gets a bit index, and its mask is its own bit OR'd with its
parents' masks. Two masks are kept, one over strong edges only and one
over strong and weak edges.
"""

from __future__ import annotations

import functools
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

from .codec import QuorumCert, canonical, digest

Key = tuple[int, int]  # (source, round)


class DagError(Exception):
    pass


class UnknownVertexError(DagError, KeyError):
    pass


class ContainmentError(DagError):
    pass


class EquivocationError(DagError):
    """Two different vertices for one (source, round)."""


@dataclass(frozen=True)
class VertexRef:
    source: int
    round: int
    digest: bytes

    @property
    def key(self) -> Key:
        return (self.source, self.round)


@dataclass(frozen=True)
class Vertex:
    round: int
    source: int
    block: bytes
    strong_edges: tuple[VertexRef, ...] = ()
    weak_edges: tuple[VertexRef, ...] = ()
    # one share-quorum certificate per weak edge, same order
    weak_signatures: tuple[QuorumCert, ...] = ()
    # pull baseline: availability certificate per strong edge, same order
    strong_certs: tuple[QuorumCert, ...] = ()
    delay: int = 0
    # carried for completeness, never consulted
    latency_scores: tuple[int, ...] = ()

    @functools.cached_property
    def digest(self) -> bytes:
        return digest(canonical(self))

    @property
    def key(self) -> Key:
        return (self.source, self.round)

    def ref(self) -> VertexRef:
        return VertexRef(self.source, self.round, self.digest)

    def parents(self) -> tuple[VertexRef, ...]:
        return self.strong_edges + self.weak_edges

    def well_formed(self, n: int, f: int) -> bool:
        if self.round < 0 or not 0 <= self.source < n:
            return False
        if any(e.round != self.round - 1 for e in self.strong_edges):
            return False
        if self.round > 1 and len({e.source for e in self.strong_edges}) < n - f:
            return False
        if any(e.round >= self.round - 1 for e in self.weak_edges):
            return False
        if len(self.weak_signatures) != len(self.weak_edges):
            return False
        keys = [e.key for e in self.parents()]
        return len(keys) == len(set(keys))


def genesis(n: int) -> list[Vertex]:
    return [Vertex(round=0, source=i, block=b"genesis:%d" % i) for i in range(n)]


VertexLike = Union[Vertex, VertexRef, Key]


def _key(v: VertexLike) -> Key:
    if isinstance(v, tuple):
        return v
    return v.key


class DagStore:
    """Admitted vertices of one peer, plus a buffer of vertices whose
    ancestry is incomplete."""

    def __init__(self, n: int):
        self.n = n
        self.rounds: dict[int, dict[int, Vertex]] = defaultdict(dict)
        self.index: dict[Key, Vertex] = {}
        self._bit: dict[Key, int] = {}
        self._keys: list[Key] = []
        self._strong: dict[Key, int] = {}
        self._all: dict[Key, int] = {}
        self._round_mask: dict[int, int] = defaultdict(int)
        self.buffer: dict[Key, Vertex] = {}
        self._waiting: dict[Key, set[Key]] = defaultdict(set)
        self.containment_violations = 0
        self.highest_round = -1

    # -- queries ----------------------------------------------------------

    def __contains__(self, v: VertexLike) -> bool:
        return _key(v) in self.index

    def __len__(self) -> int:
        return len(self.index)

    def get(self, source: int, round: int) -> Vertex | None:
        return self.index.get((source, round))

    def round_vertices(self, r: int) -> list[Vertex]:
        row = self.rounds.get(r, {})
        return [row[s] for s in sorted(row)]

    def count(self, r: int) -> int:
        return len(self.rounds.get(r, ()))

    def vertices(self, include_genesis: bool = False) -> Iterator[Vertex]:
        for k in self._keys:
            if include_genesis or k[1] > 0:
                yield self.index[k]

    def bit(self, v: VertexLike) -> int:
        try:
            return 1 << self._bit[_key(v)]
        except KeyError:
            raise UnknownVertexError(_key(v)) from None

    def ancestors_mask(self, v: VertexLike, strong: bool = False) -> int:
        table = self._strong if strong else self._all
        try:
            return table[_key(v)]
        except KeyError:
            raise UnknownVertexError(_key(v)) from None

    def round_mask(self, r: int) -> int:
        return self._round_mask.get(r, 0)

    def keys_of(self, mask: int) -> list[Key]:
        out = []
        while mask:
            low = mask & -mask
            out.append(self._keys[low.bit_length() - 1])
            mask ^= low
        return out

    def path(self, v: VertexLike, u: VertexLike) -> bool:
        """Is ``u`` reachable from ``v`` over strong and weak edges?"""
        return bool(self.ancestors_mask(v) & self.bit(u))

    def strong_path(self, v: VertexLike, u: VertexLike) -> bool:
        return bool(self.ancestors_mask(v, strong=True) & self.bit(u))

    def read_causal(self, v: VertexLike) -> set[Vertex]:
        """Every admitted round > 0 vertex that happens before ``v``."""
        mask = self.ancestors_mask(v) & ~self.bit(v)
        return {self.index[k] for k in self.keys_of(mask) if k[1] > 0}

    def missing_parents(self, v: Vertex) -> list[VertexRef]:
        return [e for e in v.parents() if e.key not in self.index]

    # -- mutation -----------------------------------------------------------

    def _insert(self, v: Vertex) -> None:
        k = v.key
        held = self.index.get(k)
        if held is not None:
            if held.digest != v.digest:
                raise EquivocationError(k)
            return
        strong = 0
        full = 0
        for e in v.strong_edges:
            p = self.index.get(e.key)
            if p is None or p.digest != e.digest:
                self.containment_violations += 1
                raise ContainmentError(f"{k} missing strong parent {e.key}")
            strong |= self._strong[e.key]
            full |= self._all[e.key]
        for e in v.weak_edges:
            p = self.index.get(e.key)
            if p is None or p.digest != e.digest:
                self.containment_violations += 1
                raise ContainmentError(f"{k} missing weak parent {e.key}")
            full |= self._all[e.key]
        b = len(self._keys)
        self._keys.append(k)
        self._bit[k] = b
        self._strong[k] = strong | (1 << b)
        self._all[k] = full | (1 << b)
        self._round_mask[v.round] |= 1 << b
        self.index[k] = v
        self.rounds[v.round][v.source] = v
        self.highest_round = max(self.highest_round, v.round)

    def add_genesis(self, vertices: Iterable[Vertex]) -> None:
        for v in vertices:
            self._insert(v)

    def offer(self, v: Vertex) -> list[Vertex]:
        """Admit ``v`` if its ancestry is present, else buffer it.

        Returns every vertex admitted as a result, ``v`` and any buffered
        descendants that became complete, in admission order.
        """
        if v.key in self.index:
            if self.index[v.key].digest != v.digest:
                raise EquivocationError(v.key)
            return []
        missing = self.missing_parents(v)
        if missing:
            self.buffer[v.key] = v
            for e in missing:
                self._waiting[e.key].add(v.key)
            return []
        admitted = []
        stack = [v]
        while stack:
            x = stack.pop()
            if x.key in self.index or self.missing_parents(x):
                continue
            self.buffer.pop(x.key, None)
            self._insert(x)
            admitted.append(x)
            for child in sorted(self._waiting.pop(x.key, ())):
                c = self.buffer.get(child)
                if c is not None and not self.missing_parents(c):
                    stack.append(c)
        return admitted

    def export_edges(self) -> str:
        """One edge per line: ``child_src,child_round -> parent_src,parent_round,kind``."""
        lines = []
        for k in self._keys:
            v = self.index[k]
            for e in v.strong_edges:
                lines.append(f"{v.source},{v.round} -> {e.source},{e.round},strong")
            for e in v.weak_edges:
                lines.append(f"{v.source},{v.round} -> {e.source},{e.round},weak")
        return "\n".join(lines) + ("\n" if lines else "")
