"""Bullshark ordering over a local DAG.

Waves are four rounds long. Wave ``w`` has a first steady leader at round
``4w - 3``, a second steady leader at ``4w - 1`` and a fallback leader at
``4w - 3`` picked by a shared coin. Peers are typed per wave as steady or
fallback voters from the edges of their first-round vertex, and commits
need ``2f + 1`` votes from the matching voter type.
"""

from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .codec import digest
from .dag import DagStore, Key, Vertex


def wave_of(r: int) -> int:
    return math.ceil(r / 4)


def first_predefined_leader(w: int, n: int) -> int:
    return (2 * (w - 1)) % n


def second_predefined_leader(w: int, n: int) -> int:
    return (2 * (w - 1) + 1) % n


def choose_leader(w: int, n: int, coin_seed: int = 0) -> int:
    """Shared-coin stand-in: the same value at every peer for a given wave."""
    h = hashlib.sha256(b"coin:%d:%d" % (coin_seed, w)).digest()
    return int.from_bytes(h[:8], "little") % n


@dataclass(frozen=True)
class Delivery:
    peer: int
    seq: int
    round: int
    source: int
    block_digest: bytes


class Ordering:
    def __init__(
        self,
        dag: DagStore,
        n: int,
        f: int,
        peer: int = 0,
        coin_seed: int = 0,
        on_deliver: Optional[Callable[[Delivery, Vertex], None]] = None,
        on_commit: Optional[Callable[[Vertex], None]] = None,
    ):
        self.dag = dag
        self.n = n
        self.f = f
        self.peer = peer
        self.coin_seed = coin_seed
        self.steady_voters: dict[int, set[int]] = defaultdict(set)
        self.steady_voters[1] = set(range(n))
        self.fallback_voters: dict[int, set[int]] = defaultdict(set)
        self.committed_round = 0
        self.delivered: set[Key] = set()
        self.leader_stack: list[Vertex] = []
        self.committed_leaders: list[Key] = []
        self._committed: set[Key] = set()
        self.log: list[Delivery] = []
        self._on_deliver = on_deliver
        self._on_commit = on_commit

    # -- leaders ----------------------------------------------------------

    def get_vertex(self, p: int, r: int) -> Optional[Vertex]:
        if r < 1:
            return None
        return self.dag.get(p, r)

    def first_steady_leader(self, w: int) -> Optional[Vertex]:
        return self.get_vertex(first_predefined_leader(w, self.n), 4 * w - 3)

    def second_steady_leader(self, w: int) -> Optional[Vertex]:
        return self.get_vertex(second_predefined_leader(w, self.n), 4 * w - 1)

    def fallback_leader(self, w: int) -> Optional[Vertex]:
        return self.get_vertex(choose_leader(w, self.n, self.coin_seed), 4 * w - 3)

    def wave_leaders(self, w: int):
        return self.first_steady_leader(w), self.second_steady_leader(w), self.fallback_leader(w)

    # -- round advancement gate ---------------------------------------------

    def wave_ready(self, r: int) -> bool:
        """Whether DAG[r] satisfies the wave condition for leaving round ``r``."""
        if r < 1:
            return True
        w = wave_of(r)
        if r % 4 == 1:
            return self.first_steady_leader(w) is not None
        if r % 4 == 3:
            return self.second_steady_leader(w) is not None
        leader = self.first_steady_leader(w) if r % 4 == 2 else self.second_steady_leader(w)
        if leader is None:
            return False
        voters = self.steady_voters[w]
        good = sum(
            1 for u in self.dag.round_vertices(r)
            if u.source in voters and self.dag.strong_path(u, leader)
        )
        return good >= self.n - self.f

    # -- ordering -----------------------------------------------------------

    def _votes(self, v: Vertex) -> list[Vertex]:
        return [self.dag.index[e.key] for e in v.strong_edges]

    def try_ordering(self, v: Vertex) -> None:
        if v.round < 1:
            return
        w = wave_of(v.round)
        votes = self._votes(v)
        if v.round % 4 == 1:
            self.determine_peer_vote_type(v.source, votes, w)
        elif v.round % 4 == 3:
            self.try_steady_commit(votes, self.first_steady_leader(w), w)

    def determine_peer_vote_type(self, p: int, votes: Iterable[Vertex], w: int) -> None:
        if w <= 1:
            return  # every peer starts as a steady voter
        votes = list(votes)
        vs = self.second_steady_leader(w - 1)
        vf = self.fallback_leader(w - 1)
        if self.try_steady_commit(votes, vs, w - 1) or self.try_fallback_commit(votes, vf, w - 1):
            self.steady_voters[w].add(p)
        else:
            self.fallback_voters[w].add(p)

    def _count(self, votes, leader, voters) -> int:
        return sum(1 for x in votes if x.source in voters and self.dag.strong_path(x, leader))

    def try_steady_commit(self, votes, v: Optional[Vertex], w: int) -> bool:
        if v is None:
            return False
        if self._count(votes, v, self.steady_voters[w]) >= 2 * self.f + 1:
            self.commit_leader(v)
            return True
        return False

    def try_fallback_commit(self, votes, v: Optional[Vertex], w: int) -> bool:
        if v is None:
            return False
        if self._count(votes, v, self.fallback_voters[w]) >= 2 * self.f + 1:
            self.commit_leader(v)
            return True
        return False

    def commit_leader(self, v: Vertex) -> None:
        if v.key in self._committed or v.round <= self.committed_round:
            return
        top = v
        self.leader_stack.append(v)
        r = v.round - 2
        while r > self.committed_round:
            w = wave_of(r)
            ss_potential = [x for x in self.dag.round_vertices(r + 1) if self.dag.strong_path(v, x)]
            fb_votes: list[Vertex] = []
            if r % 4 == 1:
                vs = self.first_steady_leader(w)
                vf = self.fallback_leader(w)
                if v.round != r + 2:
                    fb_potential = [x for x in self.dag.round_vertices(r + 3) if self.dag.strong_path(v, x)]
                    fb_votes = [
                        x for x in fb_potential
                        if vf is not None and x.source in self.fallback_voters[w] and self.dag.strong_path(x, vf)
                    ]
            else:
                vs = self.second_steady_leader(w)
                vf = None
            ss_votes = [
                x for x in ss_potential
                if vs is not None and x.source in self.steady_voters[w] and self.dag.strong_path(x, vs)
            ]
            if len(ss_votes) >= self.f + 1 and len(fb_votes) < self.f + 1:
                self.leader_stack.append(vs)
                v = vs
            if len(ss_votes) < self.f + 1 and len(fb_votes) >= self.f + 1:
                self.leader_stack.append(vf)
                v = vf
            r -= 2
        # the top leader's round; the lowest pushed round would re-walk committed waves
        self.committed_round = max(self.committed_round, top.round)
        self._committed.add(top.key)
        self.order_vertices()

    def order_vertices(self) -> list[Delivery]:
        out = []
        while self.leader_stack:
            v = self.leader_stack.pop()
            if v.key not in self._committed:
                self._committed.add(v.key)
            self.committed_leaders.append(v.key)
            if self._on_commit:
                self._on_commit(v)
            mask = self.dag.ancestors_mask(v)
            fresh = [k for k in self.dag.keys_of(mask) if k[1] > 0 and k not in self.delivered]
            for k in sorted(fresh, key=lambda k: (k[1], k[0])):
                u = self.dag.index[k]
                d = Delivery(self.peer, len(self.log), u.round, u.source, digest(u.block))
                self.log.append(d)
                self.delivered.add(k)
                out.append(d)
                if self._on_deliver:
                    self._on_deliver(d, u)
        return out
