"""Driver logic shared by both broadcast backends.

A node owns a DAG and a Bullshark ordering instance, coalesces protocol
steps triggered at the same instant, and implements the wave gate and
wait timer used for round advancement.
"""

from __future__ import annotations

import logging
import random
from typing import Optional

from .bullshark import (
    Delivery,
    Ordering,
    choose_leader,
    first_predefined_leader,
    second_predefined_leader,
    wave_of,
)
from .dag import DagStore, EquivocationError, Vertex, genesis
from .messages import Envelope
from .simnet import STEP, TIMER, Handle

log = logging.getLogger(__name__)


class Node:
    backend = "?"

    def __init__(self, pid: int, ctx):
        cfg = ctx.cfg
        self.id = pid
        self.ctx = ctx
        self.n = cfg.n
        self.f = cfg.f
        self.delta = cfg.delta
        self.queue = ctx.queue
        self.net = ctx.net
        self.rec = ctx.recorder
        self.adversary = ctx.adversary
        self.byzantine = self.adversary.is_byzantine(pid)
        self.rng = random.Random(f"peer:{cfg.seed}:{pid}")
        self.nw_key = ctx.nw_keys[pid]
        self.nw_publics = ctx.nw_publics
        self.scheme = cfg.scheme
        self.block_size = cfg.block_size
        self.dag = DagStore(self.n)
        self.dag.add_genesis(genesis(self.n))
        self.ordering = Ordering(self.dag, self.n, self.f, pid, cfg.seed, self._on_deliver, self._on_commit)
        self.round = 0
        self.last_sent_at: Optional[float] = None
        self.started = False
        self.wave_timeout = cfg.wave_timeout * self.delta
        self.wait = True
        self._wave_timer: Optional[Handle] = None
        self._poke_pending = False
        self._retry_at: Optional[float] = None
        self._handlers: dict = {}

    # -- plumbing -----------------------------------------------------------

    @property
    def now(self) -> float:
        return self.queue.now

    def crashed(self) -> bool:
        return self.adversary.crashed(self.id, self.now)

    def proposing(self) -> bool:
        if not self.started or self.ctx.closed or self.crashed():
            return False
        stop = self.adversary.stop_at
        return not (self.byzantine and stop is not None and self.now >= stop)

    def send(self, msg: Envelope, to: int) -> None:
        self.net.send(msg, self.id, to)

    def multicast(self, msg: Envelope) -> None:
        self.net.multicast(msg, self.id, self.delta)

    def send_all(self, msg: Envelope) -> None:
        for j in range(self.n):
            self.send(msg, j)

    def sample_peers(self, k: int) -> list[int]:
        others = [j for j in range(self.n) if j != self.id]
        return self.rng.sample(others, min(k, len(others)))

    def alarm(self, kind: str, detail: str = "") -> None:
        self.rec.alarm(self.now, self.id, kind, detail)

    def at(self, time: float, prio: int, fn, *args) -> Handle:
        return self.queue.schedule(max(time, self.now), prio, fn, *args)

    def receive(self, msg: Envelope, frm: int) -> None:
        if self.crashed():
            return
        handler = self._handlers.get(msg.kind)
        if handler is None:
            handler = self._handlers[msg.kind] = getattr(self, "on_" + msg.kind, None)
        if handler is None:
            self.alarm("unknown-message", msg.kind)
            return
        handler(msg, frm)

    # -- stepping -------------------------------------------------------------

    def start(self) -> None:
        self.started = True
        self._arm_wave_timer()
        self.poke()

    def poke(self) -> None:
        """Run ``try_advance`` once after every delivery at this instant."""
        if not self._poke_pending:
            self._poke_pending = True
            self.queue.schedule(self.now, STEP, self._step)

    def poke_at(self, time: float) -> None:
        if self._retry_at is not None and self._retry_at <= time and self._retry_at >= self.now:
            return
        self._retry_at = time
        self.at(time, TIMER, self._retry)

    def _retry(self) -> None:
        self._retry_at = None
        self.poke()

    def _step(self) -> None:
        self._poke_pending = False
        if self.proposing():
            self.try_advance()

    def round_allowed(self, r: int) -> bool:
        cap = self.ctx.cfg.max_rounds
        return cap is None or r <= cap

    def try_advance(self) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    # -- wave gate --------------------------------------------------------------

    def _arm_wave_timer(self) -> None:
        if self._wave_timer is not None:
            self._wave_timer.cancel()
        self.wait = True
        self._wave_timer = self.at(self.now + self.wave_timeout, TIMER, self._wave_expired)

    def _wave_expired(self) -> None:
        self.wait = False
        self._wave_timer = None
        self.poke()

    def wave_gate(self, r: int) -> bool:
        if not self.ctx.cfg.leader_wait:
            return True
        return not self.wait or self.ordering.wave_ready(r)

    def leader_sources(self, r: int) -> set[int]:
        """Sources whose round-``r`` vertex is a wave leader slot."""
        if r < 1:
            return set()
        w = wave_of(r)
        if r % 4 == 1:
            return {first_predefined_leader(w, self.n), choose_leader(w, self.n, self.ctx.cfg.seed)}
        if r % 4 == 3:
            return {second_predefined_leader(w, self.n)}
        return set()

    def wave_rank(self, v: Vertex) -> int:
        """0 for a wave leader, 1 for a vertex with a strong path to the
        leader its round votes on, 2 otherwise."""
        r = v.round
        if v.source in self.leader_sources(r):
            return 0
        if r >= 2 and r % 2 == 0:
            w = wave_of(r)
            target = self.ordering.first_steady_leader(w) if r % 4 == 2 else self.ordering.second_steady_leader(w)
            voters = self.ordering.steady_voters[w]
            if target is not None and v.source in voters and self.dag.strong_path(v, target):
                return 1
        return 2

    def entered_round(self, r: int) -> None:
        self.round = r
        self.last_sent_at = self.now
        self.rec.round_start(self.id, r, self.now)
        self._arm_wave_timer()

    # -- admission ------------------------------------------------------------

    def admit(self, v: Vertex) -> list[Vertex]:
        try:
            admitted = self.dag.offer(v)
        except EquivocationError:
            self.alarm("equivocation", f"{v.key}")
            return []
        for u in admitted:
            self.rec.admission(self.id, u.key, self.now)
            self.on_admitted(u)
            self.ordering.try_ordering(u)
        if admitted:
            self.poke()
        return admitted

    def on_admitted(self, v: Vertex) -> None:
        pass

    def next_block(self, r: int) -> bytes:
        head = b"%d:%d:" % (self.id, r)
        return head + bytes(max(0, self.block_size - len(head)))

    def _on_deliver(self, d: Delivery, v: Vertex) -> None:
        self.rec.delivery(self.id, d, self.now)

    def _on_commit(self, v: Vertex) -> None:
        self.rec.commit(self.id, v.key, self.now)
