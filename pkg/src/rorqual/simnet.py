"""Deterministic discrete-event network simulation.

Events at the same instant fire in priority order (message deliveries,
then deferred protocol steps, then timers) and FIFO within a priority.
The link model knows the real delay bound ``small_delta``; protocol code
only ever sees ``delta``.
"""

from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .messages import Envelope

log = logging.getLogger(__name__)

DELIVER, STEP, TIMER = 0, 1, 2


class Handle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventQueue:
    def __init__(self):
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.processed = 0

    def schedule(self, time: float, prio: int, fn: Callable, *args) -> Handle:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        h = Handle()
        heapq.heappush(self._heap, (time, prio, self._seq, h, fn, args))
        self._seq += 1
        return h

    def __len__(self) -> int:
        return len(self._heap)

    def run(self, until: float = float("inf"), max_events: Optional[int] = None) -> int:
        count = 0
        while self._heap:
            time, _, _, h, fn, args = self._heap[0]
            if time > until:
                break
            heapq.heappop(self._heap)
            if h.cancelled:
                continue
            self.now = time
            fn(*args)
            count += 1
            if max_events is not None and count >= max_events:
                break
        self.processed += count
        return count


@dataclass
class LinkModel:
    gst: float = 0.0
    delta: float = 1.0
    small_delta: float = 1.0
    mode: str = "uniform"  # or "fixed"
    min_fraction: float = 0.1
    pre_gst_max_delay: float = 5.0

    def _post(self, rng: random.Random) -> float:
        if self.mode == "fixed":
            return self.small_delta
        return rng.uniform(self.min_fraction * self.small_delta, self.small_delta)

    def delivery_time(self, now: float, rng: random.Random) -> float:
        if now >= self.gst:
            return now + self._post(rng)
        t = now + rng.uniform(0.0, self.pre_gst_max_delay)
        return min(t, self.gst + self._post(rng))


BEHAVIORS = ("none", "crash", "selective-omission", "delayer", "replayer")


@dataclass(frozen=True)
class AdversarySpec:
    """What the Byzantine peers do. Enclaves of Byzantine peers still run
    the prescribed code; only host-side sending is under adversary control."""

    byzantine: tuple[int, ...] = ()
    behavior: str = "none"
    # correct peers singled out by omission / delay
    victims: tuple[int, ...] = ()
    crash_at: float = 0.0
    extra_delay: float = 0.0
    withhold_self_ack: bool = True
    withhold_shares: bool = False
    restart_times: tuple[float, ...] = ()
    # Byzantine peers stop proposing at this time
    stop_at: Optional[float] = None

    def __post_init__(self):
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"unknown adversary behavior {self.behavior!r}")
        if self.behavior != "none" and not self.byzantine:
            raise ValueError(f"behavior {self.behavior!r} needs at least one Byzantine peer")
        if set(self.victims) & set(self.byzantine):
            raise ValueError("victims must be correct peers")

    def is_byzantine(self, p: int) -> bool:
        return p in self.byzantine

    def crashed(self, p: int, now: float) -> bool:
        return self.behavior == "crash" and p in self.byzantine and now >= self.crash_at

    def _own_content(self, msg: Envelope) -> bool:
        kind = msg.kind
        if kind in ("Vertex", "Relay", "PullVertex"):
            return msg.vertex.source in self.byzantine
        if kind == "Share":
            return msg.share.source in self.byzantine
        if kind == "Vote":
            return msg.source in self.byzantine
        return False

    def filter(self, msg: Envelope, frm: int, to: int, now: float) -> Optional[float]:
        """Extra delay for this copy, or ``None`` to drop it."""
        if frm not in self.byzantine or self.behavior == "none":
            return 0.0
        if self.behavior == "crash":
            return None if now >= self.crash_at else 0.0
        if self.behavior == "delayer":
            if to in self.victims and self._own_content(msg):
                return self.extra_delay
            return 0.0
        if self.behavior != "selective-omission":
            return 0.0
        kind = msg.kind
        if to in self.victims and kind != "Share" and self._own_content(msg):
            return None
        if kind == "Ack" and to == frm and self.withhold_self_ack:
            return None
        if kind == "Share" and self.withhold_shares and self._own_content(msg):
            return None
        return 0.0


def appendix_a_adversary(n: int, f: int, backend: str = "pull") -> AdversarySpec:
    """Worst-case omission schedule against pull broadcast.

    The last ``f`` peers are Byzantine. Their vertices go to ``n - 2f``
    correct peers only and their votes for their own vertices reach only
    those peers; the remaining ``f`` correct peers are the victims.
    """
    if f == 0:
        return AdversarySpec()
    byz = tuple(range(n - f, n))
    victims = tuple(range(n - 2 * f, n - f))
    return AdversarySpec(
        byzantine=byz,
        behavior="selective-omission",
        victims=victims,
        withhold_self_ack=True,
        withhold_shares=True,
    )


@dataclass
class TraceRecord:
    time: float
    event: str  # send / deliver / drop / cancel
    frm: int
    to: int
    kind: str
    size: int
    subject: Optional[tuple[int, int]] = None

    def line(self) -> str:
        subj = "-" if self.subject is None else f"{self.subject[0]}:{self.subject[1]}"
        return f"{self.time:.6f} {self.event} {self.frm} {self.to} {self.kind} {self.size} {subj}"


@dataclass
class _Multicast:
    frm: int
    started: float
    pending: dict[int, Handle] = field(default_factory=dict)
    ids: dict[int, int] = field(default_factory=dict)
    confirmed: set[int] = field(default_factory=set)
    msg: Optional[Envelope] = None
    window_closed: bool = False
    done: bool = False


class Network:
    """Point-to-point links between ``n`` peers with adversary hooks.

    ``multicast`` follows the transport contract: send to everyone, keep
    going for one ``delta`` window, then stop as soon as ``n - f`` peers
    (the sender included) have confirmed receipt. Confirmations are
    transport receipts, free and instantaneous.
    """

    def __init__(self, queue: EventQueue, link: LinkModel, adversary: AdversarySpec,
                 n: int, f: int, seed: int, keep_trace: bool = True):
        self.queue = queue
        self.link = link
        self.adversary = adversary
        self._hostile = adversary.behavior != "none"
        self.n = n
        self.f = f
        self.rng = random.Random(f"net:{seed}")
        self.handlers: dict[int, Callable[[Envelope, int], None]] = {}
        self.trace: list[TraceRecord] = []
        self.keep_trace = keep_trace
        self.bytes_sent = 0
        self.messages_sent = 0
        # bytes per vertex subject; None collects setup and key traffic
        self.bytes_by_subject: dict[Optional[tuple[int, int]], int] = {}
        self.bytes_by_kind: dict[str, int] = {}
        # correct-to-correct copies in flight: id -> (from, to, sent at)
        self.undelivered: dict[int, tuple[int, int, float]] = {}
        self._msg_id = 0
        self.max_correct_latency = 0.0
        self.late_correct_deliveries = 0

    def register(self, peer: int, handler: Callable[[Envelope, int], None]) -> None:
        self.handlers[peer] = handler

    def _record(self, event, frm, to, msg, size=None):
        if self.keep_trace:
            self.trace.append(TraceRecord(
                self.queue.now, event, frm, to, msg.kind,
                msg.size() if size is None else size, msg.subject(),
            ))

    def send(self, msg: Envelope, frm: int, to: int, _mc: Optional[_Multicast] = None) -> Optional[Handle]:
        now = self.queue.now
        extra = self.adversary.filter(msg, frm, to, now) if self._hostile else 0.0
        if extra is None:
            if frm != to:
                self._record("drop", frm, to, msg)
            return None
        if frm == to:
            return self.queue.schedule(now, DELIVER, self._deliver, msg, frm, to, None, now, _mc)
        t = self.link.delivery_time(now, self.rng) + extra
        size = msg.size()
        self.bytes_sent += size
        self.messages_sent += 1
        subj = msg.subject()
        self.bytes_by_subject[subj] = self.bytes_by_subject.get(subj, 0) + size
        self.bytes_by_kind[msg.kind] = self.bytes_by_kind.get(msg.kind, 0) + size
        self._record("send", frm, to, msg, size)
        mid = self._msg_id
        self._msg_id += 1
        correct = not (self.adversary.is_byzantine(frm) or self.adversary.is_byzantine(to))
        if correct:
            self.undelivered[mid] = (frm, to, now)
        h = self.queue.schedule(t, DELIVER, self._deliver, msg, frm, to, mid, now, _mc)
        if _mc is not None:
            _mc.ids[to] = mid
        return h

    def _deliver(self, msg, frm, to, mid, sent_at, mc):
        now = self.queue.now
        if mid is not None:
            self.undelivered.pop(mid, None)
            if frm != to and not (self.adversary.is_byzantine(frm) or self.adversary.is_byzantine(to)):
                if sent_at >= self.link.gst:
                    lat = now - sent_at
                    self.max_correct_latency = max(self.max_correct_latency, lat)
                    if lat > self.link.small_delta + 1e-9:
                        self.late_correct_deliveries += 1
            self._record("deliver", frm, to, msg)
        if mc is not None:
            mc.pending.pop(to, None)
            mc.confirmed.add(to)
            self._maybe_stop(mc)
        handler = self.handlers.get(to)
        if handler is not None:
            handler(msg, frm)

    def multicast(self, msg: Envelope, frm: int, delta: float) -> _Multicast:
        mc = _Multicast(frm, self.queue.now, msg=msg)
        for to in range(self.n):
            h = self.send(msg, frm, to, mc)
            if h is not None and to != frm:
                mc.pending[to] = h
        self.queue.schedule(self.queue.now + delta, TIMER, self._close_window, mc)
        return mc

    def _close_window(self, mc: _Multicast) -> None:
        mc.window_closed = True
        self._maybe_stop(mc)

    def _maybe_stop(self, mc: _Multicast) -> None:
        if mc.done or not mc.window_closed:
            return
        if len(mc.confirmed | {mc.frm}) >= self.n - self.f:
            mc.done = True
            for to, h in sorted(mc.pending.items()):
                if not h.cancelled:
                    h.cancel()
                    # the sender gave up on this copy; it is no longer owed
                    self.undelivered.pop(mc.ids.get(to), None)
                    self._record("cancel", mc.frm, to, mc.msg)
            mc.pending.clear()


def write_trace(records, path) -> None:
    with open(path, "w") as fh:
        fh.write("# time event from to msg_type size_bytes subject\n")
        for r in records:
            fh.write(r.line() + "\n")


class Recorder:
    """Protocol-level events collected during a run for metrics and checks."""

    def __init__(self):
        # (source, round) -> (time, SW public key of the dispersing instance)
        self.dispersals: dict[tuple[int, int], tuple[float, bytes]] = {}
        self.admissions: dict[tuple[int, int], dict[int, float]] = {}
        self.certs: dict[tuple[int, int], dict[int, float]] = {}
        self.round_starts: dict[int, list[tuple[int, float]]] = {}
        self.commits: dict[int, list[tuple[float, tuple[int, int]]]] = {}
        self.deliveries: dict[int, list] = {}
        self.alarms: list[tuple[float, int, str, str]] = []
        # (peer, source, round) -> (vertex digest, key it verified under, time)
        self.stored: dict[tuple[int, int, int], tuple[bytes, bytes, float]] = {}
        self.echoes: dict[tuple[int, int], set[bytes]] = {}

    def dispersal(self, source, round, time, key=b"") -> None:
        self.dispersals.setdefault((source, round), (time, key))

    def admission(self, peer, key, time) -> None:
        self.admissions.setdefault(key, {}).setdefault(peer, time)

    def cert(self, peer, key, time) -> None:
        self.certs.setdefault(key, {}).setdefault(peer, time)

    def round_start(self, peer, round, time) -> None:
        self.round_starts.setdefault(peer, []).append((round, time))

    def commit(self, peer, key, time) -> None:
        self.commits.setdefault(peer, []).append((time, key))

    def delivery(self, peer, d, time) -> None:
        self.deliveries.setdefault(peer, []).append(d)

    def alarm(self, time, peer, kind, detail="") -> None:
        log.debug("alarm t=%.3f peer=%d %s %s", time, peer, kind, detail)
        self.alarms.append((time, peer, kind, detail))

    def store(self, peer, key, vertex_digest, sw_key, time=0.0) -> None:
        self.stored.setdefault((peer, key[0], key[1]), (vertex_digest, sw_key, time))

    def echo(self, peer, owner, public) -> None:
        self.echoes.setdefault((peer, owner), set()).add(public)
