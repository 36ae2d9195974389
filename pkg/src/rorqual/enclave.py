"""Simulated Secure World of one peer.

The enclave owns the only copy of its signing key, refuses to disperse a
round it has already dispersed, and tracks acknowledgements for every
dispersal it made. If fewer than ``n - f`` peers acknowledge a dispersal
within ``2 * delta`` the enclave records a delay, which it stamps on
every vertex it signs from then on.

The host (Normal World) drives it: it calls :meth:`Enclave.disperse`,
forwards acks, and schedules :meth:`Enclave.timer_expire` at the
deadline returned by ``disperse``. Elapsed time comes from the ``now``
arguments, which the simulation supplies from its clock.
"""

from __future__ import annotations

import dataclasses
import logging
import random
from dataclasses import dataclass, field
from typing import Mapping

from . import codec
from .codec import Domain, Share, Signature
from .dag import Vertex, VertexRef
from .messages import Ack, Key, Request, VertexMsg

log = logging.getLogger(__name__)


class AsyncExit(Exception):
    """The enclave refused to disperse a round it has already passed."""


def vertex_signed_bytes(v: Vertex) -> bytes:
    return codec.canonical("vertex", v)


def encode_dispersal(v: Vertex, sig: Signature) -> bytes:
    return codec.canonical(v, sig)


def decode_dispersal(payload: bytes) -> tuple[Vertex, Signature]:
    v, sig = codec.decanonical(payload, [Vertex, VertexRef])
    return v, sig


@dataclass
class _Dispersal:
    round: int
    deadline: float
    issued: dict[int, Signature]
    acks: set[int] = field(default_factory=set)


class Enclave:
    def __init__(
        self,
        owner: int,
        n: int,
        f: int,
        delta: float,
        rng: random.Random,
        nw_publics: Mapping[int, bytes],
        scheme: str = "mac",
        instance_id: int = 0,
    ):
        self.owner = owner
        self.n = n
        self.f = f
        self.delta = delta
        self.scheme = scheme
        self.instance_id = instance_id
        self._rng = rng
        self._nw_publics = dict(nw_publics)
        self._sk = codec.keygen(rng, owner, Domain.SECURE_WORLD, scheme)
        self.round = 0
        self.delay = 0
        self.alive = True
        self._pending: dict[int, _Dispersal] = {}
        # round -> digest of the one vertex ever signed for it
        self._signed: dict[int, bytes] = {}

    @property
    def public(self) -> bytes:
        return self._sk.public

    @property
    def ack_deadline(self) -> float | None:
        if not self._pending:
            return None
        return min(d.deadline for d in self._pending.values())

    def announcement(self) -> Key:
        return Key(self.owner, self.public)

    def disperse(self, v: Vertex, now: float) -> tuple[list[VertexMsg], float]:
        """Sign and code ``v``; returns one message per peer and the ack deadline."""
        if not self.alive:
            raise AsyncExit("enclave instance has been replaced")
        r = v.round
        if self.round >= r:
            raise AsyncExit(f"round {r} <= last dispersed round {self.round}")
        if v.source != self.owner:
            raise AsyncExit("vertex source is not this enclave's owner")
        self.round = r
        v = dataclasses.replace(v, delay=self.delay)
        if self._signed.setdefault(r, v.digest) != v.digest:
            raise AssertionError(f"enclave {self.owner} signed two vertices for round {r}")
        sig_v = codec.sign(vertex_signed_bytes(v), self._sk)
        coded = codec.rs_encode(encode_dispersal(v, sig_v), self.n, self.n - 2 * self.f)
        messages = []
        issued = {}
        for j in range(self.n):
            sig_j = codec.sign(Share.signed_bytes(coded[j], j, self.owner, r), self._sk)
            issued[j] = sig_j
            messages.append(VertexMsg(v, Share(j, coded[j], self.owner, r, sig_j), sig_v))
        deadline = now + 2 * self.delta
        self._pending[r] = _Dispersal(r, deadline, issued)
        return messages, deadline

    def on_ack(self, sender: int, ack: Ack) -> bool:
        """Count an ack if it matches a dispersal still waiting for acks."""
        d = self._pending.get(ack.round)
        if d is None or ack.source != self.owner:
            return False
        if d.issued.get(sender) != ack.share_sig:
            return False
        pub = self._nw_publics.get(sender)
        msg = Ack.signed_bytes(ack.source, ack.round, ack.share_sig)
        if pub is None or ack.ack_sig.signer != sender or not codec.verify(msg, ack.ack_sig, pub, self.scheme):
            return False
        d.acks.add(sender)
        if len(d.acks) >= self.n - self.f:
            del self._pending[ack.round]
        return True

    def timer_expire(self, round: int, now: float) -> bool:
        """Close the ack window of ``round``; True if the delay was raised."""
        d = self._pending.get(round)
        if d is None or now < d.deadline:
            return False
        del self._pending[round]
        if len(d.acks) < self.n - self.f:
            self.delay = self.round
            log.debug("enclave %d: round %d under-acked, delay=%d", self.owner, round, self.delay)
            return True
        return False

    def request_missing(self, source: int, round: int, held: bool) -> Request | None:
        return None if held else Request(source, round)

    def restart(self, rng: random.Random | None = None) -> "Enclave":
        """Kill this instance and boot a fresh one with a new key."""
        self.alive = False
        self._pending.clear()
        return Enclave(
            self.owner, self.n, self.f, self.delta, rng or self._rng,
            self._nw_publics, self.scheme, self.instance_id + 1,
        )


def enclave_init(owner, n, f, delta, rng, nw_publics, scheme="mac") -> tuple[Enclave, Key]:
    e = Enclave(owner, n, f, delta, rng, nw_publics, scheme)
    return e, e.announcement()
