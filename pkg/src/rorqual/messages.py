"""Wire envelopes exchanged between peers.

Every envelope is a frozen dataclass with a ``kind`` tag. The encoded
size used for byte accounting is ``len(canonical(envelope))``.
``subject`` names the vertex ``(source, round)`` whose lifecycle the
message belongs to, or ``None`` for setup traffic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import ClassVar, Optional

from .codec import QuorumCert, Share, Signature, canonical
from .dag import Vertex

SCHEMA_VERSION = 1


class Envelope:
    kind: ClassVar[str] = "?"

    def subject(self) -> Optional[tuple[int, int]]:
        return None

    def size(self) -> int:
        cached = self.__dict__.get("_size")
        if cached is None:
            cached = len(canonical(SCHEMA_VERSION, self.kind, self))
            object.__setattr__(self, "_size", cached)
        return cached


# --- Rorqual setup -----------------------------------------------------------


@dataclass(frozen=True)
class Key(Envelope):
    kind: ClassVar[str] = "Key"
    owner: int
    public: bytes


@dataclass(frozen=True)
class Echo(Envelope):
    kind: ClassVar[str] = "Echo"
    owner: int
    public: bytes
    sig: Signature

    @staticmethod
    def signed_bytes(owner: int, public: bytes) -> bytes:
        return canonical("echo", owner, public)


@dataclass(frozen=True)
class KeyRequest(Envelope):
    kind: ClassVar[str] = "KeyRequest"
    owner: int


@dataclass(frozen=True)
class KeyReply(Envelope):
    kind: ClassVar[str] = "KeyReply"
    owner: int
    public: bytes
    cert: QuorumCert


# --- Rorqual dispersal -----------------------------------------------------


@dataclass(frozen=True)
class VertexMsg(Envelope):
    """Per-recipient dispersal message produced inside the source enclave."""

    kind: ClassVar[str] = "Vertex"
    vertex: Vertex
    share: Share
    sig_vertex: Signature

    def subject(self):
        return (self.vertex.source, self.vertex.round)


@dataclass(frozen=True)
class ShareMsg(Envelope):
    kind: ClassVar[str] = "Share"
    share: Share
    vertex_digest: bytes
    relay_sig: Signature

    def subject(self):
        return (self.share.source, self.share.round)

    @staticmethod
    @lru_cache(maxsize=1 << 16)
    def signed_bytes(vertex_digest: bytes, source: int, round: int) -> bytes:
        return canonical("share-cert", vertex_digest, source, round)


@dataclass(frozen=True)
class Ack(Envelope):
    kind: ClassVar[str] = "Ack"
    source: int
    round: int
    share_sig: Signature
    ack_sig: Signature

    def subject(self):
        return (self.source, self.round)

    @staticmethod
    def signed_bytes(source: int, round: int, share_sig: Signature) -> bytes:
        return canonical("ack", source, round, share_sig)


@dataclass(frozen=True)
class Request(Envelope):
    kind: ClassVar[str] = "Request"
    source: int
    round: int

    def subject(self):
        return (self.source, self.round)


@dataclass(frozen=True)
class Relay(Envelope):
    kind: ClassVar[str] = "Relay"
    vertex: Vertex
    sig_vertex: Signature

    def subject(self):
        return (self.vertex.source, self.vertex.round)


@dataclass(frozen=True)
class Timeout(Envelope):
    kind: ClassVar[str] = "Timeout"
    peer: int
    round: int
    sig: Signature

    def subject(self):
        return (self.peer, self.round)

    @staticmethod
    def signed_bytes(peer: int, round: int) -> bytes:
        return canonical("timeout", peer, round)


# --- pull baseline -----------------------------------------------------------


@dataclass(frozen=True)
class PullVertex(Envelope):
    kind: ClassVar[str] = "PullVertex"
    vertex: Vertex
    sig: Signature

    def subject(self):
        return (self.vertex.source, self.vertex.round)


@dataclass(frozen=True)
class Vote(Envelope):
    kind: ClassVar[str] = "Vote"
    vertex_digest: bytes
    voter: int
    source: int
    round: int
    sig: Signature

    def subject(self):
        return (self.source, self.round)

    @staticmethod
    @lru_cache(maxsize=1 << 16)
    def signed_bytes(vertex_digest: bytes, source: int, round: int) -> bytes:
        return canonical("vote", vertex_digest, source, round)


@dataclass(frozen=True)
class PullRequest(Envelope):
    kind: ClassVar[str] = "PullRequest"
    source: int
    round: int
    vertex_digest: bytes
    cert: QuorumCert

    def subject(self):
        return (self.source, self.round)


ALL_KINDS = {
    cls.kind: cls
    for cls in (
        Key, Echo, KeyRequest, KeyReply, VertexMsg, ShareMsg, Ack, Request,
        Relay, Timeout, PullVertex, Vote, PullRequest,
    )
}
