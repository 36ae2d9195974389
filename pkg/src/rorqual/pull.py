"""Narwhal-style pull broadcast used as the comparison baseline.

A source signs its vertex and sends it to everyone. Receivers that got it
from the source vote on its digest; ``n - f`` votes form a certificate of
availability. A peer holding a certificate but not the vertex pulls it
from random peers. A vertex enters the DAG once it is both certified and
stored and its parents are in the DAG.
"""

from __future__ import annotations

from collections import defaultdict

from . import codec
from .codec import QuorumCert, Signature
from .dag import Key as VKey
from .dag import Vertex
from .messages import PullRequest, PullVertex, Vote
from .node import Node
from .simnet import TIMER


def pull_signed_bytes(v: Vertex) -> bytes:
    return codec.canonical("pull-vertex", v)


class PullPeer(Node):
    backend = "pull"

    def __init__(self, pid: int, ctx):
        super().__init__(pid, ctx)
        self.vote_to_all = ctx.cfg.vote_to_all
        self.stored: dict[VKey, tuple[Vertex, Signature]] = {}
        self.votes: dict[tuple[VKey, bytes], dict[int, Signature]] = defaultdict(dict)
        self.certs: dict[VKey, QuorumCert] = {}
        self.cert_digest: dict[VKey, bytes] = {}
        self.received: set[VKey] = set()
        self._voted: set[VKey] = set()

    def boot(self) -> None:
        pass

    # -- dispersal --------------------------------------------------------------

    def pull_disperse(self, v: Vertex) -> None:
        sig = codec.sign(pull_signed_bytes(v), self.nw_key)
        self.rec.dispersal(self.id, v.round, self.now, self.nw_publics[self.id])
        self.entered_round(v.round)
        self.send_all(PullVertex(v, sig))

    def on_PullVertex(self, msg: PullVertex, frm: int) -> None:
        v = msg.vertex
        pub = self.nw_publics.get(v.source)
        if pub is None or msg.sig.signer != v.source:
            return
        if not codec.verify(pull_signed_bytes(v), msg.sig, pub, self.scheme):
            self.alarm("forged-vertex", f"{v.key}")
            return
        k = v.key
        held = self.stored.get(k)
        if held is not None and held[0].digest != v.digest:
            self.alarm("consistency", f"two vertices for {k}")
            return
        if held is None:
            self.stored[k] = (v, msg.sig)
            self.rec.store(self.id, k, v.digest, pub, self.now)
        if frm == v.source and k not in self._voted:
            self._voted.add(k)
            subject = Vote.signed_bytes(v.digest, v.source, v.round)
            vote = Vote(v.digest, self.id, v.source, v.round, codec.sign(subject, self.nw_key))
            if self.vote_to_all:
                self.send_all(vote)
            else:
                self.send(vote, v.source)
        # certificates carried for the parents count as received certificates
        for e, cert in zip(v.strong_edges, v.strong_certs):
            self._learn_cert(e.key, e.digest, cert)
        for e, cert in zip(v.weak_edges, v.weak_signatures):
            self._learn_cert(e.key, e.digest, cert)
        self._maybe_receive(k)

    def on_Vote(self, msg: Vote, frm: int) -> None:
        if msg.voter != frm or msg.sig.signer != frm:
            return
        subject = Vote.signed_bytes(msg.vertex_digest, msg.source, msg.round)
        if not codec.verify(subject, msg.sig, self.nw_publics[frm], self.scheme):
            return
        k = (msg.source, msg.round)
        bucket = self.votes[(k, msg.vertex_digest)]
        bucket[frm] = msg.sig
        if len(bucket) >= self.n - self.f and k not in self.certs:
            cert = QuorumCert(subject, self.n - self.f, tuple(bucket[x] for x in sorted(bucket)))
            self._set_cert(k, msg.vertex_digest, cert)

    def _learn_cert(self, k: VKey, d: bytes, cert: QuorumCert) -> None:
        if k in self.certs or k[1] == 0:
            return
        subject = Vote.signed_bytes(d, k[0], k[1])
        if self.ctx.verify_cert(cert, subject, self.n - self.f):
            self._set_cert(k, d, cert)

    def _set_cert(self, k: VKey, d: bytes, cert: QuorumCert) -> None:
        self.certs[k] = cert
        self.cert_digest[k] = d
        self.rec.cert(self.id, k, self.now)
        held = self.stored.get(k)
        if held is not None and held[0].digest != d:
            self.alarm("consistency", f"stored vertex for {k} does not match its certificate")
            return
        if held is None:
            self._pull(k)
        self._maybe_receive(k)

    def _pull(self, k: VKey) -> None:
        if k in self.stored or self.crashed():
            return
        req = PullRequest(k[0], k[1], self.cert_digest[k], self.certs[k])
        for j in self.sample_peers(2 * self.f + 1):
            self.send(req, j)
        self.at(self.now + self.delta, TIMER, self._pull, k)

    def on_PullRequest(self, msg: PullRequest, frm: int) -> None:
        k = (msg.source, msg.round)
        held = self.stored.get(k)
        if held is None or held[0].digest != msg.vertex_digest:
            return
        subject = Vote.signed_bytes(msg.vertex_digest, msg.source, msg.round)
        if self.ctx.verify_cert(msg.cert, subject, self.n - self.f):
            self.send(PullVertex(*held), frm)

    def _maybe_receive(self, k: VKey) -> None:
        if k in self.received or k not in self.certs or k not in self.stored:
            return
        v = self.stored[k][0]
        if v.digest != self.cert_digest[k]:
            return
        self.received.add(k)
        self.admit(v)

    # -- round advancement ---------------------------------------------------------

    def try_advance(self) -> None:
        r = self.round
        row = self.dag.round_vertices(r)
        if len(row) < self.n - self.f or not self.wave_gate(r):
            return
        new_round = r + 1
        if not self.round_allowed(new_round):
            return
        certs = tuple(self.certs.get(p.key) for p in row) if r > 0 else ()
        weak = self._weak_edges(row, new_round)
        v = Vertex(
            round=new_round,
            source=self.id,
            block=self.next_block(new_round),
            strong_edges=tuple(p.ref() for p in row),
            weak_edges=weak,
            weak_signatures=tuple(self.certs[e.key] for e in weak),
            strong_certs=certs,
        )
        self.pull_disperse(v)

    def _weak_edges(self, parents, new_round):
        cover = 0
        for p in parents:
            cover |= self.dag.ancestors_mask(p)
        total = (1 << len(self.dag._keys)) - 1
        exclude = self.dag.round_mask(0)
        for r in range(new_round - 1, self.dag.highest_round + 1):
            exclude |= self.dag.round_mask(r)
        edges = []
        for k in sorted(self.dag.keys_of(total & ~cover & ~exclude), key=lambda k: (-k[1], k[0])):
            u = self.dag.index[k]
            if cover & self.dag.bit(u):
                continue
            edges.append(u.ref())
            cover |= self.dag.ancestors_mask(u)
        return tuple(edges)
