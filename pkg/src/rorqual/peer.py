"""Normal-World Rorqual peer.

Covers key setup with echo quorums, vertex and share handling, DAG
admission, pull recovery of missing vertices, delay accounting through
acks and timeouts, and the category-ordered choice of parents.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from typing import Optional

from . import codec
from .codec import QuorumCert, Share, Signature
from .dag import Key as VKey
from .dag import Vertex
from .enclave import AsyncExit, Enclave, decode_dispersal, vertex_signed_bytes
from .messages import (
    Ack,
    Echo,
    Key,
    KeyReply,
    KeyRequest,
    Relay,
    Request,
    ShareMsg,
    Timeout,
    VertexMsg,
)
from .node import Node
from .simnet import TIMER

log = logging.getLogger(__name__)


class RorqualPeer(Node):
    backend = "rorqual"

    def __init__(self, pid: int, ctx):
        super().__init__(pid, ctx)
        cfg = ctx.cfg
        self.rho = cfg.rho
        self.enclave: Optional[Enclave] = None
        self.sw_keys: dict[int, bytes] = {}
        self.key_certs: dict[int, QuorumCert] = {}
        self.echoed: dict[int, bytes] = {}
        self._echoes: dict[tuple[int, bytes], dict[int, Signature]] = defaultdict(dict)
        self._awaiting_key: dict[int, list] = defaultdict(list)
        self.V: dict[VKey, Vertex] = {}
        self.vertex_sigs: dict[VKey, Signature] = {}
        self.shares: dict[VKey, dict[int, Share]] = defaultdict(dict)
        self._share_digest: dict[VKey, bytes] = {}
        self._relay_sigs: dict[VKey, dict[int, Signature]] = defaultdict(dict)
        self.share_certs: dict[VKey, QuorumCert] = {}
        self.ldr: dict[int, int] = defaultdict(int)
        self._timeout_reports: dict[int, dict[int, int]] = defaultdict(dict)
        self.max_seen: dict[int, int] = defaultdict(int)
        self._relayed: set[VKey] = set()
        self._requested: set[VKey] = set()
        self._key_requested: set[int] = set()
        self._rejected: set[VKey] = set()
        self.acked_rounds: dict[int, int] = {}
        self._own_history: dict[int, Vertex] = {}

    # -- setup ----------------------------------------------------------------

    def boot(self) -> None:
        """Start the enclave and announce its key."""
        self.enclave = Enclave(
            self.id, self.n, self.f, self.delta, self.rng, self.nw_publics, self.scheme,
        )
        self.send_all(self.enclave.announcement())

    def restart_enclave(self) -> None:
        """Adversarial reboot: a fresh enclave with a new key replays old rounds."""
        old_round = self.round
        self.enclave = self.enclave.restart(self.rng)
        self.send_all(self.enclave.announcement())
        self.alarm("enclave-restart", f"instance {self.enclave.instance_id}")
        if self.adversary.behavior == "replayer":
            for r in range(1, old_round + 1):
                orig = self._own_history.get(r)
                if orig is None:
                    continue
                forged = Vertex(r, self.id, orig.block + b"!replay", orig.strong_edges,
                                orig.weak_edges, orig.weak_signatures)
                self._disperse(forged, replay=True)

    def on_Key(self, msg: Key, frm: int) -> None:
        if msg.owner != frm:
            return
        if not self.ctx.attested(frm):
            self.alarm("attestation-failed", str(frm))
            return
        if frm in self.echoed:
            return  # only the first key of each peer is ever echoed
        self.echoed[frm] = msg.public
        self.rec.echo(self.id, frm, msg.public)
        sig = codec.sign(Echo.signed_bytes(frm, msg.public), self.nw_key)
        self.multicast(Echo(frm, msg.public, sig))

    def on_Echo(self, msg: Echo, frm: int) -> None:
        pub = self.nw_publics.get(frm)
        if msg.sig.signer != frm or pub is None:
            return
        if not codec.verify(Echo.signed_bytes(msg.owner, msg.public), msg.sig, pub, self.scheme):
            return
        bucket = self._echoes[(msg.owner, msg.public)]
        bucket[frm] = msg.sig
        if len(bucket) >= self.n - self.f:
            subject = Echo.signed_bytes(msg.owner, msg.public)
            cert = QuorumCert(subject, self.n - self.f, tuple(bucket[k] for k in sorted(bucket)))
            self._accept_key(msg.owner, msg.public, cert)

    def _accept_key(self, owner: int, public: bytes, cert: QuorumCert) -> None:
        held = self.sw_keys.get(owner)
        if held is not None:
            if held != public:
                self.alarm("conflicting-key-quorum", str(owner))
            return
        self.sw_keys[owner] = public
        self.key_certs[owner] = cert
        for msg, frm in self._awaiting_key.pop(owner, []):
            self.receive(msg, frm)

    def _await_key(self, owner: int, msg, frm: int) -> None:
        self._awaiting_key[owner].append((msg, frm))
        if owner not in self._key_requested:
            self._key_requested.add(owner)
            self._key_pull(owner)

    def _key_pull(self, owner: int) -> None:
        if owner in self.sw_keys or self.crashed():
            return
        for j in self.sample_peers(2 * self.f + 1):
            self.send(KeyRequest(owner), j)
        self.at(self.now + self.delta, TIMER, self._key_pull, owner)

    def on_KeyRequest(self, msg: KeyRequest, frm: int) -> None:
        if msg.owner in self.key_certs:
            self.send(KeyReply(msg.owner, self.sw_keys[msg.owner], self.key_certs[msg.owner]), frm)

    def on_KeyReply(self, msg: KeyReply, frm: int) -> None:
        subject = Echo.signed_bytes(msg.owner, msg.public)
        if codec.verify_cert(msg.cert, subject, self.n - self.f, self.nw_publics, self.scheme):
            self._accept_key(msg.owner, msg.public, msg.cert)

    # -- dispersal reception ------------------------------------------------------

    def on_Vertex(self, msg: VertexMsg, frm: int) -> None:
        v, s = msg.vertex, msg.share
        j = v.source
        if frm != j or s.index != self.id or s.source != j or s.round != v.round:
            return
        pub = self.sw_keys.get(j)
        if pub is None:
            self._await_key(j, msg, frm)
            return
        if not codec.verify_on(v, vertex_signed_bytes(v), msg.sig_vertex, pub, self.scheme):
            self.alarm("forged-vertex", f"{v.key}")
            return
        if not codec.verify_on(s, s.own_signed_bytes(), s.sig, pub, self.scheme):
            self.alarm("forged-share", f"{v.key}")
            return
        self.ldr[j] = max(self.ldr[j], v.delay)
        if v.key not in self._relayed:
            self._relayed.add(v.key)
            relay_sig = codec.sign(ShareMsg.signed_bytes(v.digest, j, v.round), self.nw_key)
            self.multicast(ShareMsg(s, v.digest, relay_sig))
            ack_sig = codec.sign(Ack.signed_bytes(j, v.round, s.sig), self.nw_key)
            self.send(Ack(j, v.round, s.sig, ack_sig), j)
        self._store(v, msg.sig_vertex)

    def on_Share(self, msg: ShareMsg, frm: int) -> None:
        s = msg.share
        k = (s.source, s.round)
        if s.index != frm or msg.relay_sig.signer != frm:
            return
        pub = self.sw_keys.get(s.source)
        if pub is None:
            self._await_key(s.source, msg, frm)
            return
        if frm in self.shares.get(k, ()):
            return
        if not codec.verify_on(s, s.own_signed_bytes(), s.sig, pub, self.scheme):
            return
        subject = ShareMsg.signed_bytes(msg.vertex_digest, s.source, s.round)
        if not codec.verify_on(msg, subject, msg.relay_sig, self.nw_publics[frm], self.scheme):
            return
        d = self._share_digest.setdefault(k, msg.vertex_digest)
        if d != msg.vertex_digest:
            self.alarm("share-digest-mismatch", f"{k}")
            return
        held = self.shares[k]
        held[frm] = s
        self._relay_sigs[k][frm] = msg.relay_sig
        if len(held) >= self.n - 2 * self.f and k not in self.V:
            self._reconstruct(k, pub, d)
        if len(held) >= self.n - self.f and k not in self.share_certs:
            sigs = self._relay_sigs[k]
            self.share_certs[k] = QuorumCert(subject, self.n - self.f, tuple(sigs[x] for x in sorted(sigs)))
            self.rec.cert(self.id, k, self.now)
        self.poke()

    def _reconstruct(self, k: VKey, pub: bytes, d: bytes) -> None:
        held = {i: s.data for i, s in self.shares[k].items()}
        try:
            v, sig = decode_dispersal(codec.rs_decode(held, self.n, self.n - 2 * self.f))
        except codec.CodecError as exc:
            self.alarm("decode-integrity", f"{k}: {exc}")
            return
        if v.key != k or v.digest != d or not codec.verify(vertex_signed_bytes(v), sig, pub, self.scheme):
            self.alarm("decode-integrity", f"{k}: decoded vertex does not verify")
            return
        self.ldr[v.source] = max(self.ldr[v.source], v.delay)
        self._store(v, sig)

    def _store(self, v: Vertex, sig: Signature) -> None:
        k = v.key
        held = self.V.get(k)
        if held is not None:
            if held.digest != v.digest:
                self.alarm("consistency", f"two vertices for {k}")
            return
        self.V[k] = v
        self.vertex_sigs[k] = sig
        self.max_seen[v.source] = max(self.max_seen[v.source], v.round)
        self.rec.store(self.id, k, v.digest, self.sw_keys[v.source], self.now)
        self._try_admit(v)

    def _try_admit(self, v: Vertex) -> None:
        if v.key in self._rejected:
            return
        if v.round < 1 or not v.well_formed(self.n, self.f):
            self._rejected.add(v.key)
            self.alarm("malformed-vertex", f"{v.key}")
            return
        for e, cert in zip(v.weak_edges, v.weak_signatures):
            subject = ShareMsg.signed_bytes(e.digest, e.source, e.round)
            if not self.ctx.verify_cert(cert, subject, self.n - self.f):
                self._rejected.add(v.key)
                self.alarm("bad-weak-cert", f"{v.key} -> {e.key}")
                return
        for e in v.parents():
            if e.key not in self.V and e.round > 0:
                self._want(e.key)
        self.admit(v)

    # -- pull recovery ----------------------------------------------------------

    def _want(self, k: VKey) -> None:
        if k in self._requested:
            return
        self._requested.add(k)
        self._pull(k)

    def _pull(self, k: VKey) -> None:
        if k in self.V or self.crashed():
            return
        req = self.enclave.request_missing(k[0], k[1], held=False)
        for j in self.sample_peers(2 * self.f + 1):
            self.send(req, j)
        self.at(self.now + self.delta, TIMER, self._pull, k)

    def on_Request(self, msg: Request, frm: int) -> None:
        k = (msg.source, msg.round)
        v = self.V.get(k)
        if v is not None:
            self.send(Relay(v, self.vertex_sigs[k]), frm)

    def on_Relay(self, msg: Relay, frm: int) -> None:
        v = msg.vertex
        pub = self.sw_keys.get(v.source)
        if pub is None:
            self._await_key(v.source, msg, frm)
            return
        if v.key in self.V:
            return
        if not codec.verify(vertex_signed_bytes(v), msg.sig_vertex, pub, self.scheme):
            self.alarm("forged-relay", f"{v.key}")
            return
        self.ldr[v.source] = max(self.ldr[v.source], v.delay)
        self._store(v, msg.sig_vertex)

    # -- acks and timeouts ------------------------------------------------------

    def on_Ack(self, msg: Ack, frm: int) -> None:
        if msg.source == self.id and self.enclave is not None:
            self.enclave.on_ack(frm, msg)

    def _ack_window_closed(self, enclave: Enclave, r: int) -> None:
        enclave.timer_expire(r, self.now)

    def _own_timeout(self, r: int) -> None:
        if self.crashed():
            return
        for j in range(self.n):
            if j != self.id and self.max_seen[j] < r:
                sig = codec.sign(Timeout.signed_bytes(j, r), self.nw_key)
                self.multicast(Timeout(j, r, sig))

    def on_Timeout(self, msg: Timeout, frm: int) -> None:
        pub = self.nw_publics.get(frm)
        if msg.sig.signer != frm or pub is None:
            return
        if not codec.verify(Timeout.signed_bytes(msg.peer, msg.round), msg.sig, pub, self.scheme):
            return
        reports = self._timeout_reports[msg.peer]
        if reports.get(frm, -1) >= msg.round:
            return
        reports[frm] = msg.round
        if len(reports) >= self.f + 1:
            # highest r reported (at r or above) by f + 1 distinct peers
            r = sorted(reports.values(), reverse=True)[self.f]
            if r > self.ldr[msg.peer]:
                self.ldr[msg.peer] = r
                self.poke()

    # -- parent choice and proposal ---------------------------------------------

    def share_count(self, k: VKey) -> int:
        if k[1] == 0:
            return self.n
        return len(self.shares.get(k, ()))

    def categorize(self, r: int) -> list[list[Vertex]]:
        """Split DAG[r] into categories I-IV, each in admission order."""
        q = self.n - self.f
        cats: list[list[Vertex]] = [[], [], [], []]
        row = sorted(self.dag.round_vertices(r), key=self.dag.bit)
        for v in row:
            parents_ok = all(self.share_count(e.key) >= q for e in v.strong_edges)
            ldr = self.ldr[v.source]
            if self.share_count(v.key) >= q:
                cats[0].append(v)
            elif parents_ok and (ldr == 0 or ldr <= r - self.rho):
                cats[1].append(v)
            elif parents_ok:
                cats[2].append(v)
            else:
                cats[3].append(v)
        return cats

    def choose_round(self) -> Optional[int]:
        """Highest round at or above our last proposal with n - f admitted vertices."""
        for r in range(self.dag.highest_round, self.round - 1, -1):
            if self.dag.count(r) >= self.n - self.f:
                return r
        return None

    def weak_edges_for(self, parents: list[Vertex], new_round: int):
        cover = 0
        for p in parents:
            cover |= self.dag.ancestors_mask(p)
        total = (1 << len(self.dag._keys)) - 1
        exclude = self.dag.round_mask(0)
        for r in range(new_round - 1, self.dag.highest_round + 1):
            exclude |= self.dag.round_mask(r)
        candidates = self.dag.keys_of(total & ~cover & ~exclude)
        edges, certs = [], []
        for k in sorted(candidates, key=lambda k: (-k[1], k[0])):
            u = self.dag.index[k]
            if cover & self.dag.bit(u) or k not in self.share_certs:
                continue
            edges.append(u.ref())
            certs.append(self.share_certs[k])
            cover |= self.dag.ancestors_mask(u)
        return tuple(edges), tuple(certs)

    def try_advance(self) -> None:
        if self.ctx.cfg.parent_policy == "alg7":
            self._advance_certified()
            return
        r = self.choose_round()
        if r is None or not self.round_allowed(r + 1) or not self.wave_gate(r):
            return
        q = self.n - self.f
        cats = self.categorize(r)
        fast_until = None if self.last_sent_at is None else self.last_sent_at + 2 * self.delta
        if fast_until is not None and self.now < fast_until:
            pool = cats[0] + cats[1]
            if len(pool) < q:
                self.poke_at(fast_until)
                return
        else:
            pool = cats[0] + cats[1] + cats[2] + cats[3]
        self._propose(r + 1, self.pick(cats, pool)[:q])

    def pick(self, cats: list[list[Vertex]], pool: list[Vertex]) -> list[Vertex]:
        """Order eligible vertices in two tiers, I+II then III+IV.

        Inside a tier wave preference beats the I/II (or III/IV) split, so
        a leader or leader-voter is not crowded out by an equally safe
        vertex that happens to sit in the earlier category.
        """
        eligible = {v.key for v in pool}
        tiers = []
        for group in ((0, 1), (2, 3)):
            tier = [(self.wave_rank(v), c, self.dag.bit(v), v) for c in group for v in cats[c] if v.key in eligible]
            tiers.extend(t[3] for t in sorted(tier, key=lambda t: t[:3]))
        return tiers

    def _advance_certified(self) -> None:
        """Plain wave-driven advancement: parents are the share-certified vertices of our round."""
        r = self.round
        row = [v for v in self.dag.round_vertices(r) if self.share_count(v.key) >= self.n - self.f]
        if len(row) < self.n - self.f or not self.round_allowed(r + 1) or not self.wave_gate(r):
            return
        self._propose(r + 1, row)

    def _propose(self, new_round: int, parents: list[Vertex]) -> None:
        parents = sorted(parents, key=lambda v: v.source)
        weak, weak_sigs = self.weak_edges_for(parents, new_round)
        v = Vertex(
            round=new_round,
            source=self.id,
            block=self.next_block(new_round),
            strong_edges=tuple(p.ref() for p in parents),
            weak_edges=weak,
            weak_signatures=weak_sigs,
            latency_scores=tuple(self.ldr[j] for j in range(self.n)),
        )
        self._disperse(v)

    def _disperse(self, v: Vertex, replay: bool = False) -> None:
        enclave = self.enclave
        try:
            msgs, deadline = enclave.disperse(v, self.now)
        except AsyncExit as exc:
            self.alarm("async-exit", str(exc))
            return
        signed = msgs[0].vertex
        if not replay:
            self._own_history[v.round] = signed
            self.rec.dispersal(self.id, v.round, self.now, enclave.public)
            self.entered_round(v.round)
            self.at(self.now + 6 * self.delta, TIMER, self._own_timeout, v.round)
        self.at(deadline, TIMER, self._ack_window_closed, enclave, v.round)
        for j, m in enumerate(msgs):
            self.send(m, j)
