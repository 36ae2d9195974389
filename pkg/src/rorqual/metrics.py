"""Metrics and invariant checks computed from a finished run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scenario import RunResult

EPS = 1e-9


def _quantile_time(times: list[float], k: int) -> Optional[float]:
    if len(times) < k:
        return None
    return sorted(times)[k - 1]


def payload_latencies(res: RunResult, quantile: str = "f+1", sources=None) -> dict:
    """Send to admission at the (f+1)-th correct peer, or at every correct
    peer with ``quantile="all"``. ``None`` marks a vertex that never got there.
    Only dispersals at or after GST are measured."""
    cfg = res.cfg
    correct = res.correct
    k = cfg.f + 1 if quantile == "f+1" else len(correct)
    rec = res.recorder
    out = {}
    for key, (sent, _) in sorted(rec.dispersals.items()):
        if sent < cfg.gst - EPS or (sources is not None and key[0] not in sources):
            continue
        adm = rec.admissions.get(key, {})
        t = _quantile_time([adm[p] for p in correct if p in adm], k)
        out[key] = None if t is None else t - sent
    return out


def cert_latencies(res: RunResult) -> dict:
    """Send to the first quorum certificate at a correct peer: the
    availability certificate for pull, ``n - f`` shares for Rorqual."""
    rec = res.recorder
    correct = set(res.correct)
    out = {}
    for key, (sent, _) in sorted(rec.dispersals.items()):
        if sent < res.cfg.gst - EPS:
            continue
        times = [t for p, t in rec.certs.get(key, {}).items() if p in correct]
        out[key] = min(times) - sent if times else None
    return out


def round_durations(res: RunResult) -> dict[int, list[tuple[int, float]]]:
    """Per correct peer, ``(round, time spent in the previous round)``."""
    out = {}
    for p in res.correct:
        starts = res.recorder.round_starts.get(p, [])
        out[p] = [(r1, t1 - t0) for (_, t0), (r1, t1) in zip(starts, starts[1:])]
    return out


def commit_counts(res: RunResult) -> dict[int, int]:
    return {p: len(res.recorder.commits.get(p, [])) for p in res.correct}


@dataclass
class ByteReport:
    total: int
    setup: int
    per_subject: dict
    vertices: int

    @property
    def per_vertex(self) -> float:
        return (self.total - self.setup) / max(1, self.vertices)


def byte_report(res: RunResult) -> ByteReport:
    net = res.net
    setup = net.bytes_by_subject.get(None, 0)
    per_subject = {k: v for k, v in net.bytes_by_subject.items() if k is not None}
    return ByteReport(net.bytes_sent, setup, per_subject, len(res.recorder.dispersals))


def trace_bytes(res: RunResult) -> int:
    return sum(r.size for r in res.net.trace if r.event == "send")


def fit_exponent(ns, values) -> float:
    """Slope of log(values) against log(ns)."""
    slope, _ = np.polyfit(np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(values, dtype=float)), 1)
    return float(slope)


def correct_dag(res: RunResult, p: int) -> set:
    return {(v.key, v.digest) for v in res.peers[p].dag.vertices()}


def settled_round(res: RunResult) -> int:
    """Rounds at or below this one had a chance to be referenced by every
    correct peer's last vertex."""
    return min(res.peers[p].round for p in res.correct) - 2


def dag_differences(res: RunResult) -> list[str]:
    """DAG equality among correct peers.

    Everything in the causal history of a correct peer's own vertices must
    be held by every correct peer, and so must every vertex of a settled
    round. A Byzantine vertex of the last rounds that nobody referenced
    before proposals stopped is the only thing allowed to differ.
    """
    correct = res.correct
    dags = {p: correct_dag(res, p) for p in correct}
    out = []
    cut = settled_round(res)
    for p in correct:
        dag = res.peers[p].dag
        need = set()
        for v in dag.vertices():
            if v.source == p and v.round > 0:
                need.add((v.key, v.digest))
                need |= {(u.key, u.digest) for u in dag.read_causal(v)}
        need |= {x for x in dags[p] if x[0][1] <= cut}
        for q in correct:
            missing = need - dags[q]
            if missing:
                out.append(f"peer {q} lacks {len(missing)} vertices held by {p}, e.g. {min(missing)[0]}")
    return out


def causal_coverage(res: RunResult) -> list[float]:
    """For each correct vertex, the fraction of earlier-round vertices its
    source knew to be disseminated when sending it (admitted and holding a
    quorum certificate for them) that lie in its causal history."""
    rec = res.recorder
    out = []
    for p in res.correct:
        dag = res.peers[p].dag
        done = {}
        for key, adm in rec.admissions.items():
            cert = rec.certs.get(key, {}).get(p)
            if key[1] > 0 and p in adm and cert is not None:
                done[key] = max(adm[p], cert)
        for v in dag.vertices():
            if v.source != p or v.round == 0:
                continue
            sent = rec.dispersals.get(v.key, (None,))[0]
            if sent is None:
                continue
            before = {k for k, t in done.items() if t <= sent + EPS and k[1] < v.round}
            if not before:
                continue
            history = {u.key for u in dag.read_causal(v)}
            out.append(len(before & history) / len(before))
    return out


def chain_quality(res: RunResult) -> list[float]:
    """Correct-sourced fraction of every correct vertex's causal history."""
    byz = set(res.cfg.adversary.byzantine)
    out = []
    for p in res.correct:
        dag = res.peers[p].dag
        for v in dag.vertices():
            if v.source != p or v.round == 0:
                continue
            history = dag.read_causal(v)
            if history:
                out.append(sum(u.source not in byz for u in history) / len(history))
    return out


# punishment needs either a later vertex from the source or 6 delta of
# silence while correct peers keep proposing, so vertices sent this close to
# the end of proposals are not judged
ACCOUNTABILITY_MARGIN = 8.0


def accountability_cases(res: RunResult) -> tuple[int, list[str]]:
    """Byzantine vertices sent after GST that some correct peer had not
    received two deltas later, and the ones whose source escaped a raised
    delay bound at some correct peer."""
    cfg = res.cfg
    rec = res.recorder
    correct = res.correct
    cases = 0
    bad = []
    if cfg.backend != "rorqual":
        return 0, bad
    horizon = cfg.duration - ACCOUNTABILITY_MARGIN * cfg.delta
    for (s, r), (sent, _) in sorted(rec.dispersals.items()):
        if s not in cfg.adversary.byzantine or sent < cfg.gst - EPS or sent > horizon:
            continue
        got = [rec.stored.get((p, s, r)) for p in correct]
        if all(x is not None and x[2] <= sent + 2 * cfg.delta + EPS for x in got):
            continue
        cases += 1
        for p in correct:
            if res.peers[p].ldr[s] < r:
                bad.append(f"peer {p} LDR[{s}]={res.peers[p].ldr[s]} < {r}")
    return cases, bad


@dataclass
class InvariantReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, name: str, detail: str) -> None:
        self.violations.append(f"{name}: {detail}")


def check_invariants(res: RunResult, dag_equality: bool = True) -> InvariantReport:
    cfg = res.cfg
    rec = res.recorder
    correct = res.correct
    rep = InvariantReport()

    # consistency per (verifying key, source, round)
    seen: dict = {}
    for (p, s, r), (d, key, _) in rec.stored.items():
        if p in correct:
            prev = seen.setdefault((key, s, r), d)
            if prev != d:
                rep.add("consistency", f"two vertices for {(s, r)} under one key")
    for t, p, kind, detail in rec.alarms:
        if p in correct and kind in ("consistency", "equivocation", "containment"):
            rep.add(kind, f"peer {p} at {t:.3f}: {detail}")

    if cfg.backend == "rorqual":
        # one echoed key per owner, and a single accepted key everywhere
        for (p, owner), pubs in rec.echoes.items():
            if p in correct and len(pubs) > 1:
                rep.add("one-echo", f"peer {p} echoed {len(pubs)} keys for {owner}")
        for s in range(cfg.n):
            keys = {res.peers[p].sw_keys.get(s) for p in correct} - {None}
            if len(keys) > 1:
                rep.add("key-uniqueness", f"correct peers hold {len(keys)} keys for {s}")
        # vertices signed by a restarted enclave never enter a correct DAG
        for (p, s, r), (_, key, _) in rec.stored.items():
            if p in correct and key != res.peers[p].sw_keys.get(s):
                rep.add("restart", f"peer {p} stored {(s, r)} under a superseded key")

    for p in correct:
        dag = res.peers[p].dag
        if dag.containment_violations:
            rep.add("containment", f"peer {p}: {dag.containment_violations}")
        for v in dag.vertices():
            if dag.missing_parents(v):
                rep.add("containment", f"peer {p}: {v.key} lacks a parent")

    if dag_equality and correct:
        for detail in dag_differences(res):
            rep.add("dag-equality", detail)

    seqs = {p: [(d.round, d.source, d.block_digest) for d in rec.deliveries.get(p, [])] for p in correct}
    for i, a in enumerate(correct):
        for b in correct[i + 1:]:
            x, y = seqs[a], seqs[b]
            m = min(len(x), len(y))
            if x[:m] != y[:m]:
                rep.add("prefix-safety", f"peers {a} and {b} diverge")

    _, bad = accountability_cases(res)
    for b in bad:
        rep.add("accountability", b)

    # copies owed between correct peers are delivered unless the run was cut
    # short while they were in flight
    horizon = res.end_time - cfg.small_delta
    for mid, (frm, to, sent) in res.net.undelivered.items():
        if max(sent, cfg.gst) < horizon - EPS:
            rep.add("eventual-delivery", f"{frm}->{to} sent at {sent:.3f}")
            break
    if res.net.late_correct_deliveries:
        rep.add("post-gst-bound", f"{res.net.late_correct_deliveries} late deliveries")
    return rep


def summary_row(res: RunResult) -> dict:
    """One CSV row of headline metrics."""
    cfg = res.cfg
    lat = [x for x in payload_latencies(res).values() if x is not None]
    lat_all = [x for x in payload_latencies(res, "all").values() if x is not None]
    durs = [d for series in round_durations(res).values() for _, d in series]
    bytes_ = byte_report(res)
    commits = commit_counts(res)
    row = {
        "backend": cfg.backend,
        "n": cfg.n,
        "f": cfg.f,
        "adversary": cfg.adversary.behavior,
        "seed": cfg.seed,
        "vertices": len(res.recorder.dispersals),
        "max_latency": _fmt(max(lat, default=math.nan)),
        "mean_latency": _fmt(sum(lat) / len(lat) if lat else math.nan),
        "max_latency_all": _fmt(max(lat_all, default=math.nan)),
        "max_round": _fmt(max(durs, default=math.nan)),
        "min_commits": min(commits.values(), default=0),
        "bytes_per_vertex": _fmt(bytes_.per_vertex),
        "setup_bytes": bytes_.setup,
    }
    if cfg.backend == "pull":
        certs = [x for x in cert_latencies(res).values() if x is not None]
        row["max_cert_latency"] = _fmt(max(certs, default=math.nan))
    return row


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"
