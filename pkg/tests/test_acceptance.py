"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed at the end of the pytest run (see ``conftest.py``) and
also when this file is executed directly.
"""

import itertools
import random
import sys
import time

import pytest

from rorqual import codec, metrics
from rorqual.scenario import ScenarioConfig, make_adversary, run

REPORT: dict[int, str] = {}
EPS = 1e-9
TICK = 1e-6


def record(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT[num] = line
    print(line)


def max_f(n: int) -> int:
    return (n - 1) // 3


def good_case(n: int, backend: str, rounds: int = 50) -> ScenarioConfig:
    # pull rounds take two message delays
    per_round = 1 if backend == "rorqual" else 2
    return ScenarioConfig(
        n=n, f=max_f(n), backend=backend, link_mode="fixed", max_rounds=rounds,
        duration=per_round * rounds + 3, drain=5, keep_trace=False,
    )


def _structural(res) -> list[str]:
    """DAG equality and containment violations of one run."""
    bad = metrics.dag_differences(res)
    for p in res.correct:
        if res.peers[p].dag.containment_violations:
            bad.append(f"peer {p} containment")
    return bad


# ---------------------------------------------------------------------------


def test_c01_rorqual_good_case_latency():
    worst, slowest, total, count = 0.0, 0.0, 0.0, 0
    for n in (4, 7, 10):
        t0 = time.perf_counter()
        res = run(good_case(n, "rorqual"))
        dt = time.perf_counter() - t0
        slowest, total = max(slowest, dt), total + dt
        lat = metrics.payload_latencies(res)
        assert min(res.peers[p].round for p in res.correct) == 50
        assert all(x is not None for x in lat.values())
        worst = max(worst, max(lat.values()))
        count += len(lat)
    ok = worst <= 1.0 and slowest < 5.0
    record(1, ok, f"max payload latency {worst:.6f} over {count} vertices (bound 1.0); "
                  f"slowest run {slowest:.2f}s, all three {total:.2f}s (bound 5s per run)")
    assert ok


def test_c02_pull_good_case():
    worst_lat, worst_cert, count = 0.0, 0.0, 0
    for n in (4, 7, 10):
        res = run(good_case(n, "pull"))
        lat = metrics.payload_latencies(res)
        cert = metrics.cert_latencies(res)
        assert min(res.peers[p].round for p in res.correct) == 50
        assert all(x is not None for x in lat.values()) and all(x is not None for x in cert.values())
        worst_lat = max(worst_lat, max(lat.values()))
        worst_cert = max(worst_cert, max(cert.values()))
        count += len(lat)
    ok = worst_lat <= 2.0 + EPS and worst_cert <= 2.0 + EPS
    record(2, ok, f"max payload {worst_lat:.6f}, max certificate {worst_cert:.6f} over {count} vertices (bound 2δ)")
    assert ok


def test_c03_pull_bad_case():
    cfg = ScenarioConfig(backend="pull", adversary=make_adversary("appendix-a", 4, 1), link_mode="fixed",
                         leader_wait=False, duration=60, drain=20, keep_trace=False)
    res = run(cfg)
    byz = set(cfg.adversary.byzantine)
    # latency until every correct peer holds the vertex; the victims are the last to get it
    lat = metrics.payload_latencies(res, "all", sources=byz)
    horizon = cfg.duration - 6 * cfg.delta
    per_round = {}
    for (s, r), x in lat.items():
        if res.recorder.dispersals[(s, r)][0] <= horizon:
            per_round.setdefault(r, []).append(x)
    hit = [r for r, xs in per_round.items() if any(x is not None and 4.0 - EPS <= x <= 5.0 + EPS for x in xs)]
    observed = [x for xs in per_round.values() for x in xs if x is not None]
    top = max(observed)
    ok = bool(per_round) and len(hit) == len(per_round) and abs(top - 5.0) <= TICK
    record(3, ok, f"{len(hit)}/{len(per_round)} adversarial rounds with a vertex in [4Δ, 5Δ]; max {top:.6f}")
    assert ok


def test_c04_graceful_degradation():
    cfg = ScenarioConfig(adversary=make_adversary("appendix-a", 4, 1), link_mode="fixed", leader_wait=False,
                         max_rounds=200, duration=205, drain=5, keep_trace=False)
    res = run(cfg)
    durs = metrics.round_durations(res)
    last_slow = max((r for series in durs.values() for r, d in series if d > cfg.delta + EPS), default=0)
    reached = min(res.peers[p].round for p in res.correct)
    ldr = min(res.peers[p].ldr[3] for p in res.correct)
    ok = reached == 200 and last_slow <= 20
    record(4, ok, f"last round longer than Δ: {last_slow} (prefix bound 20); reached {reached}; "
                  f"final LDR of the Byzantine source {ldr}")
    assert ok


def test_c05_accountability():
    cases, bad = 0, []
    for seed in range(20):
        adv = make_adversary("delayer", 4, 1, stop_at=20.0 + seed % 7)
        res = run(ScenarioConfig(seed=seed, adversary=adv, duration=40, drain=15, keep_trace=False))
        c, b = metrics.accountability_cases(res)
        cases += c
        bad += [f"seed {seed}: {x}" for x in b]
    ok = cases > 0 and not bad
    record(5, ok, f"{cases} injected late vertices over 20 seeds, {len(bad)} peer/vertex pairs with LDR below the round")
    assert ok


# ---------------------------------------------------------------------------


ADVERSARIES = ("none", "crash", "appendix-a", "delayer", "replayer")


def random_schedule(i: int) -> ScenarioConfig:
    rng = random.Random(f"schedule:{i}")
    name = ADVERSARIES[i % len(ADVERSARIES)]
    params = {}
    if name == "replayer":
        params["restart_times"] = tuple(sorted(rng.uniform(3, 8) for _ in range(rng.randint(1, 2))))
    elif name == "crash":
        params["crash_at"] = rng.uniform(0, 8)
    elif name == "delayer":
        params["extra_delay"] = rng.uniform(0.5, 4)
    return ScenarioConfig(
        seed=i, duration=10, drain=4, keep_trace=False,
        gst=rng.choice((0.0, 0.0, 4.0)), link_mode=rng.choice(("uniform", "fixed")),
        adversary=make_adversary(name, 4, 1, **params),
    )


@pytest.fixture(scope="module")
def schedules():
    out = []
    for i in range(500):
        cfg = random_schedule(i)
        res = run(cfg)
        rep = metrics.check_invariants(res)
        forged = sum(1 for _, p, kind, _ in res.recorder.alarms if p in res.correct and kind == "forged-vertex")
        replayed = sum(
            v.block.endswith(b"!replay") for p in res.correct for v in res.peers[p].dag.vertices()
        )
        out.append(dict(cfg=cfg, violations=rep.violations, forged=forged, replayed=replayed,
                        structural=_structural(res)))
    return out


def test_c06_consistency_suite(schedules):
    conflicts = sum(1 for s in schedules for v in s["violations"] if v.startswith(("consistency", "equivocation")))
    stale = sum(1 for s in schedules for v in s["violations"] if v.startswith(("restart", "key-uniqueness", "one-echo")))
    replays = [s for s in schedules if s["cfg"].adversary.behavior == "replayer"]
    rejected = sum(s["forged"] for s in replays)
    admitted = sum(s["replayed"] for s in schedules)
    ok = conflicts == 0 and stale == 0 and admitted == 0 and rejected > 0
    record(6, ok, f"{len(schedules)} schedules ({len(replays)} with restarts): {conflicts} conflicting vertices, "
                  f"{rejected} replayed vertices rejected, {admitted} admitted, {stale} stale-key acceptances")
    assert ok


# ---------------------------------------------------------------------------


def mixed_config(seed: int) -> ScenarioConfig:
    rng = random.Random(f"mixed:{seed}")
    backend = rng.choice(("rorqual", "pull"))
    names = ADVERSARIES if backend == "rorqual" else ADVERSARIES[:-1]
    n = rng.choice((4, 4, 7))
    return ScenarioConfig(
        n=n, f=max_f(n), seed=seed, backend=backend, duration=15, drain=6, keep_trace=False,
        gst=rng.choice((0.0, 5.0)), adversary=make_adversary(rng.choice(names), n, max_f(n)),
    )


@pytest.fixture(scope="module")
def mixed_runs():
    out = []
    for seed in range(200):
        cfg = mixed_config(seed)
        res = run(cfg)
        out.append(dict(cfg=cfg, violations=metrics.check_invariants(res).violations,
                        structural=_structural(res)))
    return out


def test_c08_bullshark_safety_and_liveness(mixed_runs):
    unsafe = [r["cfg"].seed for r in mixed_runs if any(v.startswith("prefix-safety") for v in r["violations"])]
    fewest = None
    for seed, backend, gst in itertools.product(range(3), ("rorqual", "pull"), (0.0, 20.0)):
        cfg = ScenarioConfig(seed=seed, backend=backend, gst=gst, duration=100, drain=0, keep_trace=False)
        res = run(cfg)
        for p in res.correct:
            c = sum(1 for t, _ in res.recorder.commits.get(p, []) if t <= 100.0)
            fewest = c if fewest is None else min(fewest, c)
    ok = not unsafe and fewest >= 10
    record(8, ok, f"{len(mixed_runs)} mixed runs, {len(unsafe)} prefix conflicts; "
                  f"fewest leaders committed by t=100 in fault-free runs: {fewest}")
    assert ok


def test_c07_dag_equality_and_containment(schedules, mixed_runs):
    extra = []
    for seed, name, backend, gst in itertools.product(
        range(2), ADVERSARIES, ("rorqual", "pull"), (0.0, 6.0)
    ):
        if backend == "pull" and name == "replayer":
            continue
        for n in (4, 7):
            cfg = ScenarioConfig(n=n, f=max_f(n), seed=seed, backend=backend, gst=gst, duration=20,
                                 drain=10, keep_trace=False, adversary=make_adversary(name, n, max_f(n)))
            extra.append(_structural(run(cfg)))
    all_runs = [s["structural"] for s in schedules] + [r["structural"] for r in mixed_runs] + extra
    bad = [x for run_bad in all_runs for x in run_bad]
    ok = not bad
    record(7, ok, f"{len(all_runs)} runs checked, {len(bad)} DAG-equality or containment violations"
                  + (f" (first: {bad[0]})" if bad else ""))
    assert ok


# ---------------------------------------------------------------------------


def test_c09_communication_scaling():
    ns = (4, 7, 10, 13, 16)
    per_vertex = []
    for n in ns:
        res = run(ScenarioConfig(n=n, f=max_f(n), max_rounds=8, duration=12, drain=5, keep_trace=False))
        rep = metrics.byte_report(res)
        assert rep.setup + sum(rep.per_subject.values()) == res.net.bytes_sent
        per_vertex.append(rep.per_vertex)
    exp = metrics.fit_exponent(ns, per_vertex)
    ok = exp <= 2.3
    record(9, ok, f"bytes-per-vertex log-log slope {exp:.3f} over n={list(ns)} (bound 2.3); "
                  + ", ".join(f"n={n}: {b:.0f}B" for n, b in zip(ns, per_vertex)))
    assert ok


def test_c10_codec_oracle():
    rng = random.Random(10)
    exhaustive = 0
    for n in range(1, 8):
        for k in range(1, n + 1):
            payload = rng.randbytes(rng.randint(0, 40))
            shares = codec.rs_encode(payload, n, k)
            for subset in itertools.combinations(range(n), k):
                assert codec.rs_decode({i: shares[i] for i in subset}, n, k) == payload
                exhaustive += 1
    randomized = 0
    for _ in range(400):
        n = rng.randint(8, 31)
        k = rng.randint(1, n)
        payload = rng.randbytes(rng.randint(0, 300))
        shares = codec.rs_encode(payload, n, k)
        subset = rng.sample(range(n), k)
        assert codec.rs_decode({i: shares[i] for i in subset}, n, k) == payload
        randomized += 1
    record(10, True, f"{exhaustive} exhaustive subsets for n <= 7 and {randomized} random trials for n <= 31 decode exactly")


def test_c11_causality_and_chain_quality():
    worst_cov, worst_cq = [], []
    for n in (4, 7):
        f = max_f(n)
        for seed in range(3):
            res = run(ScenarioConfig(n=n, f=f, seed=seed, duration=25, drain=8, keep_trace=False))
            worst_cov.append((min(metrics.causal_coverage(res)), (n - f) / n))
            for name in ("crash", "appendix-a", "delayer"):
                res = run(ScenarioConfig(n=n, f=f, seed=seed, duration=25, drain=8, keep_trace=False,
                                         adversary=make_adversary(name, n, f)))
                worst_cq.append((min(metrics.chain_quality(res)), (n - 2 * f) / (n - f)))
    cov_ok = all(x >= bound - EPS for x, bound in worst_cov)
    cq_ok = all(x >= bound - EPS for x, bound in worst_cq)
    ok = cov_ok and cq_ok
    record(11, ok, f"min causal coverage {min(x for x, _ in worst_cov):.3f} (bound 0.750 at n=4, 0.714 at n=7); "
                   f"min chain quality {min(x for x, _ in worst_cq):.3f} (bound 0.500)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
