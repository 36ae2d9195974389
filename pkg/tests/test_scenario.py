import pytest

from rorqual import metrics
from rorqual.scenario import ConfigError, ScenarioConfig, make_adversary, run
from rorqual.simnet import AdversarySpec


@pytest.mark.parametrize("changes", [
    dict(n=3, f=1),
    dict(small_delta=2.0),
    dict(small_delta=0.0),
    dict(rho=0),
    dict(backend="bracha"),
    dict(parent_policy="greedy"),
    dict(link_mode="poisson"),
    dict(scheme="rsa"),
    dict(adversary=AdversarySpec(byzantine=(2, 3), behavior="crash")),
    dict(adversary=AdversarySpec(byzantine=(4,), behavior="crash")),
    dict(duration=0),
])
def test_invalid_configs_rejected(changes):
    with pytest.raises(ConfigError):
        ScenarioConfig(**changes)


def test_make_adversary_presets():
    assert make_adversary("none", 4, 1) == AdversarySpec()
    assert make_adversary("crash", 7, 2).byzantine == (5, 6)
    assert make_adversary("appendix-a", 7, 2).victims == (3, 4)
    assert make_adversary("delayer", 4, 1).victims == (1, 2)
    assert make_adversary("replayer", 4, 1, restart_times=(3.0, 9.0)).restart_times == (3.0, 9.0)
    assert make_adversary("crash", 4, 0) == AdversarySpec()
    with pytest.raises(ConfigError):
        make_adversary("gremlin", 4, 1)


def test_same_seed_gives_identical_trace():
    cfg = ScenarioConfig(duration=12, drain=5, seed=4)
    a, b = run(cfg), run(cfg)
    assert [r.line() for r in a.net.trace] == [r.line() for r in b.net.trace]
    c = run(cfg.replace(seed=5))
    assert [r.line() for r in a.net.trace] != [r.line() for r in c.net.trace]


def test_fault_free_rorqual_advances_once_per_delta():
    cfg = ScenarioConfig(duration=30, link_mode="fixed")
    res = run(cfg)
    expected = (cfg.duration - cfg.setup_grace * cfg.delta) / cfg.small_delta
    assert min(res.peers[p].round for p in res.correct) >= expected - 1
    assert metrics.check_invariants(res).ok
    assert not res.recorder.alarms


@pytest.mark.parametrize("backend", ["rorqual", "pull"])
def test_crash_keeps_progress(backend):
    cfg = ScenarioConfig(duration=30, backend=backend, adversary=make_adversary("crash", 4, 1, crash_at=3.0))
    res = run(cfg)
    assert min(res.peers[p].round for p in res.correct) >= 10
    assert min(metrics.commit_counts(res).values()) >= 2
    assert metrics.check_invariants(res).ok


def test_alg7_policy_runs_clean():
    res = run(ScenarioConfig(duration=25, parent_policy="alg7"))
    assert min(res.peers[p].round for p in res.correct) >= 10
    assert metrics.check_invariants(res).ok


def test_unattested_enclave_never_gets_a_key():
    res = run(ScenarioConfig(duration=20), unattested=(3,))
    for p in (0, 1, 2):
        assert 3 not in res.peers[p].sw_keys
        assert all(v.source != 3 for v in res.peers[p].dag.vertices() if v.round > 0)
    assert any(kind == "attestation-failed" for _, _, kind, _ in res.recorder.alarms)
    assert min(res.peers[p].round for p in (0, 1, 2)) >= 5


def test_replayed_rounds_are_rejected():
    cfg = ScenarioConfig(duration=25, adversary=make_adversary("replayer", 4, 1, restart_times=(6.0,)))
    res = run(cfg)
    kinds = {kind for _, p, kind, _ in res.recorder.alarms if p in res.correct}
    assert "forged-vertex" in kinds
    for p in res.correct:
        blocks = [v.block for v in res.peers[p].dag.vertices()]
        assert not any(b.endswith(b"!replay") for b in blocks)
    assert metrics.check_invariants(res).ok


def test_pull_good_case_within_two_deltas():
    res = run(ScenarioConfig(duration=20, backend="pull"))
    lat = metrics.payload_latencies(res)
    cert = metrics.cert_latencies(res)
    assert lat and all(x is not None and x <= 2.0 + 1e-9 for x in lat.values())
    assert all(x is not None and x <= 2.0 + 1e-9 for x in cert.values())


def test_omission_raises_ldr_for_the_byzantine_source():
    cfg = ScenarioConfig(duration=30, adversary=make_adversary("appendix-a", 4, 1),
                         link_mode="fixed", leader_wait=False)
    res = run(cfg)
    for p in res.correct:
        assert res.peers[p].ldr[3] >= 20
        assert all(res.peers[p].ldr[j] == 0 for j in res.correct)


def test_ed25519_scheme():
    res = run(ScenarioConfig(duration=8, drain=4, scheme="ed25519"))
    assert min(res.peers[p].round for p in res.correct) >= 4
    assert metrics.check_invariants(res).ok


def test_pre_gst_run_recovers():
    res = run(ScenarioConfig(n=7, f=2, duration=30, gst=8.0, seed=2))
    assert min(res.peers[p].round for p in res.correct) >= 15
    assert metrics.check_invariants(res).ok
