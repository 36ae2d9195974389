"""Scenario configuration and the top-level simulation run."""

from __future__ import annotations

import dataclasses
import logging
import random
from dataclasses import dataclass, field
from typing import Optional

from . import codec
from .simnet import (
    AdversarySpec,
    EventQueue,
    LinkModel,
    Network,
    Recorder,
    TIMER,
    appendix_a_adversary,
)

log = logging.getLogger(__name__)

BACKENDS = ("rorqual", "pull")
POLICIES = ("alg5", "alg7")
ADVERSARIES = ("none", "crash", "appendix-a", "delayer", "replayer")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 4
    f: int = 1
    delta: float = 1.0
    small_delta: float = 1.0
    gst: float = 0.0
    duration: float = 60.0
    backend: str = "rorqual"
    parent_policy: str = "alg5"
    rho: int = 2
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    seed: int = 0
    block_size: int = 64
    link_mode: str = "uniform"
    scheme: str = "mac"
    # Bullshark wait timer, in units of delta
    wave_timeout: float = 4.0
    # hold rounds for wave leaders; off measures the broadcast layer alone
    leader_wait: bool = True
    vote_to_all: bool = True
    # Rorqual peers start proposing this many deltas after boot
    setup_grace: float = 2.0
    pre_gst_max_delay: float = 5.0
    max_rounds: Optional[int] = None
    # extra simulated time after proposals stop, to let messages settle
    drain: float = 30.0
    keep_trace: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.f < 0 or self.n < 3 * self.f + 1:
            raise ConfigError(f"need n >= 3f + 1, got n={self.n}, f={self.f}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if not 0 < self.small_delta <= self.delta:
            raise ConfigError(f"need 0 < small_delta <= delta, got {self.small_delta} > {self.delta}")
        if self.rho < 1:
            raise ConfigError("rho must be at least 1")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.parent_policy not in POLICIES:
            raise ConfigError(f"unknown parent policy {self.parent_policy!r}")
        if self.link_mode not in ("uniform", "fixed"):
            raise ConfigError(f"unknown link mode {self.link_mode!r}")
        if self.scheme not in codec.SCHEMES:
            raise ConfigError(f"unknown signature scheme {self.scheme!r}")
        if len(self.adversary.byzantine) > self.f:
            raise ConfigError("more Byzantine peers than f")
        if any(not 0 <= p < self.n for p in self.adversary.byzantine + self.adversary.victims):
            raise ConfigError("adversary names a peer outside 0..n-1")
        if self.duration <= 0 or self.drain < 0:
            raise ConfigError("duration must be positive and drain non-negative")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def make_adversary(name: str, n: int, f: int, **params) -> AdversarySpec:
    """Named adversary presets used by the CLI and the test-suite."""
    if name == "none" or f == 0:
        return AdversarySpec()
    byz = tuple(range(n - f, n))
    if name == "crash":
        return AdversarySpec(byzantine=byz, behavior="crash", crash_at=params.get("crash_at", 5.0))
    if name == "appendix-a":
        return appendix_a_adversary(n, f)
    if name == "delayer":
        # everything the Byzantine peers send about their own vertices reaches
        # all correct peers but the first one late
        victims = tuple(range(1, n - f))
        return AdversarySpec(
            byzantine=byz, behavior="delayer", victims=victims,
            extra_delay=params.get("extra_delay", 2.5), stop_at=params.get("stop_at"),
        )
    if name == "replayer":
        return AdversarySpec(
            byzantine=byz, behavior="replayer",
            restart_times=tuple(params.get("restart_times", (6.0,))),
        )
    raise ConfigError(f"unknown adversary {name!r}")


class Context:
    """Shared handles passed to every peer of one run."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.adversary = cfg.adversary
        self.queue = EventQueue()
        link = LinkModel(cfg.gst, cfg.delta, cfg.small_delta, cfg.link_mode,
                         pre_gst_max_delay=cfg.pre_gst_max_delay)
        self.net = Network(self.queue, link, cfg.adversary, cfg.n, cfg.f, cfg.seed, cfg.keep_trace)
        self.recorder = Recorder()
        key_rng = random.Random(f"nw-keys:{cfg.seed}")
        self.nw_keys = [codec.keygen(key_rng, i, codec.Domain.NORMAL_WORLD, cfg.scheme) for i in range(cfg.n)]
        self.nw_publics = {k.owner: k.public for k in self.nw_keys}
        self.unattested: set[int] = set()
        self.closed = False
        self._cert_cache: dict = {}

    def verify_cert(self, cert, subject: bytes, threshold: int) -> bool:
        """Certificate check over the normal-world keys, memoized per run.

        Every peer would reach the same verdict, so the result is shared.
        """
        key = (cert, subject, threshold)
        ok = self._cert_cache.get(key)
        if ok is None:
            ok = codec.verify_cert(cert, subject, threshold, self.nw_publics, self.cfg.scheme)
            self._cert_cache[key] = ok
        return ok

    def attested(self, peer: int) -> bool:
        return peer not in self.unattested


@dataclass
class RunResult:
    cfg: ScenarioConfig
    peers: list
    recorder: Recorder
    net: Network
    end_time: float
    events: int

    @property
    def correct(self) -> list[int]:
        return [p.id for p in self.peers if not self.cfg.adversary.is_byzantine(p.id)]


def build(cfg: ScenarioConfig):
    from .peer import RorqualPeer
    from .pull import PullPeer

    ctx = Context(cfg)
    cls = RorqualPeer if cfg.backend == "rorqual" else PullPeer
    peers = [cls(i, ctx) for i in range(cfg.n)]
    for p in peers:
        ctx.net.register(p.id, p.receive)
    return ctx, peers


def run(cfg: ScenarioConfig, unattested: tuple[int, ...] = ()) -> RunResult:
    ctx, peers = build(cfg)
    ctx.unattested.update(unattested)
    q = ctx.queue
    for p in peers:
        q.schedule(0.0, TIMER, p.boot)
    start = cfg.setup_grace * cfg.delta if cfg.backend == "rorqual" else 0.0
    for p in peers:
        q.schedule(start, TIMER, p.start)
    if cfg.backend == "rorqual":
        for t in cfg.adversary.restart_times:
            for b in cfg.adversary.byzantine:
                q.schedule(t, TIMER, peers[b].restart_enclave)

    def close():
        ctx.closed = True

    q.schedule(cfg.duration, TIMER, close)
    events = q.run(until=cfg.duration + cfg.drain)
    log.info("run finished: %d events, t=%.3f", events, q.now)
    return RunResult(cfg, peers, ctx.recorder, ctx.net, q.now, events)
