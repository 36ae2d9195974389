import random
from dataclasses import dataclass
from typing import ClassVar

import pytest

from rorqual.messages import Envelope
from rorqual.simnet import (
    DELIVER,
    STEP,
    TIMER,
    AdversarySpec,
    EventQueue,
    LinkModel,
    Network,
    appendix_a_adversary,
)


@dataclass(frozen=True)
class Ping(Envelope):
    kind: ClassVar[str] = "Ping"
    body: bytes = b"x"


def test_queue_orders_by_time_then_priority_then_fifo():
    q = EventQueue()
    seen = []
    q.schedule(1.0, TIMER, seen.append, "timer")
    q.schedule(1.0, DELIVER, seen.append, "d1")
    q.schedule(1.0, STEP, seen.append, "step")
    q.schedule(1.0, DELIVER, seen.append, "d2")
    q.schedule(0.5, TIMER, seen.append, "early")
    q.run()
    assert seen == ["early", "d1", "d2", "step", "timer"]
    assert q.now == 1.0


def test_queue_rejects_past_and_honours_cancel_and_until():
    q = EventQueue()
    seen = []
    h = q.schedule(1.0, TIMER, seen.append, "cancelled")
    q.schedule(2.0, TIMER, seen.append, "late")
    h.cancel()
    q.run(until=1.5)
    assert seen == []
    q.run()
    assert seen == ["late"]
    with pytest.raises(ValueError):
        q.schedule(1.0, TIMER, seen.append, "past")


@pytest.mark.parametrize("mode", ["uniform", "fixed"])
def test_link_post_gst_bound(mode):
    link = LinkModel(gst=0.0, delta=2.0, small_delta=1.0, mode=mode)
    rng = random.Random(1)
    for _ in range(1000):
        d = link.delivery_time(3.0, rng) - 3.0
        assert 0 < d <= 1.0
    if mode == "fixed":
        assert link.delivery_time(3.0, rng) == 4.0


def test_link_pre_gst_lands_by_gst_plus_small_delta():
    link = LinkModel(gst=10.0, small_delta=1.0, pre_gst_max_delay=50.0)
    rng = random.Random(2)
    for _ in range(1000):
        t = link.delivery_time(3.0, rng)
        assert 3.0 <= t <= 11.0


def make_net(n=4, f=1, adversary=AdversarySpec(), mode="fixed", gst=0.0):
    q = EventQueue()
    net = Network(q, LinkModel(gst=gst, mode=mode), adversary, n, f, seed=0)
    got = {i: [] for i in range(n)}
    for i in range(n):
        net.register(i, lambda m, frm, i=i: got[i].append((q.now, frm, m)))
    return q, net, got


def test_send_counts_bytes_and_loopback_is_free():
    q, net, got = make_net()
    net.send(Ping(), 0, 0)
    net.send(Ping(), 0, 1)
    q.run()
    assert [t for t, _, _ in got[0]] == [0.0]
    assert [t for t, _, _ in got[1]] == [1.0]
    assert net.bytes_sent == Ping().size()
    assert net.messages_sent == 1
    assert sum(r.size for r in net.trace if r.event == "send") == net.bytes_sent
    assert net.bytes_by_subject == {None: net.bytes_sent}
    assert not net.undelivered


def test_multicast_reaches_everyone_without_faults():
    q, net, got = make_net()
    net.multicast(Ping(), 0, delta=1.0)
    q.run()
    assert all(len(got[i]) == 1 for i in range(4))
    assert not any(r.event == "cancel" for r in net.trace)


def test_multicast_stops_once_quorum_confirms():
    # before GST the copy to peer 2 lags far behind the other confirmations
    q, net, got = make_net(mode="uniform", gst=100.0)
    net.link.pre_gst_max_delay = 50.0
    net.rng = random.Random(7)
    mc = net.multicast(Ping(), 0, delta=1.0)
    q.run()
    assert mc.done
    cancelled = {r.to for r in net.trace if r.event == "cancel"}
    delivered = {i for i in range(1, 4) if got[i]}
    assert cancelled == {2}
    assert cancelled.isdisjoint(delivered)
    assert len(delivered) + 1 == 3
    assert not net.undelivered


def test_selective_omission_filters():
    adv = appendix_a_adversary(4, 1)
    assert adv.byzantine == (3,) and adv.victims == (2,)
    from rorqual.dag import genesis
    from rorqual.messages import PullVertex, Vote
    from rorqual.codec import Signature
    v = genesis(4)[3]
    sig = Signature(3, b"")
    assert adv.filter(PullVertex(v, sig), 3, 2, 0.0) is None
    assert adv.filter(PullVertex(v, sig), 3, 0, 0.0) == 0.0
    assert adv.filter(Vote(b"d", 3, 3, 0, sig), 3, 2, 0.0) is None
    # correct senders are never touched
    assert adv.filter(PullVertex(genesis(4)[0], sig), 0, 2, 0.0) == 0.0


def test_adversary_validation():
    with pytest.raises(ValueError):
        AdversarySpec(behavior="teleport")
    with pytest.raises(ValueError):
        AdversarySpec(behavior="crash")
    with pytest.raises(ValueError):
        AdversarySpec(byzantine=(3,), behavior="delayer", victims=(3,))
    assert appendix_a_adversary(4, 0) == AdversarySpec()


def test_crash_drops_after_crash_time():
    adv = AdversarySpec(byzantine=(3,), behavior="crash", crash_at=5.0)
    q, net, got = make_net(adversary=adv)
    net.send(Ping(), 3, 0)
    q.run()
    q.schedule(6.0, TIMER, net.send, Ping(), 3, 0)
    q.run()
    assert len(got[0]) == 1
    assert adv.crashed(3, 5.0) and not adv.crashed(3, 4.9)
