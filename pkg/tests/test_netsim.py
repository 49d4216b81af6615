import math
import statistics
from statistics import NormalDist

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionlink import codec
from motionlink.codec import FrameHeader, MotionFrame
from motionlink.netsim import (
    REFERENCE_LINK,
    ClockModel,
    EndpointClosed,
    LinkModel,
    SimNetwork,
    VirtualClock,
    parse_addr,
    udp_transport,
)
from motionlink.rng import PortableRng


def pump(net, a, n, period_us=100_000, payload=lambda i: i.to_bytes(4, "little")):
    """Send n messages from ``a`` every period and drain; returns deliveries."""
    for i in range(n):
        net.advance_to(i * period_us)
        a.send(payload(i))
    out = []
    while net.next_due_us() is not None:
        out += net.pop_next()
    return out


def test_total_loss():
    net = SimNetwork()
    a, _ = net.connect("a", "b", LinkModel(5, loss_prob=1.0))
    assert pump(net, a, 200) == []
    assert net.link_stats("a") == (200, 200)


def test_zero_jitter_is_exact():
    net = SimNetwork()
    a, _ = net.connect("a", "b", LinkModel(5.0, 0.0))
    ds = pump(net, a, 100)
    assert len(ds) == 100
    assert {d.true_delay_us for d in ds} == {5000}
    assert all(d.true_delay_ms == 5.0 for d in ds)


def test_reference_model_sampling():
    net = SimNetwork()
    a, _ = net.connect("a", "b", REFERENCE_LINK)
    ds = pump(net, a, 1000)
    delays = [d.true_delay_ms for d in ds]
    assert len(delays) == 1000
    assert abs(statistics.mean(delays) - 70.4) <= 0.5
    lo, hi = max(52.2, 70.4 - 3 * 3.7), min(82.2, 70.4 + 3 * 3.7)
    assert all(lo - 1e-9 <= d <= hi + 1e-9 for d in delays)


def truncnorm_cdf(x, lo, hi):
    n = NormalDist()
    return (n.cdf(x) - n.cdf(lo)) / (n.cdf(hi) - n.cdf(lo))


def test_delay_distribution_matches_truncated_normal_ks():
    model = LinkModel(70.4, 3.7, 52.2, 82.2, seed=5)
    rng = PortableRng(5, "ks")
    zs = sorted((model.sample_delay_us(rng) / 1000 - 70.4) / 3.7 for _ in range(4000))
    n = len(zs)
    d = max(
        max(abs((i + 1) / n - truncnorm_cdf(z, -3, 3)), abs(i / n - truncnorm_cdf(z, -3, 3)))
        for i, z in enumerate(zs)
    )
    assert d < 1.63 / math.sqrt(n)  # KS critical value, alpha = 0.01


def test_bounds_tighter_than_three_sigma():
    model = LinkModel(10.0, 5.0, min_delay_ms=8.0, max_delay_ms=11.0)
    rng = PortableRng(0)
    us = [model.sample_delay_us(rng) for _ in range(2000)]
    assert min(us) >= 8000 and max(us) <= 11000


def test_delay_never_negative():
    model = LinkModel(0.5, 2.0)
    rng = PortableRng(1)
    assert min(model.sample_delay_us(rng) for _ in range(2000)) >= 0


@pytest.mark.parametrize(
    "kw",
    [
        {"loss_prob": 1.5},
        {"base_delay_ms": -1},
        {"jitter_sigma_ms": -1},
        {"min_delay_ms": 10, "max_delay_ms": 5},
        {"base_delay_ms": 10, "jitter_sigma_ms": 1, "min_delay_ms": 20, "max_delay_ms": 30},
    ],
)
def test_link_model_validation(kw):
    with pytest.raises(ValueError):
        LinkModel(**kw)


def test_ordered_never_inverts():
    net = SimNetwork()
    a, _ = net.connect("a", "b", LinkModel(20.0, 10.0, seed=3))
    ds = pump(net, a, 2000, period_us=1000)  # 1 ms spacing << jitter
    seqs = [int.from_bytes(d.data, "little") for d in ds]
    assert seqs == sorted(seqs)


def test_unordered_can_reorder():
    net = SimNetwork()
    a, _ = net.connect("a", "b", LinkModel(20.0, 10.0, ordered=False, seed=3))
    ds = pump(net, a, 2000, period_us=1000)
    seqs = [int.from_bytes(d.data, "little") for d in ds]
    assert len(seqs) == 2000 and seqs != sorted(seqs)


def test_ground_truth_conservation():
    net = SimNetwork()
    a, _ = net.connect("a", "b", LinkModel(20.0, 10.0, loss_prob=0.1, seed=9))
    sent_at = {}

    def payload(i):
        sent_at[i] = i * 1000
        return i.to_bytes(4, "little")

    ds = pump(net, a, 500, period_us=1000, payload=payload)
    assert 0 < len(ds) < 500
    for d in ds:
        i = int.from_bytes(d.data, "little")
        assert d.sent_us == sent_at[i]
        assert d.true_delay_us == d.delivered_us - d.sent_us
    assert net.truth == ds


def test_determinism():
    def run():
        net = SimNetwork()
        a, _ = net.connect("a", "b", LinkModel(70.4, 3.7, 52.2, 82.2, loss_prob=0.2, seed=11))
        return [(d.data, d.delivered_us) for d in pump(net, a, 300)]

    assert run() == run()


def test_delay_stream_independent_of_loss():
    def delays(loss):
        net = SimNetwork()
        a, _ = net.connect("a", "b", LinkModel(70.4, 3.7, loss_prob=loss, seed=4))
        return {int.from_bytes(d.data, "little"): d.true_delay_us for d in pump(net, a, 300)}

    full, lossy = delays(0.0), delays(0.3)
    assert lossy and all(full[k] == v for k, v in lossy.items())


def test_closed_endpoint():
    net = SimNetwork()
    a, b = net.connect("a", "b", LinkModel(1.0))
    a.close()
    with pytest.raises(EndpointClosed):
        a.send(b"x")
    b.send(b"y")
    assert net.deliver_due(10**9) == []  # delivery to a closed endpoint is dropped


def test_reverse_link_uses_its_own_model():
    net = SimNetwork()
    a, b = net.connect("a", "b", LinkModel(5.0), LinkModel(2.0))
    a.send(b"1")
    b.send(b"2")
    ds = net.deliver_due(10**9)
    assert [(d.endpoint.name, d.true_delay_us) for d in ds] == [("a", 2000), ("b", 5000)]


def test_time_cannot_go_backwards():
    net = SimNetwork(now_us=10)
    with pytest.raises(ValueError):
        net.advance_to(5)


# -- clocks ----------------------------------------------------------------------


def test_clock_reading_formula():
    c = ClockModel(offset_ms=12345, drift_ppm=50)
    assert c.read(1_000_000) == pytest.approx(1_000_000 + 12_345_000 + 50)
    assert c.read_us(1_000_000) == 1_000_000 + 12_345_000 + 50
    assert ClockModel(12345).read_us(7) == 7 + 12_345_000


@settings(max_examples=300)
@given(
    st.floats(-999_999, 1e6, allow_nan=False),
    st.floats(-1e6, 1e6, allow_nan=False),
    st.integers(0, 10**10),
    st.integers(1, 10**6),
)
def test_clock_strictly_increasing(drift, offset, t, dt):
    c = ClockModel(offset, drift)
    assert c.read(t + dt) > c.read(t)
    assert c.read_us(t + dt) >= c.read_us(t)


def test_virtual_clock_epoch():
    net = SimNetwork()
    clk = VirtualClock(net, ClockModel(offset_ms=1.5), epoch_ms=1000)
    net.advance_to(250)
    assert clk.now_us() == 1_000_000 + 1500 + 250


# -- UDP ---------------------------------------------------------------------------


def test_parse_addr():
    assert parse_addr("127.0.0.1:9000") == ("127.0.0.1", 9000)
    assert parse_addr(":9000") == ("0.0.0.0", 9000)
    with pytest.raises(ValueError):
        parse_addr("nope")


def test_udp_loopback_identity():
    frame = codec.encode_motion(MotionFrame(1, (0.1, 0.2, 0.3)), b"k", FrameHeader())
    with udp_transport("127.0.0.1:0") as rx:
        with udp_transport("127.0.0.1:0", rx.local_addr) as tx:
            tx.send(frame)
            assert rx.recv(2.0) == frame
            # receiver learned the peer and can answer
            rx.send(b"ack")
            assert tx.recv(2.0) == b"ack"


def test_udp_recv_timeout_and_bind_error():
    with udp_transport("127.0.0.1:0") as rx:
        assert rx.recv(0.01) is None
        with pytest.raises(OSError, match="bind 127.0.0.1"):
            udp_transport(f"127.0.0.1:{rx.local_addr[1]}")


def test_udp_send_without_peer():
    with udp_transport("127.0.0.1:0") as t:
        with pytest.raises(OSError, match="no peer"):
            t.send(b"x")
