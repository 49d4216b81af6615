import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionlink import codec
from motionlink.codec import FrameHeader, MotionFrame
from motionlink.netsim import ClockModel, LinkModel
from motionlink.session import (
    ControllerSession,
    FrameRecord,
    HostSession,
    LogFormatError,
    SessionLog,
    SessionMismatch,
    SourceExhausted,
    merge_logs,
    run_controller,
)
from motionlink.sim import SimConfig, run_sim
from motionlink.trace import TraceSpec, generate

QUIET = dict(noise_sigma=0.0, gesture_every_s=0.0)


class Loop:
    """In-memory transport with a fixed clock; records what was sent."""

    def __init__(self):
        self.sent = []
        self.t = 0

    def send(self, data):
        self.sent.append(data)

    def recv(self, timeout_s):
        return None

    def now_us(self):
        return self.t


def test_run_controller_zero_duration_sends_nothing():
    loop = Loop()
    s = ControllerSession(1, loop, loop, generate(TraceSpec(1.0)))
    log = run_controller(s, 0.0)
    assert loop.sent == [] and log.counters.sent == 0 and log.records == {}


def test_controller_source_exhausted():
    loop = Loop()
    s = ControllerSession(1, loop, loop, generate(TraceSpec(0.2)))
    s.tick()
    s.tick()
    with pytest.raises(SourceExhausted):
        s.tick()


def test_controller_stamps_frames_from_its_clock():
    loop = Loop()
    loop.t = 1_718_000_000_123_456
    s = ControllerSession(5, loop, loop, generate(TraceSpec(1.0)), session_key=b"k")
    assert s.tick() == 0
    header, frame = codec.decode_frame(loop.sent[0], b"k")
    assert (header.session_id, header.sequence) == (5, 0)
    assert frame.timestamp_ms == 1_718_000_000_123
    assert s.log.records[0].t_send_us == loop.t


def test_one_second_lossless():
    r = run_sim(SimConfig(frames=10, link=LinkModel(5.0), **QUIET))
    c = r.merged.counters
    assert (c.sent, c.received, c.lost) == (10, 10, 0)
    assert all(rec.t_recv_us - rec.t_send_us == 5000 for rec in r.merged.records.values())


def test_no_gestures_no_triggers():
    r = run_sim(SimConfig(frames=200, link=LinkModel(5.0), **QUIET))
    assert r.events == [] and r.merged.counters.haptic_sent == 0
    assert r.controller_session.actuations == []


def test_twenty_gestures_reach_sink_and_controller():
    sink = []
    r = run_sim(SimConfig(frames=1000, link=LinkModel(20.0, 2.0, seed=1), noise_sigma=0.1), action_sink=sink.append)
    assert len(sink) == 20 and sink == r.events
    c = r.merged.counters
    assert c.gestures == c.haptic_sent == c.haptic_received == 20
    assert len(r.controller_session.actuations) == 20
    assert all(a.seq is not None and a.duration_ms == 20 for a in r.controller_session.actuations)


def flip_payload_byte(target_seq, offset=codec.PREFIX_SIZE + 10):
    def tamper(index, data):
        if index == target_seq:
            data = bytearray(data)
            data[offset] ^= 0x01
            return bytes(data)
        return data

    return tamper


def test_corrupt_payload_without_key_counts_checksum_failure():
    cfg = SimConfig(frames=20, link=LinkModel(5.0), session_key=b"", **QUIET)
    r = run_sim(cfg, uplink_tamper=flip_payload_byte(7))
    c = r.merged.counters
    assert c.checksum_failures == 1 and c.auth_failures == 0
    assert (c.sent, c.received, c.lost) == (20, 19, 1)
    assert r.merged.records[7].t_recv_us is None


def test_corrupt_payload_with_key_counts_auth_failure():
    r = run_sim(SimConfig(frames=20, link=LinkModel(5.0), **QUIET), uplink_tamper=flip_payload_byte(3))
    c = r.merged.counters
    assert c.auth_failures == 1 and c.checksum_failures == 0 and c.lost == 1


def test_truncated_datagram_counted_malformed():
    r = run_sim(SimConfig(frames=5, link=LinkModel(5.0), **QUIET), uplink_tamper=lambda i, d: d[:40] if i == 0 else d)
    assert r.merged.counters.malformed == 1 and r.merged.counters.received == 4


def test_host_counts_foreign_and_duplicates():
    loop = Loop()
    host = HostSession(None, loop, loop, session_key=b"k")
    f = lambda sid, seq, t: codec.encode_motion(MotionFrame(t), b"k", FrameHeader(codec.MSG_MOTION, sid, seq))  # noqa: E731
    host.handle(f(9, 0, 0))
    assert host.session_id == 9  # adopted from the first valid frame
    host.handle(f(10, 1, 100))
    host.handle(f(9, 0, 0))
    host.handle(f(9, 2, 50))
    c = host.log.counters
    assert (c.received, c.foreign, c.duplicates) == (2, 1, 1)
    host.handle(f(9, 3, 10))  # earlier than the last seen timestamp
    assert c.out_of_order == 1


def test_controller_ignores_haptic_for_unknown_frame():
    loop = Loop()
    s = ControllerSession(1, loop, loop, [], session_key=b"k")
    h = codec.encode_haptic(codec.HapticTrigger(123), b"k", FrameHeader(codec.MSG_HAPTIC, 1, 0))
    act = s.handle(h)
    assert act is not None and act.seq is None and s.log.counters.haptic_received == 1


def test_haptic_round_trip_with_processing_delay():
    cfg = SimConfig(frames=100, link=LinkModel(2.4), processing_delay_ms=3.0, noise_sigma=0.0)
    r = run_sim(cfg)
    rows = [rec for rec in r.merged.sorted_records() if rec.gesture]
    assert len(rows) == 2
    for rec in rows:
        assert rec.haptic_sent_us - rec.t_recv_us == 3000
        assert rec.haptic_recv_us - rec.t_send_us == 2400 + 3000 + 2400


def test_lossy_link_conservation():
    r = run_sim(SimConfig(frames=1000, link=LinkModel(30.0, 5.0, loss_prob=0.2, seed=8)))
    c = r.merged.counters
    assert c.sent == 1000 and c.received + c.lost == c.sent
    assert 120 < c.lost < 280
    # every frame the host logged is in the ground truth with the same receive instant
    truth = r.true_uplink_delays_ms()
    assert set(truth) == {s for s, rec in r.merged.records.items() if rec.t_recv_us is not None}
    assert c.haptic_received <= c.haptic_sent <= c.gestures


# -- merge -------------------------------------------------------------------------


def test_merge_session_mismatch():
    with pytest.raises(SessionMismatch):
        merge_logs(SessionLog(1, "controller"), SessionLog(2, "host"))


def test_merge_joins_by_sequence():
    ctrl = SessionLog(1, "controller")
    host = SessionLog(1, "host")
    for s in range(4):
        ctrl.records[s] = FrameRecord(s, t_send_us=s * 100_000)
    host.records[0] = FrameRecord(0, t_recv_us=70_000, gesture=True, haptic_sent_us=70_000)
    host.records[2] = FrameRecord(2, t_recv_us=270_000)
    host.records[9] = FrameRecord(9, t_recv_us=1)  # never sent: ignored
    ctrl.records[0].haptic_recv_us = 140_000
    host.counters.auth_failures = 2
    m = merge_logs(ctrl, host)
    assert sorted(m.records) == [0, 1, 2, 3]
    assert (m.counters.sent, m.counters.received, m.counters.lost) == (4, 2, 2)
    assert m.counters.auth_failures == 2 and m.counters.gestures == 1
    assert m.records[0] == FrameRecord(0, 0, 70_000, True, 70_000, 140_000)
    assert m.records[1].t_recv_us is None


def test_merge_empty():
    m = merge_logs(SessionLog(None, "controller"), SessionLog(None, "host"))
    assert m.records == {} and m.counters.sent == 0


# -- JSONL -------------------------------------------------------------------------


def test_jsonl_round_trip(tmp_path):
    r = run_sim(SimConfig(frames=300, link=LinkModel(30.0, 5.0, loss_prob=0.1, seed=2)))
    path = tmp_path / "m.jsonl"
    r.merged.write(path)
    back = SessionLog.read(path)
    assert back == r.merged
    last = path.read_text().splitlines()[-1]
    assert last.startswith('{"summary":')


def test_jsonl_microsecond_precision():
    log = SessionLog(1)
    log.records[0] = FrameRecord(0, 1_718_000_000_000_001, 1_718_000_000_070_400, False, None, None)
    text = log.to_jsonl()
    assert '"t_send_ms":1718000000000.001' in text and '"t_recv_ms":1718000000070.4' in text
    assert SessionLog.from_jsonl(text) == log


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 10**16), st.integers(-(10**6), 10**16)), max_size=20))
def test_jsonl_round_trip_property(pairs):
    log = SessionLog(7, "controller")
    for i, (a, b) in enumerate(pairs):
        log.records[i] = FrameRecord(i, a, b, bool(i % 2), None, b)
    assert SessionLog.from_jsonl(log.to_jsonl()) == log


def test_jsonl_without_summary_recounts():
    text = '{"seq":0,"t_send_ms":0,"t_recv_ms":70.4}\n{"seq":1,"t_send_ms":100,"t_recv_ms":null}\n'
    log = SessionLog.from_jsonl(text)
    assert (log.counters.sent, log.counters.received, log.counters.lost) == (2, 1, 1)


@pytest.mark.parametrize("text", ["{not json\n", '{"t_send_ms":1}\n', '{"seq":0,"t_send_ms":0.0001}\n'])
def test_jsonl_malformed(text):
    with pytest.raises(LogFormatError, match="line 1"):
        SessionLog.from_jsonl(text)


# -- determinism -------------------------------------------------------------------


def test_ten_minute_replay_is_deterministic():
    cfg = SimConfig.for_duration(600.0, 10.0, link=LinkModel(70.4, 3.7, 52.2, 82.2, loss_prob=0.01, seed=3))
    a, b = run_sim(cfg), run_sim(cfg)
    assert a.merged.counters.sent == 6000
    assert a.merged.to_jsonl() == b.merged.to_jsonl()
    assert [(d.data, d.delivered_us) for d in a.truth] == [(d.data, d.delivered_us) for d in b.truth]


def test_seed_changes_outcome():
    cfg = SimConfig(frames=200)
    other = dataclasses.replace(cfg, link=dataclasses.replace(cfg.link, seed=7))
    assert run_sim(cfg).merged.to_jsonl() != run_sim(other).merged.to_jsonl()


def test_clock_offset_shifts_raw_latency():
    base = SimConfig(frames=50, link=LinkModel(10.0), **QUIET)
    skewed = dataclasses.replace(base, host_clock=ClockModel(offset_ms=250.0))
    a = run_sim(base).merged.records[3]
    b = run_sim(skewed).merged.records[3]
    assert (b.t_recv_us - b.t_send_us) - (a.t_recv_us - a.t_send_us) == 250_000
