"""Controller and host state machines, session logs and their JSON-Lines form.

Both sessions are reactive: ``ControllerSession.tick()`` samples and sends one
frame, ``handle(data)`` consumes one incoming datagram.  The drivers at the
bottom run them against a real transport; :mod:`motionlink.sim` runs them in
virtual time.

Timestamps are kept as integer microseconds of the owning side's clock.  In
JSON-Lines they are written as milliseconds with up to three decimals and
read back exactly (no binary float round-trip).
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields
from decimal import Decimal
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol

from . import codec
from .codec import (
    AuthFailure,
    ChecksumMismatch,
    CodecError,
    FrameHeader,
    HapticTrigger,
    MotionFrame,
)
from .gesture import DetectorConfig, GestureDetector, GestureEvent, OutOfOrderTimestamp

log = logging.getLogger(__name__)

HAPTIC_DURATION_MS = 20


class SourceExhausted(RuntimeError):
    pass


class SessionMismatch(ValueError):
    pass


class LogFormatError(ValueError):
    pass


class Transport(Protocol):
    def send(self, data: bytes) -> None: ...


class Clock(Protocol):
    def now_us(self) -> int: ...


@dataclass
class FrameRecord:
    seq: int
    t_send_us: int | None = None
    t_recv_us: int | None = None
    gesture: bool = False
    haptic_sent_us: int | None = None
    haptic_recv_us: int | None = None


@dataclass
class Counters:
    sent: int = 0
    received: int = 0
    lost: int = 0
    auth_failures: int = 0
    checksum_failures: int = 0
    malformed: int = 0
    foreign: int = 0
    duplicates: int = 0
    out_of_order: int = 0
    gestures: int = 0
    haptic_sent: int = 0
    haptic_received: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Actuation:
    """Local stand-in for firing the haptic actuator on the controller."""

    t_us: int
    seq: int | None
    intensity: float
    sharpness: float
    duration_ms: int


@dataclass
class SessionLog:
    session_id: int | None
    side: str = "merged"
    records: dict[int, FrameRecord] = field(default_factory=dict)
    counters: Counters = field(default_factory=Counters)

    def record(self, seq: int) -> FrameRecord:
        rec = self.records.get(seq)
        if rec is None:
            rec = self.records[seq] = FrameRecord(seq)
        return rec

    def sorted_records(self) -> list[FrameRecord]:
        return [self.records[k] for k in sorted(self.records)]

    # -- JSON-Lines ----------------------------------------------------------

    def to_jsonl(self) -> str:
        lines = []
        for r in self.sorted_records():
            lines.append(
                "{"
                f'"seq":{r.seq},'
                f'"t_send_ms":{_ms(r.t_send_us)},'
                f'"t_recv_ms":{_ms(r.t_recv_us)},'
                f'"gesture":{"true" if r.gesture else "false"},'
                f'"haptic_sent_ms":{_ms(r.haptic_sent_us)},'
                f'"haptic_recv_ms":{_ms(r.haptic_recv_us)}'
                "}"
            )
        summary = {"summary": {"session_id": self.session_id, "side": self.side, **self.counters.as_dict()}}
        lines.append(json.dumps(summary, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> SessionLog:
        out = cls(None, side="merged")
        have_summary = False
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line, parse_float=Decimal)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"line {lineno}: {exc.msg}") from None
            if "summary" in obj:
                s = obj["summary"]
                out.session_id = s.get("session_id")
                out.side = s.get("side", "merged")
                known = {f.name for f in fields(Counters)}
                out.counters = Counters(**{k: int(v) for k, v in s.items() if k in known})
                have_summary = True
                continue
            try:
                seq = int(obj["seq"])
                out.records[seq] = FrameRecord(
                    seq,
                    _us(obj.get("t_send_ms")),
                    _us(obj.get("t_recv_ms")),
                    bool(obj.get("gesture", False)),
                    _us(obj.get("haptic_sent_ms")),
                    _us(obj.get("haptic_recv_ms")),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise LogFormatError(f"line {lineno}: bad record ({exc})") from None
        if not have_summary:
            out.counters = _recount(out)
        return out

    @classmethod
    def read(cls, path: str | Path) -> SessionLog:
        return cls.from_jsonl(Path(path).read_text())


def _ms(us: int | None) -> str:
    if us is None:
        return "null"
    sign = "-" if us < 0 else ""
    q, r = divmod(abs(us), 1000)
    if r == 0:
        return f"{sign}{q}"
    return f"{sign}{q}.{r:03d}".rstrip("0")


def _us(value) -> int | None:
    if value is None:
        return None
    d = Decimal(value) * 1000
    if d != d.to_integral_value():
        raise ValueError(f"timestamp {value} has sub-microsecond digits")
    return int(d)


def _recount(log_: SessionLog) -> Counters:
    c = Counters()
    for r in log_.records.values():
        c.sent += r.t_send_us is not None
        c.received += r.t_recv_us is not None
        c.gestures += r.gesture
        c.haptic_sent += r.haptic_sent_us is not None
        c.haptic_received += r.haptic_recv_us is not None
    c.lost = max(c.sent - c.received, 0)
    return c


def _count_decode_error(counters: Counters, exc: CodecError) -> None:
    if isinstance(exc, AuthFailure):
        counters.auth_failures += 1
    elif isinstance(exc, ChecksumMismatch):
        counters.checksum_failures += 1
    else:
        counters.malformed += 1


# -- controller --------------------------------------------------------------


class ControllerSession:
    """Samples the IMU source, stamps and sends frames, and fires haptics on acknowledgment."""

    def __init__(
        self,
        session_id: int,
        transport: Transport,
        clock: Clock,
        imu_source: Iterable[MotionFrame],
        *,
        session_key: bytes = b"",
        send_rate_hz: float = 10.0,
        salt: bytes | None = None,
        cipher_id: int = codec.CIPHER_NULL,
    ) -> None:
        if not send_rate_hz > 0:
            raise ValueError("send_rate_hz must be > 0")
        self.session_id = session_id
        self.transport = transport
        self.clock = clock
        self.session_key = session_key
        self.send_rate_hz = send_rate_hz
        self.salt = salt if salt is not None else os.urandom(codec.SALT_SIZE)
        self.cipher_id = cipher_id
        self.log = SessionLog(session_id, side="controller")
        self.haptic_log: list[tuple[int, HapticTrigger]] = []
        self.actuations: list[Actuation] = []
        self._source: Iterator[MotionFrame] = iter(imu_source)
        self._seq = 0
        self._seq_by_ts: dict[int, int] = {}

    @property
    def period_us(self) -> int:
        return round(1_000_000 / self.send_rate_hz)

    def tick(self) -> int:
        """Send the next sample; returns its sequence number."""
        try:
            sample = next(self._source)
        except StopIteration:
            raise SourceExhausted(f"IMU source ran out after {self._seq} frames") from None
        t_us = self.clock.now_us()
        frame = MotionFrame(t_us // 1000, sample.accel, sample.gyro)
        seq = self._seq
        data = codec.encode_motion(
            frame,
            self.session_key,
            FrameHeader(codec.MSG_MOTION, self.session_id, seq),
            salt=self.salt,
            cipher_id=self.cipher_id,
        )
        self.transport.send(data)
        self._seq += 1
        self.log.record(seq).t_send_us = t_us
        self.log.counters.sent += 1
        self._seq_by_ts[frame.timestamp_ms] = seq
        return seq

    def handle(self, data: bytes) -> Actuation | None:
        t_us = self.clock.now_us()
        c = self.log.counters
        try:
            header, msg = codec.decode_frame(data, self.session_key)
        except CodecError as exc:
            _count_decode_error(c, exc)
            log.debug("controller dropped datagram: %s", exc)
            return None
        if header.session_id != self.session_id:
            c.foreign += 1
            return None
        if not isinstance(msg, HapticTrigger):
            c.malformed += 1
            return None
        c.haptic_received += 1
        self.haptic_log.append((t_us, msg))
        seq = self._seq_by_ts.get(msg.ref_timestamp_ms)
        if seq is not None:
            rec = self.log.record(seq)
            if rec.haptic_recv_us is None:
                rec.haptic_recv_us = t_us
        act = Actuation(t_us, seq, msg.intensity, msg.sharpness, msg.duration_ms)
        self.actuations.append(act)
        return act


# -- host --------------------------------------------------------------------


class HostSession:
    """Receives frames, runs the detector, forwards events and answers with haptic triggers.

    ``defer(delay_us, fn)`` schedules the haptic send after the processing
    delay; without it (or with zero delay) the trigger is sent inline.
    """

    def __init__(
        self,
        session_id: int | None,
        transport: Transport,
        clock: Clock,
        *,
        session_key: bytes = b"",
        detector: DetectorConfig = DetectorConfig(),
        action_sink: Callable[[GestureEvent], None] | None = None,
        processing_delay_us: int = 0,
        defer: Callable[[int, Callable[[], None]], None] | None = None,
        salt: bytes | None = None,
        cipher_id: int = codec.CIPHER_NULL,
    ) -> None:
        self.session_id = session_id
        self.transport = transport
        self.clock = clock
        self.session_key = session_key
        self.detector = GestureDetector(detector)
        self.action_sink = action_sink
        self.processing_delay_us = processing_delay_us
        self.defer = defer
        self.salt = salt if salt is not None else os.urandom(codec.SALT_SIZE)
        self.cipher_id = cipher_id
        self.log = SessionLog(session_id, side="host")
        self.events: list[GestureEvent] = []
        self._haptic_seq = 0

    def handle(self, data: bytes) -> GestureEvent | None:
        t_us = self.clock.now_us()
        c = self.log.counters
        try:
            header, msg = codec.decode_frame(data, self.session_key)
        except CodecError as exc:
            _count_decode_error(c, exc)
            log.debug("host dropped datagram: %s", exc)
            return None
        if self.session_id is None:
            self.session_id = self.log.session_id = header.session_id
        if header.session_id != self.session_id:
            c.foreign += 1
            return None
        if not isinstance(msg, MotionFrame):
            c.malformed += 1
            return None
        if header.sequence in self.log.records:
            c.duplicates += 1
            return None
        rec = self.log.record(header.sequence)
        rec.t_recv_us = t_us
        c.received += 1
        try:
            event = self.detector.update(msg)
        except OutOfOrderTimestamp:
            c.out_of_order += 1
            return None
        if event is None:
            return None
        rec.gesture = True
        c.gestures += 1
        self.events.append(event)
        if self.action_sink is not None:
            self.action_sink(event)
        trigger = HapticTrigger(msg.timestamp_ms, 1.0, 1.0, HAPTIC_DURATION_MS)
        if self.defer is not None and self.processing_delay_us > 0:
            self.defer(self.processing_delay_us, lambda: self._send_haptic(trigger, rec))
        else:
            self._send_haptic(trigger, rec)
        return event

    def _send_haptic(self, trigger: HapticTrigger, rec: FrameRecord) -> None:
        data = codec.encode_haptic(
            trigger,
            self.session_key,
            FrameHeader(codec.MSG_HAPTIC, self.session_id or 0, self._haptic_seq),
            salt=self.salt,
            cipher_id=self.cipher_id,
        )
        self._haptic_seq += 1
        rec.haptic_sent_us = self.clock.now_us()
        self.transport.send(data)
        self.log.counters.haptic_sent += 1


# -- drivers for real transports -----------------------------------------------


class Receiver(Protocol):
    def send(self, data: bytes) -> None: ...

    def recv(self, timeout_s: float | None) -> bytes | None: ...


def run_controller(session: ControllerSession, duration_s: float, *, linger_s: float = 0.5) -> SessionLog:
    """Send ``ceil(duration_s * rate)`` frames at the session rate over a real transport.

    Incoming haptic triggers are handled while waiting for each tick and for
    ``linger_s`` after the last one.
    """
    transport: Receiver = session.transport  # type: ignore[assignment]
    n = math.ceil(round(duration_s * session.send_rate_hz, 9))
    period = 1.0 / session.send_rate_hz
    start = time.monotonic()

    def pump_until(deadline: float) -> None:
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            data = transport.recv(remaining)
            if data is not None:
                session.handle(data)

    for k in range(n):
        pump_until(start + k * period)
        session.tick()
    if n:
        pump_until(time.monotonic() + linger_s)
    return session.log


def run_host(
    session: HostSession,
    *,
    max_frames: int | None = None,
    idle_timeout_s: float = 2.0,
    first_frame_timeout_s: float | None = None,
    poll_s: float = 0.05,
) -> SessionLog:
    """Serve until ``max_frames`` motion frames arrived or the link goes idle."""
    transport: Receiver = session.transport  # type: ignore[assignment]
    started = time.monotonic()
    last_rx: float | None = None
    while True:
        if max_frames is not None and session.log.counters.received >= max_frames:
            break
        now = time.monotonic()
        if last_rx is None:
            if first_frame_timeout_s is not None and now - started > first_frame_timeout_s:
                break
        elif now - last_rx > idle_timeout_s:
            break
        data = transport.recv(poll_s)
        if data is not None:
            last_rx = time.monotonic()
            session.handle(data)
    return session.log


# -- merge -------------------------------------------------------------------


def merge_logs(controller: SessionLog, host: SessionLog) -> SessionLog:
    """Join controller and host logs by sequence; one record per sent frame."""
    if (
        controller.session_id is not None
        and host.session_id is not None
        and controller.session_id != host.session_id
    ):
        raise SessionMismatch(f"session ids differ: {controller.session_id} vs {host.session_id}")
    merged = SessionLog(controller.session_id, side="merged")
    c = merged.counters
    hc, cc = host.counters, controller.counters
    for seq, crec in sorted(controller.records.items()):
        if crec.t_send_us is None:
            continue
        hrec = host.records.get(seq)
        rec = FrameRecord(seq, crec.t_send_us, haptic_recv_us=crec.haptic_recv_us)
        if hrec is not None and hrec.t_recv_us is not None:
            rec.t_recv_us = hrec.t_recv_us
            rec.gesture = hrec.gesture
            rec.haptic_sent_us = hrec.haptic_sent_us
            c.received += 1
        merged.records[seq] = rec
    c.sent = len(merged.records)
    c.lost = c.sent - c.received
    c.auth_failures = hc.auth_failures + cc.auth_failures
    c.checksum_failures = hc.checksum_failures + cc.checksum_failures
    c.malformed = hc.malformed + cc.malformed
    c.foreign = hc.foreign + cc.foreign
    c.duplicates = hc.duplicates
    c.out_of_order = hc.out_of_order
    c.gestures = sum(r.gesture for r in merged.records.values())
    c.haptic_sent = hc.haptic_sent
    c.haptic_received = cc.haptic_received
    return merged
