"""End-to-end session in virtual time: trace -> controller -> link -> host -> back."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import codec
from .codec import MotionFrame
from .gesture import DetectorConfig, GestureEvent
from .netsim import REFERENCE_LINK, ClockModel, Delivery, LinkModel, SimNetwork, Tamper, VirtualClock
from .rng import PortableRng
from .session import ControllerSession, HostSession, SessionLog, merge_logs
from .trace import TraceSpec, generate, periodic_gestures

DEFAULT_EPOCH_MS = 1_718_000_000_000
DEFAULT_SESSION_ID = 0x4D4C0001
DEFAULT_KEY = b"motionlink-dev-key"


@dataclass(frozen=True)
class SimConfig:
    frames: int = 1000
    rate_hz: float = 10.0
    link: LinkModel = REFERENCE_LINK
    return_link: LinkModel | None = None
    controller_clock: ClockModel = ClockModel()
    host_clock: ClockModel = ClockModel()
    detector: DetectorConfig = DetectorConfig()
    processing_delay_ms: float = 0.0
    trace: Sequence[MotionFrame] | None = None
    gesture_every_s: float = 5.0
    gesture_amplitude: float = 1.0
    gesture_width_ms: float = 200.0
    noise_sigma: float = 0.1
    seed: int = 42
    session_id: int = DEFAULT_SESSION_ID
    session_key: bytes = DEFAULT_KEY
    cipher_id: int = codec.CIPHER_NULL
    epoch_ms: int = DEFAULT_EPOCH_MS

    @classmethod
    def for_duration(cls, duration_s: float, rate_hz: float = 10.0, **kw) -> SimConfig:
        return cls(frames=math.ceil(round(duration_s * rate_hz, 9)), rate_hz=rate_hz, **kw)

    def default_trace(self) -> list[MotionFrame]:
        duration = self.frames / self.rate_hz
        count = int(duration // self.gesture_every_s) if self.gesture_every_s > 0 else 0
        gestures = periodic_gestures(
            count,
            every_s=self.gesture_every_s,
            first_center_s=self.gesture_every_s / 2,
            amplitude=self.gesture_amplitude,
            width_ms=self.gesture_width_ms,
        )
        spec = TraceSpec(duration, self.rate_hz, gestures, self.noise_sigma, self.seed)
        return generate(spec)


@dataclass
class SimResult:
    merged: SessionLog
    controller: SessionLog
    host: SessionLog
    truth: list[Delivery]
    events: list[GestureEvent]
    controller_session: ControllerSession = field(repr=False)

    def true_uplink_delays_ms(self) -> dict[int, float]:
        """Ground-truth one-way delay per motion-frame sequence."""
        out = {}
        for d in self.truth:
            h = codec.peek_header(d.data)
            if d.link == "controller->host" and h.msg_type == codec.MSG_MOTION:
                out[h.sequence] = d.true_delay_ms
        return out


def run_sim(
    config: SimConfig,
    *,
    uplink_tamper: Tamper | None = None,
    action_sink: Callable[[GestureEvent], None] | None = None,
) -> SimResult:
    net = SimNetwork()
    ctrl_ep, host_ep = net.connect("controller", "host", config.link, config.return_link)
    if uplink_tamper is not None:
        net.set_tamper("controller", uplink_tamper)

    queue: list = []
    order = 0

    def schedule(t_us: int, fn: Callable[[], None]) -> None:
        nonlocal order
        heapq.heappush(queue, (t_us, order, fn))
        order += 1

    salts = PortableRng(config.seed, "nonce-salt")
    trace = list(config.trace) if config.trace is not None else config.default_trace()
    controller = ControllerSession(
        config.session_id,
        ctrl_ep,
        VirtualClock(net, config.controller_clock, config.epoch_ms),
        trace,
        session_key=config.session_key,
        send_rate_hz=config.rate_hz,
        salt=salts.randbytes(codec.SALT_SIZE),
        cipher_id=config.cipher_id,
    )
    host = HostSession(
        config.session_id,
        host_ep,
        VirtualClock(net, config.host_clock, config.epoch_ms),
        session_key=config.session_key,
        detector=config.detector,
        action_sink=action_sink,
        processing_delay_us=round(config.processing_delay_ms * 1000),
        defer=lambda delay_us, fn: schedule(net.now_us + delay_us, fn),
        salt=salts.randbytes(codec.SALT_SIZE),
        cipher_id=config.cipher_id,
    )

    for k in range(config.frames):
        # exact tick instants: k / rate seconds, rounded once to microseconds
        schedule(round(k * 1_000_000 / config.rate_hz), controller.tick)

    handlers = {ctrl_ep.name: controller.handle, host_ep.name: host.handle}
    while True:
        t_net = net.next_due_us()
        t_ev = queue[0][0] if queue else None
        if t_net is None and t_ev is None:
            break
        # deliveries go before events scheduled for the same instant
        if t_net is not None and (t_ev is None or t_net <= t_ev):
            net.advance_to(t_net)
            for d in net.deliver_due(t_net):
                handlers[d.endpoint.name](d.data)
        else:
            t, _, fn = heapq.heappop(queue)
            net.advance_to(t)
            fn()

    merged = merge_logs(controller.log, host.log)
    return SimResult(merged, controller.log, host.log, net.truth, host.events, controller)
