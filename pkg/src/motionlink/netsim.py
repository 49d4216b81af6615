"""Deterministic link emulation, clock models and transports.

Virtual time is integer microseconds.  Each simulated link draws per-message
delays from a truncated Gaussian (cut at +/-3 sigma, at zero and at the
optional min/max bounds) and drops messages with ``loss_prob``.  In ordered
mode a message never overtakes an earlier one on the same link: it waits
until the previous message's delivery time.  Every delivery carries its
ground-truth delay so latency estimators can be checked exactly.
"""

from __future__ import annotations

import heapq
import math
import socket
import threading
import time
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable

from .rng import PortableRng

Tamper = Callable[[int, bytes], bytes]


class EndpointClosed(RuntimeError):
    pass


class TransportClosed(RuntimeError):
    pass


class TransportError(OSError):
    pass


@dataclass(frozen=True)
class LinkModel:
    base_delay_ms: float = 0.0
    jitter_sigma_ms: float = 0.0
    min_delay_ms: float | None = None
    max_delay_ms: float | None = None
    loss_prob: float = 0.0
    ordered: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.base_delay_ms >= 0:
            raise ValueError("base_delay_ms must be >= 0")
        if not self.jitter_sigma_ms >= 0:
            raise ValueError("jitter_sigma_ms must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        lo, hi = self.bounds_ms
        if lo > hi:
            raise ValueError(f"empty delay range [{lo}, {hi}]")
        if self.jitter_sigma_ms > 0:
            zlo, zhi = self._z_bounds()
            if zlo > zhi:
                raise ValueError("delay bounds exclude the whole +/-3 sigma window")
            if NormalDist().cdf(zhi) - NormalDist().cdf(zlo) < 1e-4:
                raise ValueError("delay bounds keep < 0.01% of the jitter distribution")

    @property
    def bounds_ms(self) -> tuple[float, float]:
        lo = max(0.0, self.min_delay_ms if self.min_delay_ms is not None else 0.0)
        hi = self.max_delay_ms if self.max_delay_ms is not None else math.inf
        return lo, hi

    def _z_bounds(self) -> tuple[float, float]:
        lo, hi = self.bounds_ms
        s = self.jitter_sigma_ms
        return max(-3.0, (lo - self.base_delay_ms) / s), min(3.0, (hi - self.base_delay_ms) / s)

    def sample_delay_us(self, rng: PortableRng) -> int:
        lo, hi = self.bounds_ms
        if self.jitter_sigma_ms == 0:
            delay = min(max(self.base_delay_ms, lo), hi)
        else:
            delay = self.base_delay_ms + self.jitter_sigma_ms * rng.truncated_normal(*self._z_bounds())
        us = round(delay * 1000)
        lo_us = math.ceil(round(lo * 1000, 6))
        if hi != math.inf:
            us = min(us, math.floor(round(hi * 1000, 6)))
        return max(us, lo_us)


REFERENCE_LINK = LinkModel(70.4, 3.7, 52.2, 82.2, loss_prob=0.0, ordered=True, seed=42)


@dataclass(frozen=True)
class ClockModel:
    """Local clock relative to true time: ``T + offset + drift_ppm * 1e-6 * T``.

    ``T`` is the true time since the start of the run.
    """

    offset_ms: float = 0.0
    drift_ppm: float = 0.0

    def read(self, true_us: float) -> float:
        return true_us + self.offset_ms * 1000 + self.drift_ppm * 1e-6 * true_us

    def read_us(self, true_us: int) -> int:
        offset_us = round(self.offset_ms * 1000)
        if self.drift_ppm == 0:
            return true_us + offset_us
        return true_us + offset_us + math.floor(self.drift_ppm * true_us / 1e6)


class VirtualClock:
    """Clock source reading a :class:`SimNetwork`'s virtual time."""

    def __init__(self, net: SimNetwork, model: ClockModel = ClockModel(), epoch_ms: int = 0) -> None:
        self.net = net
        self.model = model
        self.epoch_us = epoch_ms * 1000

    def now_us(self) -> int:
        return self.epoch_us + self.model.read_us(self.net.now_us)


class WallClock:
    def now_us(self) -> int:
        return time.time_ns() // 1000


@dataclass
class Delivery:
    endpoint: SimEndpoint
    data: bytes
    sent_us: int
    delivered_us: int
    link: str

    @property
    def true_delay_us(self) -> int:
        return self.delivered_us - self.sent_us

    @property
    def true_delay_ms(self) -> float:
        return self.true_delay_us / 1000


@dataclass
class _Link:
    name: str
    model: LinkModel
    dst: SimEndpoint
    delay_rng: PortableRng
    loss_rng: PortableRng
    tamper: Tamper | None = None
    last_due_us: int = 0
    sent: int = 0
    dropped: int = 0


class SimEndpoint:
    def __init__(self, net: SimNetwork, name: str) -> None:
        self.net = net
        self.name = name
        self.closed = False

    def send(self, data: bytes) -> None:
        if self.closed:
            raise EndpointClosed(f"endpoint {self.name} is closed")
        self.net._send(self, bytes(data))

    def close(self) -> None:
        self.closed = True

    def __repr__(self) -> str:
        return f"SimEndpoint({self.name!r})"


@dataclass
class SimNetwork:
    """Discrete-event message network over virtual microseconds."""

    now_us: int = 0
    truth: list[Delivery] = field(default_factory=list)
    _links: dict[str, _Link] = field(default_factory=dict)
    _pending: list = field(default_factory=list)
    _counter: int = 0

    def connect(
        self,
        a: str,
        b: str,
        model_ab: LinkModel,
        model_ba: LinkModel | None = None,
    ) -> tuple[SimEndpoint, SimEndpoint]:
        ea, eb = SimEndpoint(self, a), SimEndpoint(self, b)
        for src, dst, model in ((ea, eb, model_ab), (eb, ea, model_ba or model_ab)):
            name = f"{src.name}->{dst.name}"
            self._links[src.name] = _Link(
                name,
                model,
                dst,
                PortableRng(model.seed, f"{name}/delay"),
                PortableRng(model.seed, f"{name}/loss"),
            )
        return ea, eb

    def set_tamper(self, src: str, fn: Tamper | None) -> None:
        """Install ``fn(message_index, data) -> data`` on the link leaving ``src``."""
        self._links[src].tamper = fn

    def link_stats(self, src: str) -> tuple[int, int]:
        link = self._links[src]
        return link.sent, link.dropped

    def _send(self, src: SimEndpoint, data: bytes) -> None:
        link = self._links[src.name]
        index = link.sent
        link.sent += 1
        if link.tamper is not None:
            data = link.tamper(index, data)
        # draw delay even for dropped messages so the delay stream does not
        # depend on which messages were lost
        delay = link.model.sample_delay_us(link.delay_rng)
        if link.loss_rng.bernoulli(link.model.loss_prob):
            link.dropped += 1
            return
        due = self.now_us + delay
        if link.model.ordered:
            due = max(due, link.last_due_us)
            link.last_due_us = due
        heapq.heappush(
            self._pending, (due, self._counter, Delivery(link.dst, data, self.now_us, due, link.name))
        )
        self._counter += 1

    def next_due_us(self) -> int | None:
        return self._pending[0][0] if self._pending else None

    def advance_to(self, t_us: int) -> None:
        if t_us < self.now_us:
            raise ValueError(f"virtual time cannot go backwards ({t_us} < {self.now_us})")
        self.now_us = t_us

    def deliver_due(self, up_to_us: int) -> list[Delivery]:
        """Pop every message due at or before ``up_to_us``, in delivery order."""
        out = []
        while self._pending and self._pending[0][0] <= up_to_us:
            _, _, d = heapq.heappop(self._pending)
            if d.endpoint.closed:
                continue
            out.append(d)
            self.truth.append(d)
        return out

    def pop_next(self) -> list[Delivery]:
        """Advance to the next due time and return everything due then."""
        t = self.next_due_us()
        if t is None:
            return []
        self.advance_to(max(t, self.now_us))
        return self.deliver_due(self.now_us)


# -- UDP -----------------------------------------------------------------------


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "0.0.0.0", int(port)


class UdpTransport:
    """One wire frame per datagram. ``peer_addr=None`` learns the peer from the first datagram."""

    def __init__(self, bind_addr: tuple[str, int], peer_addr: tuple[str, int] | None = None) -> None:
        self.peer_addr = peer_addr
        self._lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind(bind_addr)
        except OSError as exc:
            self._sock.close()
            raise TransportError(exc.errno, f"bind {bind_addr[0]}:{bind_addr[1]}: {exc.strerror}") from exc
        self.closed = False

    @property
    def local_addr(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def send(self, data: bytes) -> None:
        if self.closed:
            raise TransportClosed("transport is closed")
        if self.peer_addr is None:
            raise TransportError("no peer address known yet")
        with self._lock:
            try:
                self._sock.sendto(data, self.peer_addr)
            except OSError as exc:
                host, port = self.peer_addr
                raise TransportError(exc.errno, f"sendto {host}:{port}: {exc.strerror}") from exc

    def recv(self, timeout_s: float | None) -> bytes | None:
        if self.closed:
            raise TransportClosed("transport is closed")
        self._sock.settimeout(timeout_s if timeout_s is None else max(timeout_s, 0.0) or 1e-6)
        try:
            data, addr = self._sock.recvfrom(65535)
        except socket.timeout:
            return None
        except OSError as exc:
            raise TransportError(exc.errno, f"recvfrom on {self.local_addr}: {exc.strerror}") from exc
        if self.peer_addr is None:
            self.peer_addr = addr
        return data

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._sock.close()

    def __enter__(self) -> UdpTransport:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def udp_transport(bind_addr: str | tuple[str, int], peer_addr: str | tuple[str, int] | None = None) -> UdpTransport:
    if isinstance(bind_addr, str):
        bind_addr = parse_addr(bind_addr)
    if isinstance(peer_addr, str):
        peer_addr = parse_addr(peer_addr)
    return UdpTransport(bind_addr, peer_addr)
