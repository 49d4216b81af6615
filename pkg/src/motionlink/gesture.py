"""Threshold gesture detection on one acceleration axis.

A sample fires when its axis value strictly exceeds ``tau``, the previous
sample did not, and at least ``refractory_ms`` have passed since the last
fired event.  A held tilt therefore fires once, and crossings that bounce
around the threshold within the refractory window are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from .codec import MotionFrame

AXES = ("x", "y", "z")


class OutOfOrderTimestamp(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    tau: float = 0.5
    refractory_ms: int = 500
    axis: str = "y"

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.refractory_ms < 0:
            raise ValueError(f"refractory_ms must be >= 0, got {self.refractory_ms}")
        axis = self.axis.lower()
        if axis not in AXES:
            raise ValueError(f"axis must be one of x/y/z, got {self.axis!r}")
        object.__setattr__(self, "axis", axis)


@dataclass(frozen=True)
class GestureEvent:
    frame_timestamp_ms: int
    peak_value: float
    sequence: int


@dataclass(frozen=True)
class DetectorState:
    config: DetectorConfig = DetectorConfig()
    last_timestamp_ms: int | None = None
    prev_above: bool = False
    last_event_ms: int | None = None
    events: int = 0


def detect(frame: MotionFrame, state: DetectorState) -> tuple[GestureEvent | None, DetectorState]:
    cfg = state.config
    t = frame.timestamp_ms
    if state.last_timestamp_ms is not None and t < state.last_timestamp_ms:
        raise OutOfOrderTimestamp(f"timestamp {t} < previous {state.last_timestamp_ms}")
    value = frame.axis(cfg.axis)
    above = value > cfg.tau
    fire = (
        above
        and not state.prev_above
        and (state.last_event_ms is None or t - state.last_event_ms >= cfg.refractory_ms)
    )
    if not fire:
        return None, replace(state, last_timestamp_ms=t, prev_above=above)
    event = GestureEvent(t, value, state.events)
    return event, replace(
        state, last_timestamp_ms=t, prev_above=True, last_event_ms=t, events=state.events + 1
    )


def detect_stream(frames: Iterable[MotionFrame], config: DetectorConfig = DetectorConfig()) -> list[GestureEvent]:
    state = DetectorState(config)
    out = []
    for frame in frames:
        event, state = detect(frame, state)
        if event is not None:
            out.append(event)
    return out


class GestureDetector:
    """Mutable wrapper owning a :class:`DetectorState`, for session loops."""

    def __init__(self, config: DetectorConfig = DetectorConfig()) -> None:
        self.state = DetectorState(config)

    @property
    def config(self) -> DetectorConfig:
        return self.state.config

    def update(self, frame: MotionFrame) -> GestureEvent | None:
        event, self.state = detect(frame, self.state)
        return event
