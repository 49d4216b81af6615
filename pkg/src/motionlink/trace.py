"""Synthetic IMU traces (half-sine gesture pulses plus Gaussian noise) and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .codec import MotionFrame
from .rng import PortableRng

CSV_HEADER = ["t_ms", "ax", "ay", "az", "gx", "gy", "gz"]
CHANNELS = ("x", "y", "z", "gx", "gy", "gz")


class InvalidSpec(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class GesturePulse:
    onset_s: float
    amplitude: float = 1.0
    width_ms: float = 200.0
    axis: str = "y"


@dataclass(frozen=True)
class TraceSpec:
    duration_s: float
    rate_hz: float = 10.0
    gestures: Sequence[GesturePulse] = field(default_factory=tuple)
    noise_sigma: float = 0.0
    seed: int = 0
    start_ms: int = 0

    def validate(self) -> None:
        if not (self.rate_hz > 0 and math.isfinite(self.rate_hz)):
            raise InvalidSpec(f"rate_hz must be > 0, got {self.rate_hz}")
        if not self.duration_s >= 0:
            raise InvalidSpec(f"duration_s must be >= 0, got {self.duration_s}")
        if not self.noise_sigma >= 0:
            raise InvalidSpec(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for g in self.gestures:
            if not 0 <= g.onset_s <= self.duration_s:
                raise InvalidSpec(f"gesture onset {g.onset_s} s outside [0, {self.duration_s}]")
            if not g.width_ms > 0:
                raise InvalidSpec(f"gesture width must be > 0 ms, got {g.width_ms}")
            if g.axis not in CHANNELS:
                raise InvalidSpec(f"gesture axis must be one of {CHANNELS}, got {g.axis!r}")

    @property
    def n_frames(self) -> int:
        # round() absorbs float noise such as 0.3 * 10 = 3.0000000000000004
        return math.ceil(round(self.duration_s * self.rate_hz, 9))


def periodic_gestures(
    count: int,
    every_s: float = 5.0,
    first_center_s: float = 5.0,
    amplitude: float = 1.0,
    width_ms: float = 200.0,
    axis: str = "y",
) -> list[GesturePulse]:
    """Evenly spaced pulses, each centred on ``first_center_s + k * every_s``."""
    half = width_ms / 2000.0
    return [
        GesturePulse(first_center_s + k * every_s - half, amplitude, width_ms, axis)
        for k in range(count)
    ]


def pulse_value(t_ms: float, g: GesturePulse) -> float:
    rel = t_ms - g.onset_s * 1000.0
    if 0.0 <= rel <= g.width_ms:
        return g.amplitude * math.sin(math.pi * rel / g.width_ms)
    return 0.0


def generate(spec: TraceSpec) -> list[MotionFrame]:
    spec.validate()
    rng = PortableRng(spec.seed, "trace-noise")
    frames = []
    for k in range(spec.n_frames):
        t_ms = k * 1000.0 / spec.rate_hz
        ch = dict.fromkeys(CHANNELS, 0.0)
        for g in spec.gestures:
            ch[g.axis] += pulse_value(t_ms, g)
        if spec.noise_sigma > 0:
            for axis in ("x", "y", "z"):
                ch[axis] += rng.normal(0.0, spec.noise_sigma)
        frames.append(
            MotionFrame(
                spec.start_ms + round(t_ms),
                (ch["x"], ch["y"], ch["z"]),
                (ch["gx"], ch["gy"], ch["gz"]),
            )
        )
    return frames


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_csv(frames: Iterable[MotionFrame], path: str | Path | TextIO) -> None:
    if hasattr(path, "write"):
        _write_rows(frames, path)  # type: ignore[arg-type]
        return
    with open(path, "w", newline="") as fh:
        _write_rows(frames, fh)


def _write_rows(frames: Iterable[MotionFrame], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for f in frames:
        w.writerow([f.timestamp_ms, *map(_fmt, f.accel), *map(_fmt, f.gyro)])


def read_csv(path: str | Path) -> list[MotionFrame]:
    frames = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("missing header row", 1)
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} columns, got {len(row)}", line)
            try:
                t = int(row[0])
                vals = [float(c) for c in row[1:]]
                frames.append(MotionFrame(t, vals[:3], vals[3:]))
            except ValueError as exc:
                raise ParseError(str(exc), line) from None
    return frames
