"""``motionlink`` command line.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 protocol or analysis error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import codec, latlab
from .codec import CodecError
from .gesture import DetectorConfig
from .netsim import ClockModel, LinkModel, TransportError, WallClock, udp_transport
from .session import (
    ControllerSession,
    HostSession,
    LogFormatError,
    SessionLog,
    SessionMismatch,
    SourceExhausted,
    merge_logs,
    run_controller,
    run_host,
)
from .sim import DEFAULT_EPOCH_MS, DEFAULT_KEY, DEFAULT_SESSION_ID, SimConfig, run_sim
from .trace import GesturePulse, ParseError, InvalidSpec, TraceSpec, generate, periodic_gestures, read_csv, write_csv

EXIT_USAGE, EXIT_IO, EXIT_PROTOCOL = 1, 2, 3

PROTOCOL_ERRORS = (
    CodecError,
    latlab.EmptyLog,
    latlab.NoHapticEvents,
    LogFormatError,
    SessionMismatch,
    ParseError,
    SourceExhausted,
)

# config-file keys -> argparse dests
CONFIG_KEYS = {
    "base_delay_ms": "delay",
    "jitter_sigma_ms": "jitter",
    "min_delay_ms": "min_delay",
    "max_delay_ms": "max_delay",
    "loss_prob": "loss",
    "ordered": "ordered",
    "seed": "seed",
}
CLOCK_KEYS = {"offset_ms": "clock_offset", "drift_ppm": "clock_drift"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _key(args) -> bytes:
    if args.no_auth:
        return b""
    if args.key_hex:
        return bytes.fromhex(args.key_hex)
    return args.key.encode()


def _add_key_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("session key")
    g.add_argument("--key", default=DEFAULT_KEY.decode(), help="session key as UTF-8 text (default: %(default)s)")
    g.add_argument("--key-hex", help="session key as hex, overrides --key")
    g.add_argument("--no-auth", action="store_true", help="empty key: no auth tag, CRC only")
    g.add_argument("--cipher", type=int, default=codec.CIPHER_NULL, choices=sorted(codec.CIPHERS),
                   help="cipher id: 0 null (keyed tag), 1 AES-GCM (default: %(default)s)")


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("gesture detector")
    g.add_argument("--tau", type=float, default=0.5, help="threshold in m/s^2 (default: %(default)s)")
    g.add_argument("--refractory-ms", type=int, default=500, help="default: %(default)s")
    g.add_argument("--axis", choices=("x", "y", "z"), default="y", help="default: %(default)s")


def _add_trace_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic trace")
    g.add_argument("--gesture-every", type=float, default=5.0, metavar="S",
                   help="one gesture per S seconds, first centred at S/2 (default: %(default)s)")
    g.add_argument("--gesture", action="append", default=[], metavar="ONSET[:AMP[:WIDTH_MS[:AXIS]]]",
                   help="explicit gesture pulse; repeatable, replaces --gesture-every")
    g.add_argument("--amplitude", type=float, default=1.0, help="default: %(default)s m/s^2")
    g.add_argument("--width-ms", type=float, default=200.0, help="default: %(default)s")
    g.add_argument("--noise", type=float, default=0.1, help="noise sigma in m/s^2 (default: %(default)s)")


def _detector(args) -> DetectorConfig:
    return DetectorConfig(args.tau, args.refractory_ms, args.axis)


def _parse_gesture(text: str) -> GesturePulse:
    parts = text.split(":")
    try:
        onset = float(parts[0])
        amp = float(parts[1]) if len(parts) > 1 else 1.0
        width = float(parts[2]) if len(parts) > 2 else 200.0
    except ValueError:
        raise UsageError(f"bad --gesture {text!r}") from None
    axis = parts[3] if len(parts) > 3 else "y"
    return GesturePulse(onset, amp, width, axis)


def _trace_spec(args, duration_s: float, rate_hz: float) -> TraceSpec:
    if args.gesture:
        gestures = [_parse_gesture(g) for g in args.gesture]
    elif args.gesture_every > 0:
        gestures = periodic_gestures(
            int(duration_s // args.gesture_every),
            every_s=args.gesture_every,
            first_center_s=args.gesture_every / 2,
            amplitude=args.amplitude,
            width_ms=args.width_ms,
        )
    else:
        gestures = []
    return TraceSpec(duration_s, rate_hz, gestures, args.noise, args.seed)


def _write(data: bytes, out: str | None) -> None:
    if out and out != "-":
        Path(out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())
        sys.stdout.flush()


# -- subcommands ---------------------------------------------------------------


def cmd_gen_trace(args) -> int:
    frames = generate(_trace_spec(args, args.duration, args.rate))
    if args.out in (None, "-"):
        write_csv(frames, sys.stdout)
    else:
        write_csv(frames, args.out)
        print(f"wrote {len(frames)} frames to {args.out}", file=sys.stderr)
    return 0


def _load_frame_bytes(src: str, raw: bool) -> bytes:
    path = Path(src)
    if path.exists():
        data = path.read_bytes()
        if raw:
            return data
        try:
            return codec.from_hex(data.decode())
        except (UnicodeDecodeError, ValueError):
            return data
    try:
        return codec.from_hex(src)
    except ValueError:
        raise UsageError(f"{src!r} is neither a file nor a hex string") from None


def cmd_inspect(args) -> int:
    data = _load_frame_bytes(args.frame, args.raw)
    if len(data) < codec.PREFIX_SIZE:
        raise codec.FrameTooShort(f"{len(data)} bytes is shorter than header + envelope")
    print(f"{len(data)} bytes")
    print(f"{'offset':>6} {'size':>4}  {'field':<16} value")
    for off, size, name, value in codec.describe_frame(data):
        print(f"{off:>6} {size:>4}  {name:<16} {value}")
    header, msg = codec.decode_frame(data, _key(args))
    print(f"verify: ok ({type(msg).__name__}, seq={header.sequence})")
    return 0


def _link(args) -> LinkModel:
    return LinkModel(
        base_delay_ms=args.delay,
        jitter_sigma_ms=args.jitter,
        min_delay_ms=args.min_delay,
        max_delay_ms=args.max_delay,
        loss_prob=args.loss,
        ordered=args.ordered,
        seed=args.seed,
    )


def cmd_sim(args) -> int:
    rate = args.rate
    frames = args.frames if args.duration is None else None
    link = _link(args)
    back = None
    if args.return_delay is not None or args.return_jitter is not None:
        back = LinkModel(
            base_delay_ms=args.delay if args.return_delay is None else args.return_delay,
            jitter_sigma_ms=args.jitter if args.return_jitter is None else args.return_jitter,
            min_delay_ms=None,
            max_delay_ms=None,
            loss_prob=args.loss,
            ordered=args.ordered,
            seed=args.seed,
        )
    trace = read_csv(args.trace) if args.trace else None
    common = dict(
        link=link,
        return_link=back,
        controller_clock=ClockModel(args.clock_offset, args.clock_drift),
        host_clock=ClockModel(args.host_clock_offset, 0.0),
        detector=_detector(args),
        processing_delay_ms=args.processing_delay,
        trace=trace,
        seed=args.seed,
        session_key=_key(args),
        cipher_id=args.cipher,
        epoch_ms=args.epoch_ms,
        session_id=args.session_id,
    )
    if frames is None:
        cfg = SimConfig.for_duration(args.duration, rate, **common)
    else:
        cfg = SimConfig(frames=frames, rate_hz=rate, **common)
    if trace is None:
        spec = _trace_spec(args, cfg.frames / rate, rate)
        cfg = replace(cfg, trace=generate(spec))
    result = run_sim(cfg)
    if args.out_log:
        result.merged.write(args.out_log)
    if args.controller_log:
        result.controller.write(args.controller_log)
    if args.host_log:
        result.host.write(args.host_log)
    _write(latlab.render_analysis(latlab.analyze(result.merged), args.format), args.report_out)
    return 0


def cmd_analyze(args) -> int:
    log = SessionLog.read(args.log)
    if args.host_log:
        log = merge_logs(log, SessionLog.read(args.host_log))
    analysis = latlab.analyze(log)
    _write(latlab.render_analysis(analysis, args.format), args.out)
    return 0


def cmd_throughput(args) -> int:
    t = codec.throughput_report(args.rate, args.bytes)
    if args.format == "json":
        print(json.dumps(t.as_dict(), indent=2))
    else:
        sys.stdout.write(t.to_text())
    return 0


def cmd_serve(args) -> int:
    with udp_transport(args.bind, args.peer) as transport:
        print(f"serving on {transport.local_addr[0]}:{transport.local_addr[1]}", file=sys.stderr)
        host = HostSession(
            args.session_id,
            transport,
            WallClock(),
            session_key=_key(args),
            detector=_detector(args),
            action_sink=(lambda ev: print(f"gesture seq={ev.sequence} t={ev.frame_timestamp_ms} "
                                          f"peak={ev.peak_value:.3f}", file=sys.stderr))
            if args.verbose else None,
            cipher_id=args.cipher,
        )
        log = run_host(
            host,
            max_frames=args.frames,
            idle_timeout_s=args.idle_timeout,
            first_frame_timeout_s=args.wait,
        )
    if args.log:
        log.write(args.log)
    c = log.counters
    print(f"received {c.received}, gestures {c.gestures}, haptic sent {c.haptic_sent}, "
          f"auth failures {c.auth_failures}, checksum failures {c.checksum_failures}", file=sys.stderr)
    return 0


def cmd_control(args) -> int:
    n = args.frames
    if args.trace:
        source = read_csv(args.trace)
    else:
        source = generate(_trace_spec(args, n / args.rate, args.rate))
    with udp_transport(args.bind, args.peer) as transport:
        ctrl = ControllerSession(
            args.session_id if args.session_id is not None else DEFAULT_SESSION_ID,
            transport,
            WallClock(),
            source,
            session_key=_key(args),
            send_rate_hz=args.rate,
            cipher_id=args.cipher,
        )
        log = run_controller(ctrl, n / args.rate, linger_s=args.linger)
    if args.log:
        log.write(args.log)
    c = log.counters
    print(f"sent {c.sent}, haptic received {c.haptic_received}", file=sys.stderr)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="motionlink", description="Motion-controller streaming: codec, simulator and latency lab.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-trace", help="write a synthetic IMU trace as CSV")
    g.add_argument("--duration", type=float, default=100.0, help="seconds (default: %(default)s)")
    g.add_argument("--rate", type=float, default=10.0, help="Hz (default: %(default)s)")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", "-o")
    _add_trace_flags(g)
    g.set_defaults(func=cmd_gen_trace)

    i = sub.add_parser("inspect", help="decode one frame and dump its fields with offsets")
    i.add_argument("frame", help="hex string, hex-dump file or raw file")
    i.add_argument("--raw", action="store_true", help="treat the file as raw bytes")
    _add_key_flags(i)
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("sim", help="run a session in virtual time and print the latency report")
    s.add_argument("--config", help="JSON file with link/clock keys; explicit flags win")
    s.add_argument("--frames", type=int, default=1000, help="default: %(default)s")
    s.add_argument("--duration", type=float, help="seconds; overrides --frames")
    s.add_argument("--rate", type=float, default=10.0, help="Hz (default: %(default)s)")
    s.add_argument("--delay", type=float, default=70.4, help="base one-way delay ms (default: %(default)s)")
    s.add_argument("--jitter", type=float, default=3.7, help="Gaussian jitter sigma ms (default: %(default)s)")
    s.add_argument("--min", dest="min_delay", type=float, default=52.2, help="default: %(default)s ms")
    s.add_argument("--max", dest="max_delay", type=float, default=82.2, help="default: %(default)s ms")
    s.add_argument("--loss", type=float, default=0.0, help="loss probability (default: %(default)s)")
    s.add_argument("--unordered", dest="ordered", action="store_false", help="allow reordering")
    s.add_argument("--return-delay", type=float, help="host->controller base delay (default: same as --delay)")
    s.add_argument("--return-jitter", type=float, help="host->controller jitter (default: same as --jitter)")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--clock-offset", type=float, default=0.0, help="controller clock offset ms")
    s.add_argument("--clock-drift", type=float, default=0.0, help="controller clock drift ppm")
    s.add_argument("--host-clock-offset", type=float, default=0.0, help="host clock offset ms")
    s.add_argument("--processing-delay", type=float, default=0.0, help="host ms before haptic send")
    s.add_argument("--epoch-ms", type=int, default=DEFAULT_EPOCH_MS)
    s.add_argument("--session-id", type=lambda x: int(x, 0), default=DEFAULT_SESSION_ID)
    s.add_argument("--trace", help="replay this CSV trace instead of generating one")
    s.add_argument("--out-log", help="write the merged JSONL log here")
    s.add_argument("--controller-log")
    s.add_argument("--host-log")
    s.add_argument("--format", choices=latlab.FORMATS, default="text")
    s.add_argument("--report-out", help="write the report here instead of stdout")
    _add_trace_flags(s)
    _add_detector_flags(s)
    _add_key_flags(s)
    s.set_defaults(func=cmd_sim)

    a = sub.add_parser("analyze", help="latency report from a stored JSONL log")
    a.add_argument("log", help="merged log, or the controller log when --host-log is given")
    a.add_argument("--host-log", help="host-side log to merge with LOG")
    a.add_argument("--format", choices=latlab.FORMATS, default="text")
    a.add_argument("--out", "-o")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("throughput", help="on-air bit rate for a frame size and send rate")
    t.add_argument("--rate", type=float, default=10.0)
    t.add_argument("--bytes", type=int, default=codec.MOTION_FRAME_SIZE)
    t.add_argument("--format", choices=("text", "json"), default="text")
    t.set_defaults(func=cmd_throughput)

    sv = sub.add_parser("serve", help="host role over UDP")
    sv.add_argument("--bind", default="0.0.0.0:9750", help="host:port (default: %(default)s)")
    sv.add_argument("--peer", help="controller host:port (default: learned from first datagram)")
    sv.add_argument("--frames", type=int, help="stop after this many motion frames")
    sv.add_argument("--idle-timeout", type=float, default=2.0, help="seconds (default: %(default)s)")
    sv.add_argument("--wait", type=float, help="give up if no frame arrives within this many seconds")
    sv.add_argument("--session-id", type=lambda x: int(x, 0), help="accept only this session (default: first seen)")
    sv.add_argument("--log", help="write the host JSONL log here")
    _add_detector_flags(sv)
    _add_key_flags(sv)
    sv.set_defaults(func=cmd_serve)

    c = sub.add_parser("control", help="controller role over UDP")
    c.add_argument("--peer", default="127.0.0.1:9750", help="host host:port (default: %(default)s)")
    c.add_argument("--bind", default="0.0.0.0:0")
    c.add_argument("--frames", type=int, default=1000)
    c.add_argument("--rate", type=float, default=10.0)
    c.add_argument("--seed", type=int, default=42)
    c.add_argument("--trace", help="CSV trace to replay")
    c.add_argument("--linger", type=float, default=0.5, help="seconds to wait for late haptics")
    c.add_argument("--session-id", type=lambda x: int(x, 0))
    c.add_argument("--log", help="write the controller JSONL log here")
    _add_trace_flags(c)
    _add_key_flags(c)
    c.set_defaults(func=cmd_control)
    p.subcommands = sub.choices  # type: ignore[attr-defined]
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], args) -> argparse.Namespace:
    if getattr(args, "config", None) is None:
        return args
    cfg = json.loads(Path(args.config).read_text())
    defaults = {}
    for key, value in cfg.items():
        if key == "clock":
            for ck, cv in value.items():
                if ck not in CLOCK_KEYS:
                    raise UsageError(f"unknown clock key {ck!r} in {args.config}")
                defaults[CLOCK_KEYS[ck]] = cv
        elif key in CONFIG_KEYS:
            defaults[CONFIG_KEYS[key]] = value
        else:
            raise UsageError(f"unknown config key {key!r} in {args.config}")
    parser.subcommands[args.command].set_defaults(**defaults)  # type: ignore[attr-defined]
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config(parser, argv, args)
        return args.func(args)
    except SystemExit as exc:  # usage error while re-parsing with config defaults
        return int(exc.code or 0)
    except PROTOCOL_ERRORS as exc:
        print(f"motionlink: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (UsageError, InvalidSpec, ValueError) as exc:
        print(f"motionlink: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TransportError) as exc:
        print(f"motionlink: io: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
