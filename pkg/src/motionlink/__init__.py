"""Motion-controller streaming: wire codec, gesture detection, sessions, link emulation and latency analysis."""

from .codec import (
    HAPTIC_FRAME_SIZE,
    MOTION_FRAME_SIZE,
    FrameHeader,
    HapticTrigger,
    MotionFrame,
    decode_frame,
    decode_haptic,
    decode_motion,
    encode_haptic,
    encode_motion,
    throughput_report,
)
from .gesture import DetectorConfig, GestureEvent, detect, detect_stream
from .latlab import analyze, filter_3sigma, haptic_rtt, normalize_offset, raw_latencies, report, summarize
from .netsim import REFERENCE_LINK, ClockModel, LinkModel, SimNetwork, udp_transport
from .session import ControllerSession, HostSession, SessionLog, merge_logs, run_controller, run_host
from .sim import SimConfig, run_sim
from .trace import GesturePulse, TraceSpec, generate, read_csv, write_csv

__version__ = "0.1.0"

__all__ = [
    "HAPTIC_FRAME_SIZE",
    "MOTION_FRAME_SIZE",
    "REFERENCE_LINK",
    "ClockModel",
    "ControllerSession",
    "DetectorConfig",
    "FrameHeader",
    "GestureEvent",
    "GesturePulse",
    "HapticTrigger",
    "HostSession",
    "LinkModel",
    "MotionFrame",
    "SessionLog",
    "SimConfig",
    "SimNetwork",
    "TraceSpec",
    "analyze",
    "decode_frame",
    "decode_haptic",
    "decode_motion",
    "detect",
    "detect_stream",
    "encode_haptic",
    "encode_motion",
    "filter_3sigma",
    "generate",
    "haptic_rtt",
    "merge_logs",
    "normalize_offset",
    "raw_latencies",
    "read_csv",
    "report",
    "run_controller",
    "run_host",
    "run_sim",
    "summarize",
    "throughput_report",
    "udp_transport",
    "write_csv",
]
