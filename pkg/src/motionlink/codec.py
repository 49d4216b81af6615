"""Wire codec for motion frames and haptic triggers.

On-air layout (all integers little-endian)::

    offset  size  field
    0       18    header    magic "MLNK", version, msg_type, session_id,
                            sequence, payload_len, flags
    18      34    envelope  env_version, cipher_id, nonce[16], auth_tag[16]
    52      n     payload   motion: 36 bytes, haptic trigger: 18 bytes

Motion payload: ``timestamp_ms u64 | ax ay az f32 | gx gy gz f32 | crc32 u32``
where the CRC (IEEE 802.3, reflected) covers the 32 bytes before it and is
stored as raw bits.  Haptic payload: ``ref_timestamp_ms u64 | intensity f32 |
sharpness f32 | duration_ms u16``.

The auth tag covers header, envelope prefix, nonce and payload.  Decoding
authenticates *before* parsing any header field, so a tampered frame is
always reported as :class:`AuthFailure`.  An empty session key selects
unauthenticated mode (zero tag, never checked); the CRC is then the only
integrity check on motion payloads.
"""

from __future__ import annotations

import binascii
import hmac
import math
import struct
from dataclasses import dataclass, field
from hashlib import sha256
from typing import Iterable

MAGIC = b"MLNK"
VERSION = 1
ENV_VERSION = 1
MSG_MOTION = 1
MSG_HAPTIC = 2

CIPHER_NULL = 0
CIPHER_AES_GCM = 1

HEADER = struct.Struct("<4sBBIIHH")
ENVELOPE = struct.Struct("<BB16s16s")
MOTION_BODY = struct.Struct("<Q3f3f")
CRC_FIELD = struct.Struct("<I")
HAPTIC_PAYLOAD = struct.Struct("<QffH")

HEADER_SIZE = HEADER.size  # 18
ENVELOPE_SIZE = ENVELOPE.size  # 34
MOTION_PAYLOAD_SIZE = MOTION_BODY.size + CRC_FIELD.size  # 36
HAPTIC_PAYLOAD_SIZE = HAPTIC_PAYLOAD.size  # 18
PREFIX_SIZE = HEADER_SIZE + ENVELOPE_SIZE
MOTION_FRAME_SIZE = PREFIX_SIZE + MOTION_PAYLOAD_SIZE  # 88
HAPTIC_FRAME_SIZE = PREFIX_SIZE + HAPTIC_PAYLOAD_SIZE  # 70

PAYLOAD_SIZES = {MSG_MOTION: MOTION_PAYLOAD_SIZE, MSG_HAPTIC: HAPTIC_PAYLOAD_SIZE}

NONCE_SIZE = 16
TAG_SIZE = 16
SALT_SIZE = 8
U64_MAX = 2**64 - 1
U32_MAX = 2**32 - 1

# the externally quoted throughput figure, kept only for the discrepancy footnote
QUOTED_THROUGHPUT_KIBIT = 7.0


class CodecError(ValueError):
    """Base class for frame encode/decode failures."""

    def __init__(self, message: str, sequence: int | None = None) -> None:
        self.sequence = sequence
        if sequence is not None:
            message = f"{message} (seq={sequence})"
        super().__init__(message)


class FrameTooShort(CodecError):
    pass


class BadMagic(CodecError):
    pass


class UnsupportedVersion(CodecError):
    pass


class UnsupportedCipher(CodecError):
    pass


class UnknownMessageType(CodecError):
    pass


class MalformedFrame(CodecError):
    pass


class AuthFailure(CodecError):
    pass


class ChecksumMismatch(CodecError):
    pass


class NonFiniteSensorValue(CodecError):
    pass


class ValueOutOfRange(CodecError):
    pass


def to_f32(x: float) -> float:
    """Round a Python float to the nearest IEEE-754 single."""
    try:
        return struct.unpack("<f", struct.pack("<f", x))[0]
    except OverflowError:
        return math.copysign(math.inf, x)


def _vec3(values: Iterable[float]) -> tuple[float, float, float]:
    v = tuple(to_f32(float(x)) for x in values)
    if len(v) != 3:
        raise ValueError(f"expected 3 components, got {len(v)}")
    return v  # type: ignore[return-value]


@dataclass(frozen=True)
class MotionFrame:
    """One IMU sample. Sensor values are stored rounded to float32."""

    timestamp_ms: int
    accel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if not 0 <= self.timestamp_ms <= U64_MAX:
            raise ValueError(f"timestamp_ms out of u64 range: {self.timestamp_ms}")
        object.__setattr__(self, "timestamp_ms", int(self.timestamp_ms))
        object.__setattr__(self, "accel", _vec3(self.accel))
        object.__setattr__(self, "gyro", _vec3(self.gyro))

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.accel + self.gyro)

    def axis(self, name: str) -> float:
        return self.accel["xyz".index(name.lower())]


@dataclass(frozen=True)
class HapticTrigger:
    ref_timestamp_ms: int
    intensity: float = 1.0
    sharpness: float = 1.0
    duration_ms: int = 20

    def __post_init__(self) -> None:
        object.__setattr__(self, "intensity", to_f32(float(self.intensity)))
        object.__setattr__(self, "sharpness", to_f32(float(self.sharpness)))


@dataclass
class FrameHeader:
    msg_type: int = MSG_MOTION
    session_id: int = 0
    sequence: int = 0
    payload_len: int = MOTION_PAYLOAD_SIZE
    flags: int = 0
    magic: bytes = MAGIC
    version: int = VERSION

    def pack(self) -> bytes:
        return HEADER.pack(
            self.magic,
            self.version,
            self.msg_type,
            self.session_id,
            self.sequence,
            self.payload_len,
            self.flags,
        )

    @classmethod
    def unpack(cls, data: bytes) -> FrameHeader:
        magic, version, msg_type, sid, seq, plen, flags = HEADER.unpack_from(data)
        return cls(msg_type, sid, seq, plen, flags, magic, version)


@dataclass(frozen=True)
class Envelope:
    env_version: int = ENV_VERSION
    cipher_id: int = CIPHER_NULL
    nonce: bytes = field(default=bytes(NONCE_SIZE))
    auth_tag: bytes = field(default=bytes(TAG_SIZE))

    def pack(self) -> bytes:
        return ENVELOPE.pack(self.env_version, self.cipher_id, self.nonce, self.auth_tag)

    @classmethod
    def unpack(cls, data: bytes, offset: int = HEADER_SIZE) -> Envelope:
        return cls(*ENVELOPE.unpack_from(data, offset))


def crc32(data: bytes) -> int:
    return binascii.crc32(data) & 0xFFFFFFFF


def make_nonce(session_id: int, sequence: int, salt: bytes) -> bytes:
    if len(salt) != SALT_SIZE:
        raise ValueError(f"nonce salt must be {SALT_SIZE} bytes")
    return struct.pack("<II", session_id, sequence) + salt


# -- ciphers -----------------------------------------------------------------


class NullCipher:
    """Plaintext payload, 16-byte truncated HMAC-SHA256 tag."""

    cipher_id = CIPHER_NULL

    def seal(self, key: bytes, nonce: bytes, aad: bytes, plaintext: bytes) -> tuple[bytes, bytes]:
        if not key:
            return plaintext, bytes(TAG_SIZE)
        return plaintext, self._tag(key, nonce, aad, plaintext)

    def open(self, key: bytes, nonce: bytes, aad: bytes, ciphertext: bytes, tag: bytes) -> bytes:
        if key and not hmac.compare_digest(tag, self._tag(key, nonce, aad, ciphertext)):
            raise AuthFailure("auth tag mismatch")
        return ciphertext

    @staticmethod
    def _tag(key: bytes, nonce: bytes, aad: bytes, payload: bytes) -> bytes:
        return hmac.new(key, nonce + aad + payload, sha256).digest()[:TAG_SIZE]


class AesGcmCipher:
    """AES-GCM with a 16-byte nonce; needs the optional ``cryptography`` package."""

    cipher_id = CIPHER_AES_GCM

    def _aead(self, key: bytes):
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM

        return AESGCM(key)

    def seal(self, key: bytes, nonce: bytes, aad: bytes, plaintext: bytes) -> tuple[bytes, bytes]:
        if len(key) not in (16, 24, 32):
            raise ValueError("AES-GCM needs a 16, 24 or 32 byte key")
        out = self._aead(key).encrypt(nonce, plaintext, aad)
        return out[:-TAG_SIZE], out[-TAG_SIZE:]

    def open(self, key: bytes, nonce: bytes, aad: bytes, ciphertext: bytes, tag: bytes) -> bytes:
        from cryptography.exceptions import InvalidTag

        if len(key) not in (16, 24, 32):
            raise AuthFailure("AES-GCM key has invalid length")
        try:
            return self._aead(key).decrypt(nonce, ciphertext + tag, aad)
        except InvalidTag:
            raise AuthFailure("auth tag mismatch") from None


CIPHERS = {CIPHER_NULL: NullCipher(), CIPHER_AES_GCM: AesGcmCipher()}


def register_cipher(cipher) -> None:
    CIPHERS[cipher.cipher_id] = cipher


# -- encode ------------------------------------------------------------------


def _seal(
    msg_type: int,
    payload: bytes,
    session_key: bytes,
    header_state: FrameHeader,
    salt: bytes,
    cipher_id: int,
) -> bytes:
    if header_state.msg_type != msg_type:
        raise ValueError(f"header msg_type {header_state.msg_type} != {msg_type}")
    if not 0 <= header_state.sequence <= U32_MAX or not 0 <= header_state.session_id <= U32_MAX:
        raise ValueError("session_id and sequence must fit in 32 bits")
    try:
        cipher = CIPHERS[cipher_id]
    except KeyError:
        raise UnsupportedCipher(f"unknown cipher id {cipher_id}") from None
    header = FrameHeader(
        msg_type,
        header_state.session_id,
        header_state.sequence,
        len(payload),
        header_state.flags,
        header_state.magic,
        header_state.version,
    ).pack()
    nonce = make_nonce(header_state.session_id, header_state.sequence, salt)
    env_prefix = bytes((ENV_VERSION, cipher_id))
    body, tag = cipher.seal(session_key, nonce, header + env_prefix, payload)
    return header + Envelope(ENV_VERSION, cipher_id, nonce, tag).pack() + body


def motion_payload(frame: MotionFrame) -> bytes:
    body = MOTION_BODY.pack(frame.timestamp_ms, *frame.accel, *frame.gyro)
    return body + CRC_FIELD.pack(crc32(body))


def encode_motion(
    frame: MotionFrame,
    session_key: bytes,
    header_state: FrameHeader,
    *,
    salt: bytes = bytes(SALT_SIZE),
    cipher_id: int = CIPHER_NULL,
) -> bytes:
    if not frame.is_finite():
        raise NonFiniteSensorValue("sensor values must be finite", header_state.sequence)
    return _seal(MSG_MOTION, motion_payload(frame), session_key, header_state, salt, cipher_id)


def encode_haptic(
    trigger: HapticTrigger,
    session_key: bytes,
    header_state: FrameHeader,
    *,
    salt: bytes = bytes(SALT_SIZE),
    cipher_id: int = CIPHER_NULL,
) -> bytes:
    seq = header_state.sequence
    for name in ("intensity", "sharpness"):
        v = getattr(trigger, name)
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            raise ValueOutOfRange(f"{name} must lie in [0, 1], got {v}", seq)
    if not 0 <= trigger.duration_ms <= 0xFFFF:
        raise ValueOutOfRange(f"duration_ms out of u16 range: {trigger.duration_ms}", seq)
    if not 0 <= trigger.ref_timestamp_ms <= U64_MAX:
        raise ValueOutOfRange("ref_timestamp_ms out of u64 range", seq)
    payload = HAPTIC_PAYLOAD.pack(
        trigger.ref_timestamp_ms, trigger.intensity, trigger.sharpness, trigger.duration_ms
    )
    return _seal(MSG_HAPTIC, payload, session_key, header_state, salt, cipher_id)


# -- decode ------------------------------------------------------------------


def _raw_sequence(data: bytes) -> int | None:
    if len(data) >= HEADER_SIZE:
        return struct.unpack_from("<I", data, 10)[0]
    return None


def _open(data: bytes, session_key: bytes, frame_len: int) -> tuple[FrameHeader, bytes]:
    """Authenticate ``data[:frame_len]`` and return (header, plaintext payload)."""
    seq = _raw_sequence(data)
    env = Envelope.unpack(data)
    if env.env_version != ENV_VERSION:
        raise UnsupportedVersion(f"envelope version {env.env_version}", seq)
    cipher = CIPHERS.get(env.cipher_id)
    if cipher is None:
        raise UnsupportedCipher(f"unknown cipher id {env.cipher_id}", seq)
    header_bytes = data[:HEADER_SIZE]
    aad = header_bytes + bytes((env.env_version, env.cipher_id))
    try:
        payload = cipher.open(session_key, env.nonce, aad, data[PREFIX_SIZE:frame_len], env.auth_tag)
    except AuthFailure as exc:
        raise AuthFailure(str(exc), seq) from None

    header = FrameHeader.unpack(header_bytes)
    if header.magic != MAGIC:
        raise BadMagic(f"bad magic {header.magic!r}", seq)
    if header.version != VERSION:
        raise UnsupportedVersion(f"header version {header.version}", seq)
    expected = PAYLOAD_SIZES.get(header.msg_type)
    if expected is None:
        raise UnknownMessageType(f"unknown msg_type {header.msg_type}", seq)
    if header.payload_len != expected or len(payload) != expected:
        raise MalformedFrame(
            f"payload_len {header.payload_len} invalid for msg_type {header.msg_type}", seq
        )
    return header, payload


def _parse_motion(payload: bytes, seq: int) -> MotionFrame:
    body = payload[: MOTION_BODY.size]
    (stored,) = CRC_FIELD.unpack_from(payload, MOTION_BODY.size)
    computed = crc32(body)
    if stored != computed:
        raise ChecksumMismatch(f"crc32 stored 0x{stored:08X} != computed 0x{computed:08X}", seq)
    t, ax, ay, az, gx, gy, gz = MOTION_BODY.unpack(body)
    return MotionFrame(t, (ax, ay, az), (gx, gy, gz))


def _parse_haptic(payload: bytes, seq: int) -> HapticTrigger:
    t, intensity, sharpness, duration = HAPTIC_PAYLOAD.unpack(payload)
    for name, v in (("intensity", intensity), ("sharpness", sharpness)):
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            raise MalformedFrame(f"{name} out of range: {v}", seq)
    return HapticTrigger(t, intensity, sharpness, duration)


def _check_type(header: FrameHeader, msg_type: int) -> None:
    if header.msg_type != msg_type:
        raise UnknownMessageType(
            f"expected msg_type {msg_type}, got {header.msg_type}", header.sequence
        )


def decode_motion(data: bytes, session_key: bytes) -> MotionFrame:
    if len(data) < MOTION_FRAME_SIZE:
        raise FrameTooShort(f"{len(data)} bytes < {MOTION_FRAME_SIZE}", _raw_sequence(data))
    header, payload = _open(data, session_key, MOTION_FRAME_SIZE)
    _check_type(header, MSG_MOTION)
    return _parse_motion(payload, header.sequence)


def decode_haptic(data: bytes, session_key: bytes) -> HapticTrigger:
    if len(data) < HAPTIC_FRAME_SIZE:
        raise FrameTooShort(f"{len(data)} bytes < {HAPTIC_FRAME_SIZE}", _raw_sequence(data))
    header, payload = _open(data, session_key, HAPTIC_FRAME_SIZE)
    _check_type(header, MSG_HAPTIC)
    return _parse_haptic(payload, header.sequence)


def decode_frame(data: bytes, session_key: bytes) -> tuple[FrameHeader, MotionFrame | HapticTrigger]:
    """Decode one whole datagram of either message type."""
    if len(data) < PREFIX_SIZE + min(PAYLOAD_SIZES.values()):
        raise FrameTooShort(f"{len(data)} bytes is shorter than any frame", _raw_sequence(data))
    header, payload = _open(data, session_key, len(data))
    if header.msg_type == MSG_MOTION:
        return header, _parse_motion(payload, header.sequence)
    return header, _parse_haptic(payload, header.sequence)


def peek_header(data: bytes) -> FrameHeader:
    """Unauthenticated header read, for routing only."""
    if len(data) < HEADER_SIZE:
        raise FrameTooShort(f"{len(data)} bytes < header size {HEADER_SIZE}")
    return FrameHeader.unpack(data)


def describe_frame(data: bytes) -> list[tuple[int, int, str, str]]:
    """Field-by-field (offset, size, name, value) rows for inspection."""
    rows: list[tuple[int, int, str, str]] = []
    h = FrameHeader.unpack(data)
    env = Envelope.unpack(data)
    rows += [
        (0, 4, "magic", repr(h.magic)),
        (4, 1, "version", str(h.version)),
        (5, 1, "msg_type", str(h.msg_type)),
        (6, 4, "session_id", f"0x{h.session_id:08X}"),
        (10, 4, "sequence", str(h.sequence)),
        (14, 2, "payload_len", str(h.payload_len)),
        (16, 2, "flags", f"0x{h.flags:04X}"),
        (18, 1, "env_version", str(env.env_version)),
        (19, 1, "cipher_id", str(env.cipher_id)),
        (20, 16, "nonce", env.nonce.hex()),
        (36, 16, "auth_tag", env.auth_tag.hex()),
    ]
    payload = data[PREFIX_SIZE:]
    if h.msg_type == MSG_MOTION and len(payload) >= MOTION_PAYLOAD_SIZE:
        t, ax, ay, az, gx, gy, gz = MOTION_BODY.unpack_from(payload)
        (crc,) = CRC_FIELD.unpack_from(payload, MOTION_BODY.size)
        off = PREFIX_SIZE
        rows.append((off, 8, "timestamp_ms", str(t)))
        for i, (name, v) in enumerate(zip(("ax", "ay", "az", "gx", "gy", "gz"), (ax, ay, az, gx, gy, gz))):
            rows.append((off + 8 + 4 * i, 4, name, repr(v)))
        rows.append((off + 32, 4, "checksum", f"0x{crc:08X}"))
    elif h.msg_type == MSG_HAPTIC and len(payload) >= HAPTIC_PAYLOAD_SIZE:
        t, i, s, d = HAPTIC_PAYLOAD.unpack_from(payload)
        off = PREFIX_SIZE
        rows += [
            (off, 8, "ref_timestamp_ms", str(t)),
            (off + 8, 4, "intensity", repr(i)),
            (off + 12, 4, "sharpness", repr(s)),
            (off + 16, 2, "duration_ms", str(d)),
        ]
    return rows


def to_hex(data: bytes, width: int = 16) -> str:
    return "\n".join(data[i : i + width].hex(" ") for i in range(0, len(data), width)) + "\n"


def from_hex(text: str) -> bytes:
    """Parse a hex dump; ``#`` starts a comment, whitespace is ignored."""
    digits = "".join(line.split("#", 1)[0] for line in text.splitlines())
    return bytes.fromhex("".join(digits.split()))


# -- throughput ---------------------------------------------------------------


@dataclass(frozen=True)
class Throughput:
    rate_hz: float
    on_air_bytes: int
    bits_per_s: float
    kbit_per_s: float
    kibit_per_s: float

    def as_dict(self) -> dict:
        return {
            "rate_hz": self.rate_hz,
            "on_air_bytes": self.on_air_bytes,
            "bits_per_s": self.bits_per_s,
            "kbit_per_s": self.kbit_per_s,
            "kibit_per_s": self.kibit_per_s,
        }

    def to_text(self) -> str:
        lines = [
            f"rate            {self.rate_hz:g} Hz",
            f"on-air frame    {self.on_air_bytes} B",
            f"throughput      {self.bits_per_s:g} bit/s",
            f"                {self.kbit_per_s:g} kbit/s (SI, /1000)",
            f"                {self.kibit_per_s:g} kibit/s (binary, /1024)",
        ]
        if (self.rate_hz, self.on_air_bytes) == (10, MOTION_FRAME_SIZE):
            lines += [
                "",
                f"[1] A figure of {QUOTED_THROUGHPUT_KIBIT} kibit/s is often quoted for this operating point;",
                f"    exact arithmetic gives {self.kibit_per_s:g} kibit/s = {self.kbit_per_s:g} kbit/s.",
                "    The 7.0 value is a rounding / kbit-vs-kibit discrepancy and is not used here.",
            ]
        return "\n".join(lines) + "\n"


def throughput_report(rate_hz: float, on_air_bytes: int) -> Throughput:
    if not rate_hz > 0 or not math.isfinite(rate_hz):
        raise ValueError(f"rate_hz must be positive and finite, got {rate_hz}")
    if on_air_bytes <= 0:
        raise ValueError(f"on_air_bytes must be positive, got {on_air_bytes}")
    bits = rate_hz * on_air_bytes * 8
    return Throughput(rate_hz, on_air_bytes, bits, bits / 1000, bits / 1024)
