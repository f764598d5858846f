"""Framed binary controller protocol ("CRNE").

Frame layout, all integers little-endian:

    magic    4 bytes  'C' 'R' 'N' 'E'
    version  u8       = 1
    type     u8
    flags    u16      = 0
    seq      u32      strictly increasing per direction per session
    t_ns     u64
    len      u16      payload byte count
    payload  len bytes
    crc      u32      CRC-32 (reflected IEEE polynomial, zlib) over all
                      preceding bytes

Message types and exact payload sizes are fixed; decode rejects bad magic,
bad version, bad CRC, bad lengths, and unknown types with distinct errors.
"""

import struct
import zlib
from dataclasses import dataclass, field

MAGIC = b"CRNE"
VERSION = 1

_HEADER = struct.Struct("<4sBBHIQH")
HEADER_LEN = _HEADER.size  # 22
CRC_LEN = 4

T_SETPOINT = 0x01
T_FEEDBACK = 0x02
T_HEARTBEAT = 0x03
T_ENABLE = 0x04
T_DISABLE = 0x05
T_ESTOP = 0x06
T_ACK = 0x07

ACK_OK = 0
ACK_REJECTED = 1


class FrameError(ValueError):
    code = "frame"


class TruncatedFrameError(FrameError):
    code = "truncated"


class BadMagicError(FrameError):
    code = "bad_magic"


class BadVersionError(FrameError):
    code = "bad_version"


class BadCrcError(FrameError):
    code = "bad_crc"


class LengthError(FrameError):
    code = "bad_length"


class UnknownTypeError(FrameError):
    code = "unknown_type"


@dataclass(frozen=True)
class Setpoint:
    seq: int
    t_ns: int
    q: tuple  # 8 joint position targets

    type_id = T_SETPOINT


@dataclass(frozen=True)
class Feedback:
    seq: int
    t_ns: int
    positions: tuple        # 8
    velocities: tuple       # 8
    clutch_temps: tuple     # 2
    safety_state: int       # SafetyState value
    clutch_bits: int
    fault_reason: int

    type_id = T_FEEDBACK


@dataclass(frozen=True)
class Heartbeat:
    seq: int
    t_ns: int

    type_id = T_HEARTBEAT


@dataclass(frozen=True)
class Enable:
    seq: int
    t_ns: int

    type_id = T_ENABLE


@dataclass(frozen=True)
class Disable:
    seq: int
    t_ns: int

    type_id = T_DISABLE


@dataclass(frozen=True)
class Estop:
    seq: int
    t_ns: int

    type_id = T_ESTOP


@dataclass(frozen=True)
class Ack:
    seq: int
    t_ns: int
    status: int
    acked_seq: int

    type_id = T_ACK


_SETPOINT_PAYLOAD = struct.Struct("<8d")
_FEEDBACK_PAYLOAD = struct.Struct("<8d8d2dBBB")
_ACK_PAYLOAD = struct.Struct("<BI")

PAYLOAD_SIZES = {
    T_SETPOINT: _SETPOINT_PAYLOAD.size,    # 64
    T_FEEDBACK: _FEEDBACK_PAYLOAD.size,    # 147
    T_HEARTBEAT: 0,
    T_ENABLE: 0,
    T_DISABLE: 0,
    T_ESTOP: 0,
    T_ACK: _ACK_PAYLOAD.size,              # 5
}


def _payload(msg) -> bytes:
    t = msg.type_id
    if t == T_SETPOINT:
        return _SETPOINT_PAYLOAD.pack(*msg.q)
    if t == T_FEEDBACK:
        return _FEEDBACK_PAYLOAD.pack(*msg.positions, *msg.velocities,
                                      *msg.clutch_temps, msg.safety_state,
                                      msg.clutch_bits, msg.fault_reason)
    if t == T_ACK:
        return _ACK_PAYLOAD.pack(msg.status, msg.acked_seq)
    return b""


def encode_frame(msg, flags: int = 0) -> bytes:
    payload = _payload(msg)
    head = _HEADER.pack(MAGIC, VERSION, msg.type_id, flags, msg.seq, msg.t_ns,
                        len(payload))
    body = head + payload
    return body + struct.pack("<I", zlib.crc32(body))


def decode_frame(buf: bytes):
    """Decode exactly one frame; raises a FrameError subclass on anything off."""
    if len(buf) < HEADER_LEN + CRC_LEN:
        raise TruncatedFrameError(f"frame shorter than minimum ({len(buf)} bytes)")
    magic, version, type_id, flags, seq, t_ns, plen = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    total = HEADER_LEN + plen + CRC_LEN
    if len(buf) < total:
        raise TruncatedFrameError(f"need {total} bytes, have {len(buf)}")
    if len(buf) > total:
        raise LengthError(f"{len(buf) - total} trailing bytes")
    (crc,) = struct.unpack_from("<I", buf, total - CRC_LEN)
    if crc != zlib.crc32(buf[:total - CRC_LEN]):
        raise BadCrcError("crc mismatch")
    if type_id not in PAYLOAD_SIZES:
        raise UnknownTypeError(f"unknown message type 0x{type_id:02x}")
    if plen != PAYLOAD_SIZES[type_id]:
        raise LengthError(
            f"type 0x{type_id:02x} payload must be {PAYLOAD_SIZES[type_id]}, got {plen}")
    payload = buf[HEADER_LEN:HEADER_LEN + plen]

    if type_id == T_SETPOINT:
        return Setpoint(seq, t_ns, _SETPOINT_PAYLOAD.unpack(payload))
    if type_id == T_FEEDBACK:
        vals = _FEEDBACK_PAYLOAD.unpack(payload)
        return Feedback(seq, t_ns, vals[0:8], vals[8:16], vals[16:18],
                        vals[18], vals[19], vals[20])
    if type_id == T_HEARTBEAT:
        return Heartbeat(seq, t_ns)
    if type_id == T_ENABLE:
        return Enable(seq, t_ns)
    if type_id == T_DISABLE:
        return Disable(seq, t_ns)
    if type_id == T_ESTOP:
        return Estop(seq, t_ns)
    status, acked = _ACK_PAYLOAD.unpack(payload)
    return Ack(seq, t_ns, status, acked)


def frame_length(buf: bytes) -> int | None:
    """Total frame length once the header is available, else None."""
    if len(buf) < HEADER_LEN:
        return None
    plen = struct.unpack_from("<H", buf, HEADER_LEN - 2)[0]
    return HEADER_LEN + plen + CRC_LEN


@dataclass
class StreamDecoder:
    """Incremental frame extractor for stream transports.

    Feed arbitrary byte chunks; complete frames come out in order.  On a
    corrupt frame the decoder counts the error and resyncs at the next magic.
    """

    buffer: bytearray = field(default_factory=bytearray)
    errors: int = 0

    def feed(self, data: bytes) -> list:
        self.buffer.extend(data)
        out = []
        while True:
            start = self.buffer.find(MAGIC)
            if start < 0:
                # keep a tail shorter than the magic for split-magic arrivals
                del self.buffer[:max(0, len(self.buffer) - (len(MAGIC) - 1))]
                return out
            if start > 0:
                self.errors += 1
                del self.buffer[:start]
            total = frame_length(bytes(self.buffer))
            if total is None or len(self.buffer) < total:
                return out
            chunk = bytes(self.buffer[:total])
            try:
                out.append(decode_frame(chunk))
                del self.buffer[:total]
            except FrameError:
                self.errors += 1
                del self.buffer[:len(MAGIC)]  # resync past this magic
