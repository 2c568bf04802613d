"""Fixed-size binary wire format for streamed sensor frames.

One datagram is exactly 72 bytes, little-endian:

    offset  size  field
    0       4     magic "WPK1"
    4       4     uint32 sequence number (strictly increasing per session)
    8       8     float64 timestamp, ms since session start
    16      56    14 x float32 payload in sensor order
                  [theta(4), lacc(3), grav(3), gyro(3), pres]

Anything that fails the size or magic check raises MalformedPacketError and
is meant to be dropped and counted by the receiver.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedPacketError
from .frames import SensorFrame

MAGIC = b"WPK1"
PACKET_SIZE = 72
_LAYOUT = struct.Struct("<4sId14f")
assert _LAYOUT.size == PACKET_SIZE


@dataclass(frozen=True, eq=False)
class SensorPacket:
    seq: int
    t: float  # ms since session start
    values: np.ndarray  # (14,) float32-precision payload

    def to_frame(self):
        return SensorFrame.from_values(self.t, self.values)


def encode_packet(frame, seq):
    """Serialize one sensor frame; payload narrows to float32."""
    return encode_values(frame.values(), seq, frame.t)


def encode_values(values, seq, t):
    """Serialize a raw 14-value payload with an explicit timestamp."""
    if not 0 <= seq < 2**32:
        raise MalformedPacketError(f"sequence number {seq} out of uint32 range")
    values = np.asarray(values, dtype=np.float32)
    if values.shape != (14,):
        raise MalformedPacketError("payload must hold exactly 14 values")
    return _LAYOUT.pack(MAGIC, seq, float(t), *values)


def decode_packet(data):
    """Parse one datagram; raises MalformedPacketError on size or magic."""
    if len(data) != PACKET_SIZE:
        raise MalformedPacketError(f"datagram has {len(data)} bytes, expected {PACKET_SIZE}")
    magic, seq, t, *payload = _LAYOUT.unpack(data)
    if magic != MAGIC:
        raise MalformedPacketError(f"bad magic {magic!r}")
    return SensorPacket(seq=seq, t=t, values=np.asarray(payload, dtype=np.float64))


def packetize(frames, start_seq=0):
    """Encode a whole session, gapless sequence numbers."""
    return [encode_packet(f, start_seq + i) for i, f in enumerate(frames)]


def write_capture(path, packets):
    with open(path, "wb") as fh:
        for p in packets:
            fh.write(p)


def read_capture(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) % PACKET_SIZE != 0:
        raise MalformedPacketError(
            f"capture length {len(blob)} is not a multiple of {PACKET_SIZE}"
        )
    return [blob[i : i + PACKET_SIZE] for i in range(0, len(blob), PACKET_SIZE)]
