"""Length-prefixed binary frames exchanged between frontend, workers and clients.

Layout (little-endian)::

    2s  magic  b"PM"
    u8  version (1)
    u8  msg_type
    u64 query_id
    u64 group_id
    u8  position
    u8  flags    bit0 parity, bit1 approximate, bit2 default
    u32 payload_len  (bytes)
    payload_len bytes of float32 values
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PM"
VERSION = 1
HEADER = struct.Struct("<2sBBQQBBI")
MAX_PAYLOAD = 64 * 1024 * 1024

FLAG_PARITY = 0x01
FLAG_APPROXIMATE = 0x02
FLAG_DEFAULT = 0x04


class MsgType(enum.IntEnum):
    QUERY = 1
    PREDICTION = 2
    REGISTER = 3
    SHUTDOWN = 4


class FrameError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Frame:
    msg_type: MsgType
    query_id: int = 0
    group_id: int = 0
    position: int = 0
    flags: int = 0
    payload: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.float32))

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.header_fields() == other.header_fields()
                and np.asarray(self.payload, "<f4").tobytes() == np.asarray(other.payload, "<f4").tobytes())

    def header_fields(self):
        return (int(self.msg_type), self.query_id, self.group_id, self.position, self.flags)

    @property
    def parity(self):
        return bool(self.flags & FLAG_PARITY)


def encode_frame(frame):
    payload = np.ascontiguousarray(frame.payload, dtype="<f4").ravel().tobytes()
    try:
        header = HEADER.pack(MAGIC, VERSION, int(frame.msg_type), frame.query_id, frame.group_id,
                             frame.position, frame.flags, len(payload))
    except struct.error as exc:
        raise FrameError(f"field out of range: {exc}") from exc
    return header + payload


def decode_frame(buf):
    """Decode one frame from the start of ``buf``.

    Returns ``(frame, bytes_consumed)`` or ``(None, 0)`` when ``buf`` does not yet
    hold a whole frame.
    """
    if len(buf) < HEADER.size:
        return None, 0
    magic, version, msg_type, qid, gid, pos, flags, plen = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported version {version}")
    if plen % 4 or plen > MAX_PAYLOAD:
        raise FrameError(f"invalid payload length {plen}")
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise FrameError(f"unknown message type {msg_type}") from None
    end = HEADER.size + plen
    if len(buf) < end:
        return None, 0
    payload = np.frombuffer(bytes(buf[HEADER.size:end]), dtype="<f4").astype(np.float32)
    return Frame(kind, qid, gid, pos, flags, payload), end


def _recv_exact(sock, n):
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock):
    """Blocking read of one frame; ``None`` on a clean end of stream."""
    header = _recv_exact(sock, HEADER.size)
    if header is None:
        return None
    plen = HEADER.unpack(header)[-1]
    if plen % 4 or plen > MAX_PAYLOAD:
        raise FrameError(f"invalid payload length {plen}")
    body = _recv_exact(sock, plen) if plen else b""
    if body is None:
        raise FrameError("stream ended inside a frame")
    frame, _ = decode_frame(header + body)
    return frame


def write_frame(sock, frame):
    sock.sendall(encode_frame(frame))
