"""Binary message framing for tensor traffic between processes.

Frame layout, all little-endian:

    u32  length of everything after this prefix
    u8   protocol version (currently 1)
    u8   message kind: 0 DATA, 1 EOS, 2 ROUND_END
    u32  source node id
    u32  channel id
    u32  round
    u32  tensor count
    per tensor: u8 dtype tag, u8 rank, rank*u32 shape, raw row-major bytes

Dtype tags: 0 float32, 1 int64, 2 uint8. An empty-payload DATA message
is 22 bytes on the wire (prefix value 18).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

PROTOCOL_VERSION = 1

DATA = 0
EOS = 1
ROUND_END = 2
_KINDS = (DATA, EOS, ROUND_END)

_TAG_BY_DTYPE = {"f4": 0, "i8": 1, "u1": 2}
_DTYPE_BY_TAG = {0: np.dtype("<f4"), 1: np.dtype("<i8"), 2: np.dtype("u1")}

DEFAULT_MAX_FRAME = 64 * 1024 * 1024

_ENVELOPE = struct.Struct("<BBIII")
_PREFIX = struct.Struct("<I")
_COUNT = struct.Struct("<I")
_TENSOR_HEAD = struct.Struct("<BB")


class WireError(Exception):
    pass


class FrameTooLarge(WireError):
    pass


class TruncatedFrame(WireError):
    pass


class UnknownDtype(WireError):
    pass


class UnknownKind(WireError):
    pass


class VersionMismatch(WireError):
    pass


def max_frame_bytes():
    """Configured frame cap; override with DMLFLOW_MAX_FRAME (bytes)."""
    raw = os.environ.get("DMLFLOW_MAX_FRAME")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise WireError(f"DMLFLOW_MAX_FRAME is not an integer: {raw!r}")
        if value < 1:
            raise WireError("DMLFLOW_MAX_FRAME must be positive")
        return value
    return DEFAULT_MAX_FRAME


@dataclass
class TensorMsg:
    """One message: a kind, addressing metadata, and a list of arrays."""

    kind: int
    source: int
    channel: int
    round: int
    payload: list = field(default_factory=list)
    version: int = PROTOCOL_VERSION

    def equals(self, other):
        if (self.kind, self.source, self.channel, self.round, self.version) != \
           (other.kind, other.source, other.channel, other.round, other.version):
            return False
        if len(self.payload) != len(other.payload):
            return False
        for a, b in zip(self.payload, other.payload):
            if a.dtype != b.dtype or a.shape != b.shape or not np.array_equal(a, b):
                return False
        return True


def _canonical(arr):
    # asarray, not ascontiguousarray: the latter promotes rank 0 to rank 1,
    # and tobytes() already serializes any layout in C order
    if arr.dtype == np.float32:
        return np.asarray(arr, dtype="<f4"), 0
    if arr.dtype == np.int64:
        return np.asarray(arr, dtype="<i8"), 1
    if arr.dtype == np.uint8:
        return np.asarray(arr, dtype="u1"), 2
    raise UnknownDtype(f"unsupported tensor dtype {arr.dtype}")


def frame_size(msg):
    """Byte length of the encoded frame, prefix included, without encoding."""
    size = _PREFIX.size + _ENVELOPE.size + _COUNT.size
    for arr in msg.payload:
        size += _TENSOR_HEAD.size + 4 * arr.ndim + arr.nbytes
    return size


def encode_frame(msg):
    if msg.kind not in _KINDS:
        raise UnknownKind(f"cannot encode message kind {msg.kind}")
    parts = [
        _ENVELOPE.pack(msg.version, msg.kind, msg.source, msg.channel, msg.round),
        _COUNT.pack(len(msg.payload)),
    ]
    for arr in msg.payload:
        canon, tag = _canonical(arr)
        parts.append(_TENSOR_HEAD.pack(tag, canon.ndim))
        parts.append(struct.pack("<%dI" % canon.ndim, *canon.shape))
        parts.append(canon.tobytes())
    body = b"".join(parts)
    limit = max_frame_bytes()
    if len(body) > limit:
        raise FrameTooLarge(f"frame body {len(body)} exceeds max {limit}")
    return _PREFIX.pack(len(body)) + body


def decode_body(body):
    """Decode a frame body (everything after the length prefix)."""
    if len(body) < _ENVELOPE.size + _COUNT.size:
        raise TruncatedFrame("body shorter than envelope")
    version, kind, source, channel, rnd = _ENVELOPE.unpack_from(body, 0)
    if version != PROTOCOL_VERSION:
        raise VersionMismatch(f"protocol version {version}, expected {PROTOCOL_VERSION}")
    if kind not in _KINDS:
        raise UnknownKind(f"unknown message kind {kind}")
    (count,) = _COUNT.unpack_from(body, _ENVELOPE.size)
    off = _ENVELOPE.size + _COUNT.size
    payload = []
    for _ in range(count):
        if off + _TENSOR_HEAD.size > len(body):
            raise TruncatedFrame("tensor header truncated")
        tag, rank = _TENSOR_HEAD.unpack_from(body, off)
        off += _TENSOR_HEAD.size
        if tag not in _DTYPE_BY_TAG:
            raise UnknownDtype(f"unknown dtype tag 0x{tag:02x}")
        if off + 4 * rank > len(body):
            raise TruncatedFrame("tensor shape truncated")
        shape = struct.unpack_from("<%dI" % rank, body, off)
        off += 4 * rank
        dtype = _DTYPE_BY_TAG[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if rank == 0:
            shape = ()
        if off + nbytes > len(body):
            raise TruncatedFrame("tensor data truncated")
        arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize,
                            offset=off).reshape(shape).copy()
        off += nbytes
        payload.append(arr)
    if off != len(body):
        raise TruncatedFrame(f"{len(body) - off} trailing bytes after payload")
    return TensorMsg(kind, source, channel, rnd, payload, version=version)


def decode_frame(buf):
    """Decode one frame from buf; returns (msg, bytes_consumed).

    Raises TruncatedFrame if buf does not hold a complete frame yet.
    """
    if len(buf) < _PREFIX.size:
        raise TruncatedFrame("length prefix incomplete")
    (length,) = _PREFIX.unpack_from(buf, 0)
    limit = max_frame_bytes()
    if length > limit:
        raise FrameTooLarge(f"length prefix {length} exceeds max {limit}")
    if len(buf) < _PREFIX.size + length:
        raise TruncatedFrame("frame body incomplete")
    msg = decode_body(bytes(buf[_PREFIX.size:_PREFIX.size + length]))
    return msg, _PREFIX.size + length


def read_frame(recv_exact):
    """Read one frame using recv_exact(n) -> bytes (raising on short reads)."""
    (length,) = _PREFIX.unpack(recv_exact(_PREFIX.size))
    limit = max_frame_bytes()
    if length > limit:
        raise FrameTooLarge(f"length prefix {length} exceeds max {limit}")
    return decode_body(recv_exact(length))
