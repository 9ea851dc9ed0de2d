"""The frame format that crosses process boundaries.

Every message is one length-prefixed frame: a 4-byte little-endian
length, a fixed envelope (version, kind, source node, channel, round),
then a tensor count and each tensor as dtype tag, rank, shape, raw
bytes. Nothing here depends on the runtime; the codec is usable on its
own.
"""

import numpy as np

from dmlflow import wire

msg = wire.TensorMsg(
    kind=wire.DATA, source=3, channel=7, round=2,
    payload=[np.arange(6, dtype=np.float32).reshape(2, 3),
             np.array([1, 2], dtype=np.int64)])

frame = wire.encode_frame(msg)
print(f"frame is {len(frame)} bytes"
      f" (prefix says {int.from_bytes(frame[:4], 'little')} follow)")

# hex dump, 16 bytes per row
for off in range(0, len(frame), 16):
    row = frame[off:off + 16]
    print(f"  {off:04x}  {row.hex(' ')}")

decoded, consumed = wire.decode_frame(frame)
assert consumed == len(frame)
assert decoded.equals(msg)
print("decoded equals the original:", decoded.kind == wire.DATA,
      decoded.source, decoded.channel, decoded.round,
      [t.shape for t in decoded.payload])

# frames stack back to back on a socket; decode_frame reports how many
# bytes it consumed so a stream can be split without peeking
stream = frame + wire.encode_frame(
    wire.TensorMsg(kind=wire.EOS, source=3, channel=7, round=2, payload=[]))
first, used = wire.decode_frame(stream)
second, _ = wire.decode_frame(stream[used:])
print(f"second frame on the stream: kind={second.kind} (end of stream)")

# a truncated frame fails loudly rather than yielding garbage
try:
    wire.decode_frame(frame[:10])
except wire.TruncatedFrame as exc:
    print("truncated frame rejected:", exc)

# so does a version we do not speak
bad = bytearray(frame)
bad[4] = 99
try:
    wire.decode_frame(bytes(bad))
except wire.VersionMismatch as exc:
    print("foreign version rejected:", exc)
