"""Frame codec: exact layouts, round trips, malformed input."""

import numpy as np
import pytest

import oracles
from dmlflow import wire


def _random_msg(rng):
    kind = int(rng.choice([wire.DATA, wire.ROUND_END]))
    payload = []
    for _ in range(int(rng.integers(0, 4))):
        rank = int(rng.integers(0, 4))
        shape = tuple(int(s) for s in rng.integers(1, 5, size=rank))
        pick = int(rng.integers(0, 3))
        if pick == 0:
            arr = rng.normal(size=shape).astype(np.float32)
        elif pick == 1:
            arr = rng.integers(-1000, 1000, size=shape).astype(np.int64)
        else:
            arr = rng.integers(0, 256, size=shape).astype(np.uint8)
        payload.append(arr)
    return wire.TensorMsg(
        kind=kind,
        source=int(rng.integers(0, 1 << 16)),
        channel=int(rng.integers(0, 1 << 16)),
        round=int(rng.integers(0, 1 << 16)),
        payload=payload)


class TestExactLayout:
    def test_empty_data_frame_bytes(self):
        msg = wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0)
        buf = wire.encode_frame(msg)
        assert len(buf) == 22
        assert buf.hex() == "12000000010000000000000000000000000000000000"
        assert buf == oracles.reference_frame(0, 0, 0, 0, [])

    def test_one_tensor_frame_matches_reference(self):
        t = np.arange(6, dtype=np.float32).reshape(2, 3)
        msg = wire.TensorMsg(kind=wire.DATA, source=7, channel=3, round=2,
                             payload=[t])
        buf = wire.encode_frame(msg)
        assert buf == oracles.reference_frame(0, 7, 3, 2, [t])
        assert len(buf) == 56

    def test_multi_tensor_mixed_dtypes_match_reference(self):
        tensors = [np.array([1.5, -2.0], dtype=np.float32),
                   np.arange(12, dtype=np.int64).reshape(3, 4),
                   np.array(9, dtype=np.uint8).reshape(())]
        msg = wire.TensorMsg(kind=wire.ROUND_END, source=1, channel=2,
                             round=3, payload=tensors)
        assert wire.encode_frame(msg) == oracles.reference_frame(2, 1, 2, 3, tensors)

    def test_eos_frame(self):
        msg = wire.TensorMsg(kind=wire.EOS, source=5, channel=6, round=0)
        buf = wire.encode_frame(msg)
        assert buf == oracles.reference_frame(1, 5, 6, 0, [])
        out, used = wire.decode_frame(buf)
        assert used == len(buf)
        assert out.kind == wire.EOS

    def test_frame_size_matches_encoding(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            msg = _random_msg(rng)
            assert wire.frame_size(msg) == len(wire.encode_frame(msg))


class TestRoundTrip:
    def test_many_random_messages(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            msg = _random_msg(rng)
            out, used = wire.decode_frame(wire.encode_frame(msg))
            assert used == wire.frame_size(msg)
            assert out.equals(msg)

    def test_non_contiguous_input(self):
        base = np.arange(24, dtype=np.float32).reshape(4, 6)
        view = base[::2, ::3]
        msg = wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0,
                             payload=[view])
        out, _ = wire.decode_frame(wire.encode_frame(msg))
        assert np.array_equal(out.payload[0], view)

    def test_back_to_back_frames(self):
        rng = np.random.default_rng(2)
        msgs = [_random_msg(rng) for _ in range(5)]
        buf = b"".join(wire.encode_frame(m) for m in msgs)
        got = []
        while buf:
            m, used = wire.decode_frame(buf)
            got.append(m)
            buf = buf[used:]
        assert len(got) == 5
        for a, b in zip(got, msgs):
            assert a.equals(b)

    def test_read_frame_via_stream(self):
        rng = np.random.default_rng(3)
        msg = _random_msg(rng)
        buf = bytearray(wire.encode_frame(msg))
        pos = [0]

        def recv_exact(n):
            chunk = bytes(buf[pos[0]:pos[0] + n])
            assert len(chunk) == n
            pos[0] += n
            return chunk

        out = wire.read_frame(recv_exact)
        assert out.equals(msg)
        assert pos[0] == len(buf)


class TestErrors:
    def test_truncated_prefix(self):
        with pytest.raises(wire.TruncatedFrame):
            wire.decode_frame(b"\x01\x00")

    def test_truncated_body(self):
        buf = wire.encode_frame(
            wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0,
                           payload=[np.zeros(4, dtype=np.float32)]))
        with pytest.raises(wire.TruncatedFrame):
            wire.decode_frame(buf[:-1])

    def test_trailing_bytes_rejected(self):
        buf = bytearray(wire.encode_frame(
            wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0)))
        buf[0] += 1  # lengthen the declared body by one byte
        with pytest.raises(wire.TruncatedFrame):
            wire.decode_body(bytes(buf[4:]) + b"\x00")

    def test_bad_version(self):
        buf = bytearray(wire.encode_frame(
            wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0)))
        buf[4] = 9
        with pytest.raises(wire.VersionMismatch):
            wire.decode_frame(bytes(buf))

    def test_unknown_kind(self):
        buf = bytearray(wire.encode_frame(
            wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0)))
        buf[5] = 7
        with pytest.raises(wire.UnknownKind):
            wire.decode_frame(bytes(buf))
        with pytest.raises(wire.UnknownKind):
            wire.encode_frame(
                wire.TensorMsg(kind=7, source=0, channel=0, round=0))

    def test_unknown_dtype_tag(self):
        buf = bytearray(wire.encode_frame(
            wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0,
                           payload=[np.zeros(2, dtype=np.float32)])))
        buf[22] = 9  # dtype tag of the first tensor
        with pytest.raises(wire.UnknownDtype):
            wire.decode_frame(bytes(buf))

    def test_unsupported_dtype_encode(self):
        msg = wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0,
                             payload=[np.zeros(2, dtype=np.float64)])
        with pytest.raises(wire.UnknownDtype):
            wire.encode_frame(msg)

    def test_frame_cap_respected(self, monkeypatch):
        monkeypatch.setenv("DMLFLOW_MAX_FRAME", "64")
        big = wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0,
                             payload=[np.zeros(100, dtype=np.float32)])
        with pytest.raises(wire.FrameTooLarge):
            wire.encode_frame(big)
        small = wire.TensorMsg(kind=wire.DATA, source=0, channel=0, round=0)
        buf = bytearray(wire.encode_frame(small))
        buf[0] = 200  # claim a body larger than the cap
        with pytest.raises(wire.FrameTooLarge):
            wire.decode_frame(bytes(buf))

    def test_frame_cap_validation(self, monkeypatch):
        monkeypatch.setenv("DMLFLOW_MAX_FRAME", "zero")
        with pytest.raises(wire.WireError):
            wire.max_frame_bytes()
        monkeypatch.setenv("DMLFLOW_MAX_FRAME", "-3")
        with pytest.raises(wire.WireError):
            wire.max_frame_bytes()
