"""Independent reference computations used to freeze expected test values.

Everything here is deliberately written from first principles (brute force
or a second algorithm), not by importing the library under test, so the
tests compare two independent routes to the same number.
"""

import struct
import zlib

import numpy as np


def brute_param_count(arch):
    """Count parameters by materializing every array and summing sizes."""
    total = 0
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        total += np.zeros((fan_in, fan_out)).size
        total += np.zeros(fan_out).size
    return total


def brute_forward_flops(arch):
    """Count forward multiply-accumulate FLOPs (2 per weight) layer by layer."""
    total = 0
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        total += 2 * np.zeros((fan_in, fan_out)).size
    return total


def brute_mean(models):
    """Elementwise mean over a list of flat-array lists, via np.stack/mean."""
    n_arrays = len(models[0])
    return [
        np.mean(np.stack([m[i].astype(np.float64) for m in models]), axis=0)
        for i in range(n_arrays)
    ]


def central_difference_grads(loss_fn, arrays, eps=1e-3):
    """Numerical gradient of loss_fn w.r.t. each array, central differences."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def reference_frame(kind, source, channel, rnd, tensors, version=1):
    """Assemble a wire frame by direct struct packing (second implementation)."""
    body = struct.pack("<BBIII", version, kind, source, channel, rnd)
    body += struct.pack("<I", len(tensors))
    tags = {"f": 0, "i": 1, "u": 2}
    for t in tensors:
        body += struct.pack("<BB", tags[t.dtype.kind], t.ndim)
        body += struct.pack("<%dI" % t.ndim, *t.shape)
        body += t.tobytes()
    return struct.pack("<I", len(body)) + body


def stub_boxes(frame):
    """Reference copy of the deterministic detector stub (see schemes)."""
    rng = np.random.default_rng(zlib.crc32(np.ascontiguousarray(frame).tobytes()))
    k = int(rng.integers(0, 5))
    boxes = np.zeros((k, 6), dtype=np.float32)
    if k:
        boxes[:, 0] = rng.uniform(0.0, 0.8, size=k)
        boxes[:, 1] = rng.uniform(0.0, 0.8, size=k)
        boxes[:, 2] = rng.uniform(0.01, 0.2, size=k)
        boxes[:, 3] = rng.uniform(0.01, 0.2, size=k)
        boxes[:, 4] = rng.uniform(0.05, 0.995, size=k)
        boxes[:, 5] = rng.integers(0, 80, size=k)
    return boxes


if __name__ == "__main__":
    print("param count 784-64-32-10:", brute_param_count((784, 64, 32, 10)))
    print("forward flops 784-64-32-10:", brute_forward_flops((784, 64, 32, 10)))
    empty = reference_frame(0, 0, 0, 0, [])
    print("empty DATA frame:", len(empty), "bytes:", empty.hex())
    one = reference_frame(0, 7, 3, 2, [np.arange(6, dtype="<f4").reshape(2, 3)])
    print("one-tensor frame:", len(one), "bytes, prefix", struct.unpack("<I", one[:4])[0])
