"""Ready-made decentralised schemes: program text plus binding tables.

Three topologies are provided.

Master-worker: a coordinator initialises one model, workers test and
train on their shards, a reducer averages the replicas and a broadcast
closes the loop for a fixed number of rounds.

Peer-to-peer: every peer initialises the same model (same seed), tests,
trains, broadcasts its replica to all peers and runs the same averaging
locally. With identical fold order everywhere the peers stay
bit-identical to the master-worker model, round for round.

Tree inference: a frame source fans triggers out to leaf detectors,
whose detections are routed up through combiners (score filtering and
per-frame merging) to a single alert stage. The loop is unbounded and
ends with the stream.

The detector is a deterministic stub: box count and geometry are drawn
from an RNG seeded with the frame's checksum, so any process that sees
the same frame reports the same boxes without a model file.
"""

from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass

import numpy as np

from . import dsl, mlkit
from .bindings import ContiguousRoute


@dataclass
class FederationConfig:
    workers: int
    rounds: int
    epochs_per_round: int = 5
    arch: tuple = (784, 64, 32, 10)
    lr: float = 0.01
    momentum: float = 0.5
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if len(self.arch) < 2:
            raise ValueError("arch needs an input and an output width")


@dataclass
class TreeConfig:
    leaves: int = 2
    combiners: int = 1
    frames: int = 148
    threshold: float = 0.5
    frame_h: int = 24
    frame_w: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.leaves < 1 or self.combiners < 1:
            raise ValueError("need at least one leaf and one combiner")
        if self.combiners > self.leaves:
            raise ValueError("more combiners than leaves")
        if self.frames < 1:
            raise ValueError("need at least one frame")

    def parent_of(self, leaf):
        return leaf * self.combiners // self.leaves

    def children_of(self, combiner):
        return [l for l in range(self.leaves)
                if self.parent_of(l) == combiner]


# -- program text ------------------------------------------------------


def master_worker_source(workers, rounds, expanded=False):
    """`expanded` spells the aggregation as gatherall + a logic stage
    instead of a reducer; the two forms are rewrite-equivalent."""
    agg = ("NtoOne(gatherall) . seq(FedAvg)" if expanded
           else "reduce(FedAvg)")
    return (f"nodeset W = {workers};\n"
            f"cond r = {rounds};\n"
            f"\n"
            f"seq(init) . feedback(\n"
            f"    dist[W]{{ par(test) . par(train) }}\n"
            f"    . {agg}\n"
            f"    . 1toN(bcast)\n"
            f", r)\n")


def p2p_source(peers, rounds):
    return (f"nodeset P = {peers};\n"
            f"cond r = {rounds};\n"
            f"\n"
            f"dist[P]{{ seq(init) }}\n"
            f". feedback(\n"
            f"    dist[P]{{ par(test) . par(train) . 1toN(bcast)"
            f" . reduce(FedAvg) }}\n"
            f", r)\n")


def tree_source(leaves, combiners):
    return (f"nodeset L = {leaves};\n"
            f"nodeset C = {combiners};\n"
            f"nodeset R = 1;\n"
            f"cond forever = infinite;\n"
            f"\n"
            f"seq(init) . feedback(\n"
            f"    dist[L]{{ par(infer) }}\n"
            f"    . reduce(route)\n"
            f"    . dist[C]{{ par(combine) }}\n"
            f"    . reduce(route)\n"
            f"    . dist[R]{{ seq(alert) }}\n"
            f", forever)\n")


def build_master_worker(cfg, expanded=False):
    return dsl.parse(master_worker_source(cfg.workers, cfg.rounds, expanded))


def build_p2p(cfg):
    return dsl.parse(p2p_source(cfg.workers, cfg.rounds))


def build_tree(cfg):
    return dsl.parse(tree_source(cfg.leaves, cfg.combiners))


# -- federated learning bindings ----------------------------------------


class FlRecorder:
    """Collects per-round test accuracy and aggregated models."""

    def __init__(self):
        self._lock = threading.Lock()
        self.tests = []
        self._aggregates = {}

    def on_test(self, member, rnd, accuracy):
        with self._lock:
            self.tests.append((member, rnd, accuracy))

    def on_aggregate(self, member, model):
        with self._lock:
            self._aggregates.setdefault(member, []).append(model)

    def models(self, member=0):
        """Aggregated models of one lane, in round order."""
        with self._lock:
            return list(self._aggregates.get(member, []))

    def accuracy_series(self, member=0):
        with self._lock:
            rows = [(r, a) for m, r, a in self.tests if m == member]
        return sorted(rows)


def fl_bindings(cfg, train_data, test_data, recorder=None):
    """Bindings for init/test/train/FedAvg over fixed shards.

    Every lane trains on shard `member` of the same seeded partition,
    so local and distributed runs see identical data."""
    hyper = mlkit.Hyperparams(lr=cfg.lr, momentum=cfg.momentum,
                              batch_size=cfg.batch_size)
    shards = mlkit.partition(train_data, cfg.workers, cfg.seed)
    arch = tuple(cfg.arch)
    per_model = 2 * (len(arch) - 1)

    class _Init:
        def make_logic(self, ctx):
            def handle(payload, rnd):
                return [mlkit.mlp_init(arch, cfg.seed).to_tensors()]
            return handle

    class _Test:
        def make_logic(self, ctx):
            member = ctx.member

            def handle(payload, rnd):
                params = mlkit.ModelParams.from_tensors(payload)
                accuracy = mlkit.evaluate(params, test_data)
                if recorder is not None:
                    recorder.on_test(member, rnd, accuracy)
                return [payload]
            return handle

    class _Train:
        def make_logic(self, ctx):
            shard = shards[ctx.member]
            rng = np.random.default_rng((cfg.seed, ctx.member))

            def handle(payload, rnd):
                params = mlkit.ModelParams.from_tensors(payload)
                trained = mlkit.train_epochs(params, shard, hyper,
                                             cfg.epochs_per_round, rng)
                return [trained.to_tensors()]
            return handle

    class _FedAvg:
        # reducer form for reduce(FedAvg), logic form for the expanded
        # gatherall + seq(FedAvg) spelling
        def make_reducer(self, ctx):
            member = ctx.member

            def reduce(items):
                models = [mlkit.ModelParams.from_tensors(p) for p in items]
                avg = mlkit.fedavg(models)
                if recorder is not None:
                    recorder.on_aggregate(member, avg)
                return avg.to_tensors()
            return reduce

        def make_logic(self, ctx):
            member = ctx.member

            def handle(payload, rnd):
                if not payload or len(payload) % per_model:
                    raise ValueError(
                        f"gathered payload of {len(payload)} tensors is not "
                        f"a whole number of {per_model}-tensor models")
                models = [
                    mlkit.ModelParams.from_tensors(payload[i:i + per_model])
                    for i in range(0, len(payload), per_model)]
                avg = mlkit.fedavg(models)
                if recorder is not None:
                    recorder.on_aggregate(member, avg)
                return [avg.to_tensors()]
            return handle

    return {"init": _Init(), "test": _Test(), "train": _Train(),
            "FedAvg": _FedAvg()}


# -- tree inference bindings ---------------------------------------------


def synthetic_frame(seed, member, idx, h, w):
    rng = np.random.default_rng((seed, member, idx))
    return rng.uniform(0.0, 1.0, (h, w)).astype(np.float32)


def detect_stub(frame):
    """Deterministic detector: up to four boxes per frame, every field
    drawn from an RNG seeded with the frame checksum. Columns are
    x, y, w, h, score, class."""
    rng = np.random.default_rng(
        zlib.crc32(np.ascontiguousarray(frame).tobytes()))
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


def write_frames(path, frames):
    frames = [np.asarray(f, dtype=np.float32) for f in frames]
    h, w = frames[0].shape
    with open(path, "wb") as fh:
        fh.write(np.array([len(frames), h, w], dtype="<u4").tobytes())
        for f in frames:
            if f.shape != (h, w):
                raise ValueError("all frames must share one shape")
            fh.write(np.ascontiguousarray(f, dtype="<f4").tobytes())


def read_frames(path):
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12:
            raise ValueError("frame file is truncated")
        n, h, w = (int(x) for x in np.frombuffer(head, dtype="<u4"))
        raw = fh.read(n * h * w * 4)
    if len(raw) != n * h * w * 4:
        raise ValueError("frame file is truncated")
    return list(np.frombuffer(raw, dtype="<f4").reshape(n, h, w).copy())


def tree_bindings(cfg, alert_sink=None):
    """Bindings for init/infer/combine/alert plus the routing map.

    `alert_sink` is any list-like collecting one record per frame at
    the root."""

    class _Init:
        def make_logic(self, ctx):
            def handle(payload, rnd):
                return [[np.array(i, dtype=np.int64)]
                        for i in range(cfg.frames)]
            return handle

    class _Infer:
        def make_logic(self, ctx):
            member = ctx.member

            def handle(payload, rnd):
                idx = int(payload[0])
                frame = synthetic_frame(cfg.seed, member, idx,
                                        cfg.frame_h, cfg.frame_w)
                return [[payload[0], detect_stub(frame)]]
            return handle

    class _Combine:
        def make_logic(self, ctx):
            expected = len(cfg.children_of(ctx.member))
            waiting = {}

            def handle(payload, rnd):
                idx = int(payload[0])
                boxes = payload[1]
                kept = boxes[boxes[:, 4] > cfg.threshold]
                parts = waiting.setdefault(idx, [])
                parts.append(kept)
                if len(parts) < expected:
                    return []
                del waiting[idx]
                merged = np.concatenate(parts, axis=0)
                return [[payload[0], np.ascontiguousarray(merged)]]
            return handle

    class _Alert:
        def make_logic(self, ctx):
            expected = cfg.combiners
            waiting = {}

            def handle(payload, rnd):
                idx = int(payload[0])
                parts = waiting.setdefault(idx, [])
                parts.append(payload[1])
                if len(parts) < expected:
                    return []
                del waiting[idx]
                boxes = np.ascontiguousarray(np.concatenate(parts, axis=0))
                if alert_sink is not None:
                    top = float(boxes[:, 4].max()) if len(boxes) else 0.0
                    alert_sink.append({"frame": idx,
                                       "boxes": int(boxes.shape[0]),
                                       "max_score": top})
                return [[payload[0], boxes]]
            return handle

    return {"init": _Init(), "infer": _Infer(), "combine": _Combine(),
            "alert": _Alert(), "route": ContiguousRoute()}


# -- deployment shapes ---------------------------------------------------


def standard_assignment(graph, scheme):
    """The natural one-process-per-participant split of each scheme."""
    out = {}
    if scheme == "master-worker":
        for nid, spec in graph.nodes.items():
            if spec.nodeset == "W" and spec.kind == "worker-logic":
                out[nid] = f"w{spec.member}"
            else:
                out[nid] = "A"
    elif scheme == "p2p":
        for nid, spec in graph.nodes.items():
            out[nid] = f"p{spec.member}" if spec.nodeset == "P" else "p0"
    elif scheme == "tree":
        for nid, spec in graph.nodes.items():
            if spec.nodeset == "L":
                out[nid] = f"l{spec.member}"
            elif spec.nodeset == "C":
                out[nid] = f"c{spec.member}"
            else:
                out[nid] = "root"
    else:
        raise ValueError(f"unknown scheme '{scheme}'")
    return out
