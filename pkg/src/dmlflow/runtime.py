"""Threaded execution of dataflow graphs.

Every node runs on its own thread and owns a single inbox; channels are
bounded (default 16 in flight) so a fast producer blocks instead of
ballooning memory. Entry nodes are kicked off with one synthetic empty
message at round 0 followed by end-of-stream. A node forwards
end-of-stream to its outputs once every input has closed, so shutdown
sweeps through the graph in topological order and the run finishes when
every thread has exited.

Barrier nodes (reducers and gatherall mergers) collect exactly one
payload per loop input channel per round and combine them in ascending
source node id order; that fixed order is what makes replicated
aggregation bit-reproducible. Round guards count completed rounds and,
at the limit, release their final value outside the loop and close the
loop channels.

A watchdog raises DeadlockError when no channel moves for the
quiescence timeout while threads are still alive, reporting what every
live node was waiting on.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import graph as graphmod
from . import wire
from .bindings import NodeContext

KICKOFF_CHANNEL = -1
SINK_CHANNEL = 0xFFFFFFFF


class NodeFailure(Exception):
    pass


class DeadlockError(Exception):
    pass


class ProtocolError(Exception):
    pass


class _Cancelled(Exception):
    pass


# -- tracing ----------------------------------------------------------


@dataclass
class ChannelTraceRow:
    channel_id: int
    src: int
    dst: int
    messages: int = 0
    bytes: int = 0
    eos: int = 0
    per_round: dict = field(default_factory=dict)
    max_round: int = -1

    def record(self, msg):
        size = wire.frame_size(msg)
        self.bytes += size
        if msg.kind == wire.EOS:
            self.eos += 1
            return
        self.messages += 1
        self.per_round[msg.round] = self.per_round.get(msg.round, 0) + 1
        if msg.round > self.max_round:
            self.max_round = msg.round


class ExecutionTrace:
    """Sender-side per-channel counters for one run (or merged runs)."""

    def __init__(self):
        self.rows = {}

    def ensure(self, channel):
        row = self.rows.get(channel.channel_id)
        if row is None:
            row = ChannelTraceRow(channel.channel_id, channel.src, channel.dst)
            self.rows[channel.channel_id] = row
        return row

    def merge(self, other):
        for cid, row in other.rows.items():
            mine = self.rows.get(cid)
            if mine is None:
                mine = ChannelTraceRow(cid, row.src, row.dst)
                self.rows[cid] = mine
            if (mine.src, mine.dst) != (row.src, row.dst):
                raise ValueError(f"trace rows disagree on channel {cid}")
            mine.messages += row.messages
            mine.bytes += row.bytes
            mine.eos += row.eos
            for rnd, n in row.per_round.items():
                mine.per_round[rnd] = mine.per_round.get(rnd, 0) + n
            mine.max_round = max(mine.max_round, row.max_round)
        return self

    def total_messages(self):
        return sum(r.messages for r in self.rows.values())

    def total_bytes(self):
        return sum(r.bytes for r in self.rows.values())

    def round_counts(self, channel_ids):
        """Messages per round summed over the given channels."""
        out = {}
        for cid in channel_ids:
            row = self.rows.get(cid)
            if row is None:
                continue
            for rnd, n in row.per_round.items():
                out[rnd] = out.get(rnd, 0) + n
        return out

    def to_csv(self):
        agg = {}
        for row in self.rows.values():
            key = (row.src, row.dst)
            m, b = agg.get(key, (0, 0))
            agg[key] = (m + row.messages, b + row.bytes)
        lines = ["src,dst,messages,bytes"]
        for (src, dst) in sorted(agg):
            m, b = agg[(src, dst)]
            lines.append(f"{src},{dst},{m},{b}")
        return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    outputs: list
    trace: ExecutionTrace
    wall_seconds: float
    busy_seconds: dict


# -- channel plumbing --------------------------------------------------


class _Inbox:
    def __init__(self, engine):
        self._engine = engine
        self._items = deque()
        self._cv = threading.Condition()

    def put(self, item):
        with self._cv:
            self._items.append(item)
            self._cv.notify()
        self._engine.bump()

    def get(self, state_cb):
        while True:
            with self._cv:
                if self._items:
                    return self._items.popleft()
                self._cv.wait(0.05)
            if self._engine.cancelled():
                raise _Cancelled()
            state_cb()


class _Gate:
    """Per-channel in-flight bound."""

    def __init__(self, capacity, engine):
        self._sem = threading.BoundedSemaphore(capacity)
        self._engine = engine

    def acquire(self):
        while not self._sem.acquire(timeout=0.05):
            if self._engine.cancelled():
                raise _Cancelled()

    def release(self):
        self._sem.release()


# -- node execution ----------------------------------------------------


class _NodeRunner:
    def __init__(self, engine, spec):
        self.engine = engine
        self.spec = spec
        g = engine.graph
        self.in_chs = sorted(g.in_channels(spec.node_id),
                             key=lambda c: c.channel_id)
        self.out_chs = sorted(g.out_channels(spec.node_id),
                              key=lambda c: c.channel_id)
        self.loop_outs = [c for c in self.out_chs if g.is_loop_channel(c)]
        self.ext_outs = [c for c in self.out_chs
                         if not g.is_loop_channel(c)]
        self.barrier_chs = [c for c in self.in_chs if not c.injection]
        self.open = {c.channel_id for c in self.in_chs}
        self.is_entry = spec.node_id in g.entries
        if self.is_entry:
            self.open.add(KICKOFF_CHANNEL)
        self.is_exit = spec.node_id in g.exits
        self.inbox = _Inbox(engine)
        self.pending = {c.channel_id: deque() for c in self.barrier_chs}
        self.last_round = {}
        self.rr = 0
        self.eos_sent = False
        self.busy = 0.0
        self.state = "starting"

        ctx = NodeContext(
            node_id=spec.node_id, name=spec.name, nodeset=spec.nodeset,
            member=spec.member, fan_in=len(self.in_chs),
            fan_out=len(self.out_chs), seed=engine.seed)
        bindings = engine.bindings
        self.handles = [bindings[fn].make_logic(ctx) for fn in spec.logic]
        self.reduce_fn = None
        self.spread_fn = None
        if spec.kind == graphmod.KIND_REDUCER:
            self.reduce_fn = bindings[spec.fn].make_reducer(ctx)
        elif spec.kind == graphmod.KIND_SPREADER:
            self.spread_fn = bindings[spec.fn].make_spreader(ctx)

    # barrier nodes combine; gatherall concatenates payloads
    def _is_barrier(self):
        return (self.spec.kind == graphmod.KIND_REDUCER
                or (self.spec.kind == graphmod.KIND_MERGER
                    and self.spec.policy == "gatherall"))

    def _combine(self, items):
        if self.reduce_fn is not None:
            return self.reduce_fn(items)
        return [t for item in items for t in item]

    def _run_logic(self, payload, rnd):
        items = [payload]
        t0 = time.perf_counter()
        try:
            for handle in self.handles:
                nxt = []
                for it in items:
                    out = handle(it, rnd)
                    if not isinstance(out, (list, tuple)):
                        raise ProtocolError(
                            f"logic of node {self.spec.node_id} must return "
                            "a list of payloads")
                    nxt.extend(out)
                items = nxt
        finally:
            self.busy += time.perf_counter() - t0
        return items

    # -- emission -------------------------------------------------------

    def _send(self, channel, payload, rnd, kind=wire.DATA):
        msg = wire.TensorMsg(kind=kind, source=self.spec.node_id,
                             channel=channel.channel_id, round=rnd,
                             payload=list(payload))
        self.engine.send(channel, msg)

    def _emit(self, payload, rnd, channels=None):
        chs = self.out_chs if channels is None else channels
        if self.spec.static_route is not None:
            if not 0 <= self.spec.static_route < len(chs):
                raise ProtocolError(
                    f"node {self.spec.node_id} routes to channel index "
                    f"{self.spec.static_route} of {len(chs)}")
            self._send(chs[self.spec.static_route], payload, rnd)
            return
        if chs:
            for c in chs:
                self._send(c, payload, rnd)
        elif self.is_exit:
            self.engine.sink(self.spec.node_id, payload, rnd)

    def _emit_final(self, payload, rnd):
        if self.ext_outs:
            for c in self.ext_outs:
                self._send(c, payload, rnd)
        elif self.is_exit:
            self.engine.sink(self.spec.node_id, payload, rnd)
        for c in self.out_chs:
            self._send(c, [], 0, kind=wire.EOS)
        self.eos_sent = True

    def _route_out(self, payload, rnd, channels):
        policy = self.spec.policy
        if policy == "broadcast":
            for c in channels:
                self._send(c, payload, rnd)
        elif policy == "scatter":
            n = len(channels)
            if n == 0 or len(payload) % n != 0:
                raise ProtocolError(
                    f"scatter at node {self.spec.node_id}: {len(payload)} "
                    f"tensors into {n} channels")
            step = len(payload) // n
            for i, c in enumerate(channels):
                self._send(c, payload[i * step:(i + 1) * step], rnd)
        else:
            sel = self.spec.selector
            if sel == "rr":
                idx = self.rr % len(channels)
                self.rr += 1
            else:
                idx = int(sel)
                if not 0 <= idx < len(channels):
                    raise ProtocolError(
                        f"unicast target {idx} outside 0..{len(channels)-1}")
            self._send(channels[idx], payload, rnd)

    # -- input handling ---------------------------------------------------

    def _check_order(self, cid, msg):
        last = self.last_round.get(cid)
        if last is not None and msg.round < last:
            raise ProtocolError(
                f"round went backwards on channel {cid} into node "
                f"{self.spec.node_id}: {last} -> {msg.round}")
        self.last_round[cid] = msg.round

    def _on_data(self, channel, msg):
        kind = self.spec.kind
        guard = self.spec.guard
        if kind == graphmod.KIND_LOGIC:
            if guard:
                self._guarded_step(self._run_logic(msg.payload, msg.round),
                                   msg.round)
            else:
                for p in self._run_logic(msg.payload, msg.round):
                    self._emit(p, msg.round)
            return
        if kind == graphmod.KIND_ROUTER:
            if guard:
                nxt = msg.round + 1
                if nxt < guard[1]:
                    self._route_out(msg.payload, nxt, self.loop_outs)
                else:
                    self._emit_final(msg.payload, nxt)
            else:
                self._route_out(msg.payload, msg.round, self.out_chs)
            return
        if kind == graphmod.KIND_SPREADER:
            t0 = time.perf_counter()
            pieces = self.spread_fn(msg.payload, len(self.out_chs))
            self.busy += time.perf_counter() - t0
            if len(pieces) != len(self.out_chs):
                raise ProtocolError(
                    f"spreader at node {self.spec.node_id} produced "
                    f"{len(pieces)} pieces for {len(self.out_chs)} channels")
            for c, piece in zip(self.out_chs, pieces):
                self._send(c, piece, msg.round)
            return
        # mergers and reducers
        if channel is not None and channel.injection:
            # injected payloads skip aggregation: run the lane logic only
            outs = (self._run_logic(msg.payload, msg.round)
                    if self.handles else [msg.payload])
            target = self.loop_outs if guard else None
            for p in outs:
                self._emit(p, msg.round, channels=target)
            return
        if not self._is_barrier():
            outs = (self._run_logic(msg.payload, msg.round)
                    if self.handles else [msg.payload])
            for p in outs:
                self._emit(p, msg.round)
            return
        self.pending[channel.channel_id].append(msg)
        self._try_barrier()

    def _try_barrier(self):
        if not self.pending or not all(self.pending.values()):
            return
        heads = [self.pending[c.channel_id].popleft()
                 for c in sorted(self.barrier_chs, key=lambda c: c.src)]
        rounds = {m.round for m in heads}
        if len(rounds) != 1:
            raise ProtocolError(
                f"barrier at node {self.spec.node_id} mixes rounds "
                f"{sorted(rounds)}")
        rnd = rounds.pop()
        t0 = time.perf_counter()
        combined = self._combine([m.payload for m in heads])
        self.busy += time.perf_counter() - t0
        if self.spec.guard:
            self._guarded_step([combined], rnd, final_payload=combined)
        else:
            outs = (self._run_logic(combined, rnd)
                    if self.handles else [combined])
            for p in outs:
                self._emit(p, rnd)

    def _guarded_step(self, results, rnd, final_payload=None):
        nxt = rnd + 1
        rounds = self.spec.guard[1]
        if nxt < rounds:
            if final_payload is not None and self.handles:
                results = self._run_logic(final_payload, nxt)
            for p in results:
                self._emit(p, nxt, channels=self.loop_outs)
        else:
            # the loop value leaves untouched by the lane logic
            final = final_payload if final_payload is not None else (
                results[0] if results else [])
            self._emit_final(final, nxt)

    # -- main loop ----------------------------------------------------

    def run(self):
        try:
            if not self.open:
                # isolated source without kickoff: nothing will arrive
                self.state = "idle"
            while self.open:
                self.state = f"waiting on channels {sorted(self.open)}"
                cid, msg = self.inbox.get(lambda: None)
                self.engine.release_gate(cid)
                if msg.kind == wire.EOS:
                    self.open.discard(cid)
                    continue
                self._check_order(cid, msg)
                self.state = f"processing round {msg.round}"
                channel = self.engine.channel_by_id.get(cid)
                self._on_data(channel, msg)
            if any(self.pending.values()):
                raise ProtocolError(
                    f"node {self.spec.node_id} hit end of stream with a "
                    "partial barrier")
            if not self.eos_sent:
                for c in self.out_chs:
                    self._send(c, [], 0, kind=wire.EOS)
                self.eos_sent = True
            self.state = "done"
        except _Cancelled:
            self.state = "cancelled"
        except Exception as exc:
            self.state = f"failed: {exc}"
            self.engine.fail(self.spec.node_id, exc)
        finally:
            self.engine.node_done()


# -- engine -----------------------------------------------------------


class Engine:
    """Runs the nodes of a graph (or a subset of them) on threads.

    When `node_ids` restricts execution to a subset, channels leaving
    the subset are handed to `transport.send(channel, msg)` and inbound
    messages are injected with `deliver()`. That is how one process
    hosts one deployment group of a larger graph.
    """

    def __init__(self, graph, bindings, seed=0, quiescence_timeout=60.0,
                 node_ids=None, transport=None):
        self.graph = graph
        self.bindings = bindings
        self.seed = seed
        self.timeout = quiescence_timeout
        self.node_ids = set(graph.nodes if node_ids is None else node_ids)
        self.transport = transport
        self.channel_by_id = {c.channel_id: c for c in graph.channels}

        self._cancel = threading.Event()
        self._lock = threading.Lock()
        self._activity = 0
        self._failure = None
        self._outputs = []
        self._sink_seq = 0
        self._live = 0

        self.trace = ExecutionTrace()
        for c in graph.channels:
            if c.src in self.node_ids:
                self.trace.ensure(c)
        self.gates = {c.channel_id: _Gate(c.capacity, self)
                      for c in graph.channels if c.dst in self.node_ids}
        self.runners = {}
        for nid in sorted(self.node_ids):
            self.runners[nid] = _NodeRunner(self, graph.nodes[nid])

    # -- engine services used by runners --------------------------------

    def bump(self):
        with self._lock:
            self._activity += 1

    def cancelled(self):
        return self._cancel.is_set()

    def cancel(self):
        self._cancel.set()

    def fail(self, node_id, exc):
        with self._lock:
            if self._failure is None:
                self._failure = (node_id, exc)
        self._cancel.set()

    def node_done(self):
        with self._lock:
            self._live -= 1
            self._activity += 1

    def release_gate(self, channel_id):
        gate = self.gates.get(channel_id)
        if gate is not None:
            gate.release()

    def send(self, channel, msg):
        self.trace.ensure(channel).record(msg)
        if channel.dst in self.node_ids:
            self.gates[channel.channel_id].acquire()
            self.runners[channel.dst].inbox.put((channel.channel_id, msg))
        else:
            if self.transport is None:
                raise ProtocolError(
                    f"channel {channel.channel_id} leaves the executed "
                    "subset but no transport is attached")
            self.transport.send(channel, msg)
            self.bump()

    def deliver(self, channel_id, msg):
        """Inject a message arriving from outside the executed subset."""
        channel = self.channel_by_id[channel_id]
        if channel.dst not in self.node_ids:
            raise ProtocolError(
                f"channel {channel_id} does not end in this subset")
        self.gates[channel_id].acquire()
        self.runners[channel.dst].inbox.put((channel_id, msg))

    def sink(self, node_id, payload, rnd):
        msg = wire.TensorMsg(kind=wire.DATA, source=node_id,
                             channel=SINK_CHANNEL, round=rnd,
                             payload=list(payload))
        with self._lock:
            self._outputs.append((node_id, self._sink_seq, msg))
            self._sink_seq += 1

    # -- run ------------------------------------------------------------

    def _kickoff(self):
        boot = wire.TensorMsg(kind=wire.DATA, source=0,
                              channel=KICKOFF_CHANNEL, round=0, payload=[])
        eos = wire.TensorMsg(kind=wire.EOS, source=0,
                             channel=KICKOFF_CHANNEL, round=0, payload=[])
        for nid in self.graph.entries:
            if nid in self.node_ids:
                self.runners[nid].inbox.put((KICKOFF_CHANNEL, boot))
                self.runners[nid].inbox.put((KICKOFF_CHANNEL, eos))

    def run(self):
        start = time.perf_counter()
        threads = []
        self._live = len(self.runners)
        for nid, runner in self.runners.items():
            t = threading.Thread(target=runner.run, name=f"node-{nid}",
                                 daemon=True)
            threads.append(t)
        for t in threads:
            t.start()
        self._kickoff()

        last_tick, last_change = -1, time.perf_counter()
        deadlock = None
        while True:
            alive = [t for t in threads if t.is_alive()]
            if not alive:
                break
            if self._cancel.is_set():
                break
            with self._lock:
                tick = self._activity
            now = time.perf_counter()
            if tick != last_tick:
                last_tick, last_change = tick, now
            elif (now - last_change > self.timeout
                    and not self._cancel.is_set()):
                waits = "; ".join(
                    f"node {nid}: {r.state}"
                    for nid, r in sorted(self.runners.items())
                    if r.state not in ("done", "cancelled"))
                deadlock = DeadlockError(
                    f"no progress for {self.timeout:.0f}s: {waits}")
                self._cancel.set()
                break
            time.sleep(0.02)
        if self._cancel.is_set():
            # a node may be stuck inside user code and unkillable; give the
            # rest a grace period and abandon what remains (daemon threads)
            grace = time.perf_counter() + 5.0
            for t in threads:
                t.join(timeout=max(0.0, grace - time.perf_counter()))
        else:
            for t in threads:
                t.join()

        if self._failure is not None:
            nid, exc = self._failure
            if nid is None:
                raise exc
            name = self.graph.nodes[nid].name
            raise NodeFailure(f"node {nid} ({name}) failed: {exc}") from exc
        if deadlock is not None:
            raise deadlock
        if self._cancel.is_set():
            raise NodeFailure("run was cancelled")

        wall = time.perf_counter() - start
        outputs = [(nid, msg) for nid, _, msg in
                   sorted(self._outputs, key=lambda t: (t[0], t[1]))]
        busy = {nid: r.busy for nid, r in self.runners.items()}
        return RunResult(outputs=outputs, trace=self.trace,
                         wall_seconds=wall, busy_seconds=busy)


def run_local(graph, bindings, seed=0, quiescence_timeout=60.0):
    """Execute a whole graph in this process and collect exit outputs."""
    return Engine(graph, bindings, seed=seed,
                  quiescence_timeout=quiescence_timeout).run()
