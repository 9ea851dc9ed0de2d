"""Compilation of block programs into executable dataflow graphs.

A program is translated into a flat graph of typed nodes joined by
directed channels. Node kinds:

    worker-logic   runs a chain of logic functions on each input
    router-1toN    fans one input stream out to many channels
    merger-Nto1    funnels many channels into one stream
    reducer        barrier over all inputs, then an N-ary function
    spreader       splits one payload into per-channel pieces

Distribute bodies compile column by column: every lane materialises at
once, and adjacent seq/par stages inside a body fuse into a single
logic node per lane. Finite feedback wires the body's outputs back to
its inputs and plants a round guard on the wrap point; when a lane ends
in a bare reducer and starts with plain logic, the two fuse so the lane
loops through one node. Infinite feedback adds no wrap channels at all;
the loop lives in the message flow and ends with end-of-stream.

A reduce whose binding is a routing map (route() but no make_reducer)
compiles to no node: it wires the surrounding distribute stages
bipartite, stamps each upstream node with a static target, and turns
the downstream lane heads into gather mergers.

Graphs are then split into deployment groups (dgroups). Every group
must be weakly connected, since a group maps to one OS process and a
disconnected group could silently idle.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import dsl

KIND_LOGIC = "worker-logic"
KIND_ROUTER = "router-1toN"
KIND_MERGER = "merger-Nto1"
KIND_REDUCER = "reducer"
KIND_SPREADER = "spreader"

DEFAULT_CAPACITY = 16


class CompileError(Exception):
    pass


class PartitionError(Exception):
    pass


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    name: str
    kind: str
    fn: str | None = None
    logic: tuple[str, ...] = ()
    policy: str | None = None
    selector: object = None
    nodeset: str | None = None
    member: int = 0
    in_loop: bool = False
    guard: tuple[str, int] | None = None
    static_route: int | None = None


@dataclass(frozen=True)
class ChannelSpec:
    channel_id: int
    src: int
    dst: int
    feedback: bool = False
    injection: bool = False
    capacity: int = DEFAULT_CAPACITY


@dataclass(frozen=True)
class DataflowGraph:
    nodes: dict[int, NodeSpec]
    channels: tuple[ChannelSpec, ...]
    entries: tuple[int, ...]
    exits: tuple[int, ...]
    nodesets: dict[str, int] = field(default_factory=dict)
    conds: dict[str, int | None] = field(default_factory=dict)

    def in_channels(self, node_id):
        return [c for c in self.channels if c.dst == node_id]

    def out_channels(self, node_id):
        return [c for c in self.channels if c.src == node_id]

    def is_loop_channel(self, channel):
        return (self.nodes[channel.src].in_loop
                and self.nodes[channel.dst].in_loop
                and not channel.injection)

    def node_list(self):
        return [self.nodes[i] for i in sorted(self.nodes)]


def function_names(program):
    """Every function identifier the program references."""
    names = set()

    def walk(e):
        if isinstance(e, (dsl.Seq, dsl.Par, dsl.Reduce, dsl.Spread)):
            names.add(e.fn)
        elif isinstance(e, dsl.NToOne):
            if e.fn is not None:
                names.add(e.fn)
        elif isinstance(e, dsl.Pipe):
            for s in e.stages:
                walk(s)
        elif isinstance(e, dsl.Distribute):
            walk(e.body)
        elif isinstance(e, dsl.Feedback):
            walk(e.body)

    walk(program.body)
    return names


class _MutNode:
    __slots__ = ("name", "kind", "fn", "logic", "policy", "selector",
                 "nodeset", "member", "in_loop", "guard", "static_route")

    def __init__(self, name, kind, fn=None, logic=(), policy=None,
                 selector=None, nodeset=None, member=0):
        self.name = name
        self.kind = kind
        self.fn = fn
        self.logic = tuple(logic)
        self.policy = policy
        self.selector = selector
        self.nodeset = nodeset
        self.member = member
        self.in_loop = False
        self.guard = None
        self.static_route = None


class _MutChan:
    __slots__ = ("src", "dst", "feedback", "injection")

    def __init__(self, src, dst, feedback=False, injection=False):
        self.src = src
        self.dst = dst
        self.feedback = feedback
        self.injection = injection


class _Seg:
    """Open segment of the graph under construction: the node ids that
    still accept inputs and the ones that still emit outputs."""

    __slots__ = ("ins", "outs", "injects")

    def __init__(self, ins, outs, injects=False):
        self.ins = list(ins)
        self.outs = list(outs)
        self.injects = injects


class _Builder:
    def __init__(self, program, bindings, capacity):
        self.program = program
        self.bindings = bindings
        self.capacity = capacity
        self.nodes = {}
        self.channels = []
        self._next_id = 0
        self._in_feedback = False

    # -- node / channel creation -------------------------------------

    def add_node(self, kind, name, **kw):
        nid = self._next_id
        self._next_id += 1
        self.nodes[nid] = _MutNode(name, kind, **kw)
        return nid

    def add_channel(self, src, dst, feedback=False, injection=False):
        self.channels.append(_MutChan(src, dst, feedback, injection))

    def _require(self, name, capability, role):
        binding = self.bindings.get(name)
        if binding is None:
            raise CompileError(f"no binding for function '{name}'")
        if not hasattr(binding, capability):
            raise CompileError(f"binding '{name}' cannot serve as {role}")
        return binding

    # -- expression compilation --------------------------------------

    def _flatten(self, pipe):
        out = []
        for st in pipe.stages:
            if isinstance(st, dsl.Pipe):
                out.extend(self._flatten(st))
            else:
                out.append(st)
        return out

    def _is_route_connector(self, expr):
        if not isinstance(expr, dsl.Reduce):
            return False
        binding = self.bindings.get(expr.fn)
        return (binding is not None and hasattr(binding, "route")
                and not hasattr(binding, "make_reducer"))

    def compile_expr(self, expr):
        if isinstance(expr, (dsl.Seq, dsl.Par)):
            self._require(expr.fn, "make_logic", "node logic")
            nid = self.add_node(KIND_LOGIC, expr.fn, logic=(expr.fn,))
            return _Seg([nid], [nid])
        if isinstance(expr, dsl.Pipe):
            return self._compile_pipe(self._flatten(expr))
        if isinstance(expr, dsl.Distribute):
            return self._compile_dist(expr)
        if isinstance(expr, dsl.Feedback):
            return self._compile_feedback(expr)
        if isinstance(expr, dsl.Reduce):
            if self._is_route_connector(expr):
                raise CompileError(
                    f"routing map '{expr.fn}' must sit between two pipeline "
                    "stages")
            nid = self._make_reducer_node(expr.fn)
            return _Seg([nid], [nid])
        if isinstance(expr, dsl.NToOne):
            nid = self._make_nto1_node(expr)
            return _Seg([nid], [nid])
        if isinstance(expr, dsl.OneToN):
            nid = self._make_1ton_node(expr)
            return _Seg([nid], [nid])
        if isinstance(expr, dsl.Spread):
            self._require(expr.fn, "make_spreader", "a spreader")
            nid = self.add_node(KIND_SPREADER, expr.fn, fn=expr.fn)
            return _Seg([nid], [nid])
        raise CompileError(f"cannot compile {type(expr).__name__}")

    def _make_reducer_node(self, fn, nodeset=None, member=0):
        self._require(fn, "make_reducer", "a reducer")
        return self.add_node(KIND_REDUCER, fn, fn=fn, policy="reduce",
                             nodeset=nodeset, member=member)

    def _make_nto1_node(self, expr, nodeset=None, member=0):
        if expr.policy == "reduce":
            return self._make_reducer_node(expr.fn, nodeset, member)
        return self.add_node(KIND_MERGER, expr.policy, policy=expr.policy,
                             nodeset=nodeset, member=member)

    def _make_1ton_node(self, expr, nodeset=None, member=0):
        if expr.policy == "unicast" and expr.selector == "auto":
            raise CompileError(
                "unicast auto needs a load scheduler; use rr or a fixed "
                "target index")
        if expr.policy == "broadcast":
            name = "bcast"
        elif expr.policy == "scatter":
            name = "scatter"
        else:
            name = f"ucast:{expr.selector}"
        return self.add_node(KIND_ROUTER, name, policy=expr.policy,
                             selector=expr.selector, nodeset=nodeset,
                             member=member)

    # -- pipelines ----------------------------------------------------

    def _compile_pipe(self, stages):
        items = []
        for st in stages:
            if self._is_route_connector(st):
                items.append(("route", st.fn))
            else:
                items.append(("seg", self.compile_expr(st)))
        if items[0][0] == "route" or items[-1][0] == "route":
            raise CompileError(
                "a routing map cannot start or end a pipeline")
        prev = items[0][1]
        first = prev
        k = 1
        while k < len(items):
            tag, val = items[k]
            if tag == "route":
                nxt_tag, nxt = items[k + 1]
                if nxt_tag == "route":
                    raise CompileError("two adjacent routing maps")
                self._connect_route(prev, nxt, val)
                prev = nxt
                k += 2
            else:
                self._connect(prev.outs, val.ins, injection=val.injects)
                prev = val
                k += 1
        return _Seg(first.ins, prev.outs, injects=first.injects)

    def _connect(self, a_outs, b_ins, injection=False):
        if not a_outs or not b_ins:
            raise CompileError("cannot connect an empty stage boundary")
        a_kinds = [self.nodes[n].kind for n in a_outs]
        b_kinds = [self.nodes[n].kind for n in b_ins]
        if all(k in (KIND_ROUTER, KIND_SPREADER) for k in a_kinds):
            pairs = [(s, d) for s in a_outs for d in b_ins]
        elif not injection and all(k in (KIND_MERGER, KIND_REDUCER)
                                   for k in b_kinds):
            pairs = [(s, d) for s in a_outs for d in b_ins]
        elif len(a_outs) == len(b_ins):
            pairs = list(zip(a_outs, b_ins))
        elif len(a_outs) == 1:
            pairs = [(a_outs[0], d) for d in b_ins]
        else:
            raise CompileError(
                f"cannot wire {len(a_outs)} outputs into {len(b_ins)} "
                "inputs: counts differ and neither side resolves fan-out")
        for src, dst in pairs:
            self.add_channel(src, dst, injection=injection)

    def _connect_route(self, prev, nxt, fn):
        binding = self._require(fn, "route", "a routing map")
        srcs, dsts = prev.outs, nxt.ins
        for d in dsts:
            node = self.nodes[d]
            if node.kind != KIND_LOGIC:
                raise CompileError(
                    "routing targets must be plain logic stages")
            node.kind = KIND_MERGER
            node.policy = "gather"
        n = len(dsts)
        for s in srcs:
            node = self.nodes[s]
            if node.static_route is not None:
                raise CompileError(f"node '{node.name}' already routed")
            if any(c.src == s for c in self.channels):
                raise CompileError(
                    f"routing source '{node.name}' already has outputs")
            node.static_route = binding.route(node.member, len(srcs), n)
            for d in dsts:
                self.add_channel(s, d)

    # -- distribute ---------------------------------------------------

    def _compile_dist(self, dist):
        decl = self.program.nodesets[dist.nodeset]
        size = decl.size
        body = dist.body
        stages = self._flatten(body) if isinstance(body, dsl.Pipe) else [body]

        # group adjacent seq/par stages into one logic chain per lane
        units = []
        for st in stages:
            if isinstance(st, (dsl.Seq, dsl.Par)):
                if units and units[-1][0] == "logic":
                    units[-1][1].append(st.fn)
                else:
                    units.append(("logic", [st.fn]))
            else:
                units.append(("stage", st))

        cols = []
        for tag, val in units:
            col = []
            if tag == "logic":
                for name in val:
                    self._require(name, "make_logic", "node logic")
                label = "+".join(val)
                for m in range(size):
                    nid = self.add_node(KIND_LOGIC, label, logic=tuple(val),
                                        nodeset=dist.nodeset, member=m)
                    col.append(_Seg([nid], [nid]))
            else:
                col.extend(self._compile_dist_stage(val, dist.nodeset, size))
            cols.append(col)

        for k in range(len(cols) - 1):
            a = [n for seg in cols[k] for n in seg.outs]
            b = [n for seg in cols[k + 1] for n in seg.ins]
            self._connect(a, b)

        ins = [n for seg in cols[0] for n in seg.ins]
        outs = [n for seg in cols[-1] for n in seg.outs]
        return _Seg(ins, outs)

    def _compile_dist_stage(self, expr, nodeset, size):
        if isinstance(expr, dsl.Feedback):
            raise CompileError(
                "feedback inside a distribute body is not supported")
        if isinstance(expr, dsl.Reduce) and self._is_route_connector(expr):
            raise CompileError(
                f"routing map '{expr.fn}' cannot appear inside a "
                "distribute body")
        col = []
        for m in range(size):
            if isinstance(expr, dsl.Distribute):
                col.append(self._compile_dist(expr))
            elif isinstance(expr, dsl.Reduce):
                nid = self._make_reducer_node(expr.fn, nodeset, m)
                col.append(_Seg([nid], [nid]))
            elif isinstance(expr, dsl.NToOne):
                nid = self._make_nto1_node(expr, nodeset, m)
                col.append(_Seg([nid], [nid]))
            elif isinstance(expr, dsl.OneToN):
                nid = self._make_1ton_node(expr, nodeset, m)
                col.append(_Seg([nid], [nid]))
            elif isinstance(expr, dsl.Spread):
                self._require(expr.fn, "make_spreader", "a spreader")
                nid = self.add_node(KIND_SPREADER, expr.fn, fn=expr.fn,
                                    nodeset=nodeset, member=m)
                col.append(_Seg([nid], [nid]))
            else:
                raise CompileError(
                    f"cannot place {type(expr).__name__} inside a "
                    "distribute body")
        return col

    # -- feedback -----------------------------------------------------

    def _compile_feedback(self, fb):
        if self._in_feedback:
            raise CompileError("nested feedback is not supported")
        cond = self.program.conds[fb.cond]
        before = set(self.nodes)
        self._in_feedback = True
        try:
            body = self.compile_expr(fb.body)
        finally:
            self._in_feedback = False
        for nid in self.nodes:
            if nid not in before:
                self.nodes[nid].in_loop = True

        if cond.rounds is None:
            return _Seg(body.ins, body.outs, injects=True)

        rounds = cond.rounds
        ins, outs = list(body.ins), list(body.outs)

        if len(outs) == len(ins) and all(
                self._fusable(o, i) for o, i in zip(outs, ins)):
            fused = [self._fuse(o, i, fb.cond, rounds)
                     for o, i in zip(outs, ins)]
            return _Seg(fused, fused, injects=True)

        if len(outs) == 1:
            exit_node = outs[0]
            for i in ins:
                self.add_channel(exit_node, i, feedback=True)
            self.nodes[exit_node].guard = (fb.cond, rounds)
            return _Seg(ins, outs, injects=True)

        if len(outs) == len(ins):
            for o, i in zip(outs, ins):
                self.add_channel(o, i, feedback=True)
                self.nodes[o].guard = (fb.cond, rounds)
            return _Seg(ins, outs, injects=True)

        raise CompileError(
            f"cannot wire feedback: {len(outs)} outputs to {len(ins)} "
            "inputs")

    def _fusable(self, out_id, in_id):
        o, i = self.nodes[out_id], self.nodes[in_id]
        return (out_id != in_id
                and o.kind in (KIND_REDUCER, KIND_MERGER)
                and not o.logic and o.guard is None
                and i.kind == KIND_LOGIC
                and o.nodeset == i.nodeset and o.member == i.member)

    def _fuse(self, out_id, in_id, cond_name, rounds):
        o, i = self.nodes[out_id], self.nodes[in_id]
        o.logic = i.logic
        o.name = f"{o.name}+{i.name}"
        for ch in self.channels:
            if ch.src == in_id:
                ch.src = out_id
            if ch.dst == in_id:
                ch.dst = out_id
        del self.nodes[in_id]
        # everything feeding the fused node inside the body is the loop path
        for ch in self.channels:
            if ch.dst == out_id and not ch.injection:
                ch.feedback = True
        o.guard = (cond_name, rounds)
        return out_id

    # -- finalisation -------------------------------------------------

    def finalise(self, seg):
        remap = {old: new for new, old in enumerate(sorted(self.nodes))}
        nodes = {}
        for old, n in self.nodes.items():
            nid = remap[old]
            nodes[nid] = NodeSpec(
                node_id=nid, name=n.name, kind=n.kind, fn=n.fn,
                logic=n.logic, policy=n.policy, selector=n.selector,
                nodeset=n.nodeset, member=n.member, in_loop=n.in_loop,
                guard=n.guard, static_route=n.static_route)
        channels = tuple(
            ChannelSpec(channel_id=k, src=remap[c.src], dst=remap[c.dst],
                        feedback=c.feedback, injection=c.injection,
                        capacity=self.capacity)
            for k, c in enumerate(self.channels))
        entries = tuple(remap[n] for n in seg.ins)
        exits = tuple(remap[n] for n in seg.outs)
        graph = DataflowGraph(
            nodes=nodes, channels=channels, entries=entries, exits=exits,
            nodesets={k: v.size for k, v in self.program.nodesets.items()},
            conds={k: v.rounds for k, v in self.program.conds.items()})
        _check_structure(graph)
        return graph


def _check_structure(graph):
    if not graph.entries:
        raise CompileError("graph has no entry nodes")
    if not graph.exits:
        raise CompileError("graph has no exit nodes")
    for ch in graph.channels:
        if ch.src not in graph.nodes or ch.dst not in graph.nodes:
            raise CompileError("channel references a missing node")
    for e in graph.entries:
        if graph.in_channels(e):
            raise CompileError(f"entry node {e} has input channels")
    # forward subgraph (feedback edges removed) must be acyclic
    order, state = [], {}
    fwd = {nid: [] for nid in graph.nodes}
    for ch in graph.channels:
        if not ch.feedback:
            fwd[ch.src].append(ch.dst)

    def visit(nid):
        if state.get(nid) == 1:
            raise CompileError("forward channels form a cycle")
        if state.get(nid) == 2:
            return
        state[nid] = 1
        for nxt in fwd[nid]:
            visit(nxt)
        state[nid] = 2
        order.append(nid)

    for nid in graph.nodes:
        visit(nid)


def compile(program, bindings, capacity=DEFAULT_CAPACITY):
    """Translate a validated program plus a binding table into a graph."""
    diags = dsl.validate(program)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        msg = "; ".join(d.message for d in errors)
        raise CompileError(f"program is not valid: {msg}")
    missing = sorted(n for n in function_names(program) if n not in bindings)
    if missing:
        raise CompileError(f"missing bindings: {', '.join(missing)}")
    builder = _Builder(program, bindings, capacity)
    seg = builder.compile_expr(program.body)
    return builder.finalise(seg)


# -- deployment -------------------------------------------------------


@dataclass(frozen=True)
class DeploymentPlan:
    graph: DataflowGraph
    assignment: dict[int, str]
    endpoints: dict[str, tuple[str, int]]

    @property
    def groups(self):
        out = {}
        for nid in sorted(self.assignment):
            out.setdefault(self.assignment[nid], []).append(nid)
        return {g: tuple(ns) for g, ns in out.items()}

    def group_of(self, node_id):
        return self.assignment[node_id]

    def is_inter(self, channel):
        return self.assignment[channel.src] != self.assignment[channel.dst]

    def inter_channels(self):
        return [c for c in self.graph.channels if self.is_inter(c)]

    def inbound(self, group):
        return [c for c in self.graph.channels
                if self.is_inter(c) and self.assignment[c.dst] == group]

    def outbound(self, group):
        return [c for c in self.graph.channels
                if self.is_inter(c) and self.assignment[c.src] == group]

    def internal(self, group):
        return [c for c in self.graph.channels
                if self.assignment[c.src] == group
                and self.assignment[c.dst] == group]


@dataclass(frozen=True)
class ChannelStats:
    total: int
    inter: int
    intra: int
    direction_pairs: int
    per_round_messages: int


def partition(graph, assignment, endpoints):
    """Split a graph into deployment groups, checking the assignment is
    total and every group has a reachable endpoint.

    A group may hold nodes with no channel between them; the usual
    aggregator group hosts both the source stage and the reducer even
    though data only meets them through the workers."""
    unknown = sorted(set(assignment) - set(graph.nodes))
    if unknown:
        raise PartitionError(f"assignment names unknown nodes: {unknown}")
    missing = sorted(set(graph.nodes) - set(assignment))
    if missing:
        raise PartitionError(f"nodes without a group: {missing}")
    groups = sorted(set(assignment.values()))
    for g in groups:
        if g not in endpoints:
            raise PartitionError(f"no endpoint for dgroup '{g}'")
    for g, (host, port) in endpoints.items():
        if not isinstance(host, str) or not host:
            raise PartitionError(f"dgroup '{g}' has a bad host")
        if not isinstance(port, int) or not 0 < port < 65536:
            raise PartitionError(f"dgroup '{g}' has a bad port")

    return DeploymentPlan(graph=graph, assignment=dict(assignment),
                          endpoints=dict(endpoints))


def channel_stats(plan):
    graph = plan.graph
    inter = plan.inter_channels()
    pairs = {(plan.group_of(c.src), plan.group_of(c.dst)) for c in inter}
    per_round = sum(1 for c in inter if graph.is_loop_channel(c))
    return ChannelStats(
        total=len(graph.channels),
        inter=len(inter),
        intra=len(graph.channels) - len(inter),
        direction_pairs=len(pairs),
        per_round_messages=per_round)


# -- manifests --------------------------------------------------------

_BARE_KEY = re.compile(r"[A-Za-z0-9_-]+\Z")


def _toml_key(name):
    if _BARE_KEY.match(name):
        return name
    escaped = name.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def write_manifest(plan, path):
    lines = []
    groups = plan.groups
    for g in sorted(groups):
        host, port = plan.endpoints[g]
        lines.append(f"[dgroup.{_toml_key(g)}]")
        lines.append(f'host = "{host}"')
        lines.append(f"port = {port}")
        lines.append(f"nodes = [{', '.join(str(n) for n in groups[g])}]")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def load_manifest(path):
    """Read a dgroup manifest, returning (assignment, endpoints)."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    tables = data.get("dgroup")
    if not isinstance(tables, dict) or not tables:
        raise ManifestError("manifest has no [dgroup.*] tables")
    assignment, endpoints = {}, {}
    for g, tbl in tables.items():
        if not isinstance(tbl, dict):
            raise ManifestError(f"dgroup '{g}' is not a table")
        try:
            host, port, nodes = tbl["host"], tbl["port"], tbl["nodes"]
        except KeyError as exc:
            raise ManifestError(f"dgroup '{g}' lacks {exc.args[0]}") from None
        if not isinstance(host, str):
            raise ManifestError(f"dgroup '{g}': host must be a string")
        if not isinstance(port, int):
            raise ManifestError(f"dgroup '{g}': port must be an integer")
        if (not isinstance(nodes, list)
                or any(not isinstance(n, int) for n in nodes)):
            raise ManifestError(f"dgroup '{g}': nodes must be integers")
        for n in nodes:
            if n in assignment:
                raise ManifestError(
                    f"node {n} assigned to both '{assignment[n]}' and '{g}'")
            assignment[n] = g
        endpoints[g] = (host, port)
    return assignment, endpoints


# -- rendering --------------------------------------------------------

_DOT_SHAPES = {
    KIND_LOGIC: "box",
    KIND_ROUTER: "trapezium",
    KIND_MERGER: "invtrapezium",
    KIND_REDUCER: "hexagon",
    KIND_SPREADER: "invtriangle",
}


def to_dot(graph, plan=None):
    """Graphviz rendering; feedback dashed, injection dotted."""
    lines = ["digraph dataflow {", "  rankdir=LR;", "  node [fontsize=10];"]

    def node_line(n, indent="  "):
        shape = _DOT_SHAPES[n.kind]
        extra = ", peripheries=2" if n.guard else ""
        return (f'{indent}n{n.node_id} [label="{n.node_id}: {n.name}", '
                f"shape={shape}{extra}];")

    if plan is not None:
        for k, (g, members) in enumerate(sorted(plan.groups.items())):
            lines.append(f"  subgraph cluster_{k} {{")
            lines.append(f'    label="{g}";')
            for nid in members:
                lines.append(node_line(graph.nodes[nid], "    "))
            lines.append("  }")
    else:
        for n in graph.node_list():
            lines.append(node_line(n))
    for ch in graph.channels:
        style = ""
        if ch.feedback:
            style = ' [style=dashed]'
        elif ch.injection:
            style = ' [style=dotted]'
        lines.append(f"  n{ch.src} -> n{ch.dst}{style};")
    lines.append("}")
    return "\n".join(lines)
