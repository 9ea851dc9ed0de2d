"""Binding tables: how opaque names in a program resolve to executable code.

A binding value is any object exposing one or more of these capabilities:

    make_logic(ctx)    -> callable(payload, round) -> list of output payloads
    make_reducer(ctx)  -> callable(items) -> payload, items ordered by source
    make_spreader(ctx) -> callable(payload, n) -> list of n payloads
    route(member, n_sources, n_targets) -> static target index (routing maps)

Handles are instantiated once per graph node, so stateful logic (a trainer
holding its shard and RNG) hangs state off the handle. `ctx` identifies
the node: its id, node-set name, member index, fan-in/out, and the
experiment seed.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NodeContext:
    node_id: int
    name: str
    nodeset: str | None
    member: int
    fan_in: int
    fan_out: int
    seed: int = 0


class LogicBinding:
    """Stateless payload transform: fn(payload) or fn(payload, round)."""

    def __init__(self, fn, wants_round=False):
        self._fn = fn
        self._wants_round = wants_round

    def make_logic(self, ctx):
        fn = self._fn
        if self._wants_round:
            return lambda payload, rnd: fn(payload, rnd)
        return lambda payload, rnd: fn(payload)


class LogicFactory:
    """Per-node stateful logic: make(ctx) -> callable(payload, round)."""

    def __init__(self, make):
        self._make = make

    def make_logic(self, ctx):
        return self._make(ctx)


class ReducerBinding:
    """N-to-1 function applied to the source-ordered list of payloads."""

    def __init__(self, fn):
        self._fn = fn

    def make_reducer(self, ctx):
        return self._fn


class SpreadBinding:
    """1-to-N split: fn(payload, n) -> list of n payloads."""

    def __init__(self, fn):
        self._fn = fn

    def make_spreader(self, ctx):
        return self._fn


class RouteBinding:
    """Static routing map: parent(member) decides the downstream target."""

    def __init__(self, parent_of):
        if callable(parent_of):
            self._parent_of = parent_of
        else:
            table = list(parent_of)
            self._parent_of = lambda m: table[m]

    def route(self, member, n_sources, n_targets):
        target = int(self._parent_of(member))
        if not 0 <= target < n_targets:
            raise ValueError(f"route target {target} outside 0..{n_targets - 1}")
        return target


class ContiguousRoute:
    """Even contiguous fan-in: source member m of S maps to m * T // S.

    One instance can serve several connectors in the same program, since
    the column sizes arrive with each call."""

    def route(self, member, n_sources, n_targets):
        return member * n_targets // n_sources


def passthrough(payload):
    return [payload]


def stub_bindings(names):
    """Pass-through bindings for every given name; reduce keeps the first
    item, spread replicates. Used for structure-only compilation."""

    class _Stub:
        def make_logic(self, ctx):
            return lambda payload, rnd: [payload]

        def make_reducer(self, ctx):
            return lambda items: items[0] if items else []

        def make_spreader(self, ctx):
            return lambda payload, n: [list(payload) for _ in range(n)]

    return {name: _Stub() for name in names}
