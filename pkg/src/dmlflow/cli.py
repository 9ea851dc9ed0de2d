"""Command line front end.

    dmlflow run --config exp.toml [--mode local|dist --group NAME]
    dmlflow validate program.dml
    dmlflow graph program.dml [--dot out.dot]

`run` executes an experiment config; `validate` checks a program file
and prints its diagnostics; `graph` compiles a program with
pass-through bindings and reports (or renders) the resulting topology.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import dsl, experiments
from . import graph as graphmod
from .bindings import stub_bindings


def _cmd_run(args):
    cfg = experiments.load_experiment(args.config)
    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.rounds is not None:
        overrides["rounds"] = args.rounds
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    reports, merged = experiments.run_experiment(
        cfg, mode=args.mode, group=args.group)
    for i, rep in enumerate(reports):
        if cfg.scheme == "tree":
            print(f"run{i}: {rep['alerts']} alerts, "
                  f"{rep['boxes_total']} boxes, "
                  f"{rep['messages']} messages")
        else:
            acc = rep.get("final_accuracy")
            shown = "n/a" if acc is None else f"{acc:.4f}"
            print(f"run{i}: final accuracy {shown}, "
                  f"{rep['messages']} messages")
    if merged is not None and "final_accuracy" in merged:
        print(f"mean final accuracy {merged['final_accuracy']['mean']:.4f} "
              f"over {merged['repetitions']} repetitions")
    print(f"results in {cfg.output_dir}")
    return 0


def _load_program(path):
    with open(path, "r", encoding="utf-8") as fh:
        return dsl.parse(fh.read())


def _cmd_validate(args):
    try:
        program = _load_program(args.program)
    except dsl.ParseError as exc:
        print(f"{args.program}:{exc.line}:{exc.col}: error: {exc.message}",
              file=sys.stderr)
        return 1
    diags = dsl.validate(program)
    for d in diags:
        where = ""
        if d.span is not None:
            where = f"{d.span.line}:{d.span.col}: "
        print(f"{args.program}:{where}{d.severity}: {d.message}")
    if any(d.severity == "error" for d in diags):
        return 1
    print(f"{args.program}: ok")
    return 0


def _cmd_graph(args):
    program = _load_program(args.program)
    bindings = stub_bindings(graphmod.function_names(program))
    g = graphmod.compile(program, bindings)
    kinds = {}
    for spec in g.nodes.values():
        kinds[spec.kind] = kinds.get(spec.kind, 0) + 1
    print(f"{len(g.nodes)} nodes, {len(g.channels)} channels")
    for kind in sorted(kinds):
        print(f"  {kinds[kind]:3d} {kind}")
    print(f"entries: {list(g.entries)}  exits: {list(g.exits)}")
    if args.dot:
        with open(args.dot, "w", encoding="utf-8") as fh:
            fh.write(graphmod.to_dot(g))
            fh.write("\n")
        print(f"wrote {args.dot}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dmlflow",
        description="building-block programs for decentralised ML")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--mode", choices=("local", "dist"), default="local")
    p_run.add_argument("--group", help="dgroup to host (dist mode)")
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--rounds", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", help="override output_dir")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="check a program file")
    p_val.add_argument("program")
    p_val.set_defaults(fn=_cmd_validate)

    p_graph = sub.add_parser("graph", help="compile and describe a program")
    p_graph.add_argument("program")
    p_graph.add_argument("--dot", help="write a Graphviz file")
    p_graph.set_defaults(fn=_cmd_graph)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (experiments.ConfigError, graphmod.CompileError,
            graphmod.PartitionError, graphmod.ManifestError,
            dsl.ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
