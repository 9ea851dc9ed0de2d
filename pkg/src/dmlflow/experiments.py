"""Experiment orchestration: config files, runs, reports.

A TOML config names a scheme and its shape, where the data comes from,
and where results land:

    [experiment]
    scheme = "master-worker"      # or "p2p", "tree"
    workers = 2
    rounds = 5
    epochs_per_round = 5
    seed = 0
    repetitions = 1
    output_dir = "runs/mw"

    [data]
    synthetic = true              # or the four idx paths below
    # train_images = "data/train-images-idx3-ubyte"
    # train_labels = "data/train-labels-idx1-ubyte"
    # test_images  = "data/t10k-images-idx3-ubyte"
    # test_labels  = "data/t10k-labels-idx1-ubyte"

Every repetition runs with seed + repetition index and writes its own
directory: report.json holds only deterministic results (accuracies,
message counts), timings.json holds wall and per-node busy time, and
trace.csv the per-channel traffic. Multiple repetitions are folded
into mean_report.json.

Distributed mode executes one deployment group per process; the test
harness in run_scheme_multiprocess spawns all groups of a plan locally
over loopback sockets.
"""

from __future__ import annotations

import json
import multiprocessing
import os
import queue as queue_mod
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import graph as graphmod
from . import mlkit, net, runtime, schemes


class ConfigError(Exception):
    pass


def energy_per_flop(power_watts, wall_seconds, samples, forward_flops,
                    backward_flops):
    """Mean energy per floating point operation for a training run that
    pushed `samples` examples through forward and backward passes."""
    if power_watts <= 0 or wall_seconds <= 0:
        raise ValueError("power and duration must be positive")
    if samples < 1:
        raise ValueError("need at least one sample")
    total = forward_flops + backward_flops
    if total <= 0:
        raise ValueError("flop counts must be positive")
    return power_watts * wall_seconds / (samples * total)


# -- data -------------------------------------------------------------

_MNIST_ROLES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def mnist_paths(base=None):
    """Locate the four standard files (plain or .gz) under `base`, the
    DMLFLOW_MNIST_DIR environment variable, or ./data. None if any of
    the four is missing."""
    candidates = []
    if base is not None:
        candidates.append(Path(base))
    env = os.environ.get("DMLFLOW_MNIST_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path("data"))
    for root in candidates:
        found = {}
        for role, name in _MNIST_ROLES.items():
            for candidate in (root / name, root / (name + ".gz")):
                if candidate.is_file():
                    found[role] = str(candidate)
                    break
        if len(found) == len(_MNIST_ROLES):
            return found
    return None


def materialise_data(spec):
    """Build (train, test) datasets from a [data] table."""
    if spec.get("synthetic"):
        dseed = int(spec.get("seed", 0))
        classes = int(spec.get("classes", 10))
        dim = int(spec.get("dim", 784))
        # both splits drawn from one pool so they share class centers
        n_train = int(spec.get("train_samples", 2048))
        n_test = int(spec.get("test_samples", 512))
        pool = mlkit.synthetic_dataset(
            n_train + n_test, classes=classes, dim=dim, seed=dseed)
        train = mlkit.Dataset(pool.images[:n_train], pool.labels[:n_train])
        test = mlkit.Dataset(pool.images[n_train:], pool.labels[n_train:])
        return train, test
    missing = [k for k in _MNIST_ROLES if k not in spec]
    if missing:
        raise ConfigError(
            "the [data] table must either set synthetic = true or name "
            f"all idx files; missing {', '.join(missing)}")
    train = mlkit.load_idx(spec["train_images"], spec["train_labels"])
    test = mlkit.load_idx(spec["test_images"], spec["test_labels"])
    return train, test


# -- config -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    scheme: str
    workers: int = 2
    rounds: int = 5
    epochs_per_round: int = 5
    arch: tuple = (784, 64, 32, 10)
    lr: float = 0.01
    momentum: float = 0.5
    batch_size: int = 64
    seed: int = 0
    repetitions: int = 1
    output_dir: str = "runs"
    data: dict = field(default_factory=dict)
    manifest: str | None = None
    tree: dict = field(default_factory=dict)
    power_watts: float | None = None


_EXPERIMENT_KEYS = {"scheme", "workers", "rounds", "epochs_per_round",
                    "arch", "lr", "momentum", "batch_size", "seed",
                    "repetitions", "output_dir"}
_TREE_KEYS = {"leaves", "combiners", "frames", "threshold", "frame_h",
              "frame_w"}


def load_experiment(path):
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    exp = doc.get("experiment")
    if not isinstance(exp, dict) or "scheme" not in exp:
        raise ConfigError("config needs an [experiment] table with a scheme")
    scheme = exp["scheme"]
    if scheme not in ("master-worker", "p2p", "tree"):
        raise ConfigError(f"unknown scheme '{scheme}'")
    unknown = sorted(set(exp) - _EXPERIMENT_KEYS)
    if unknown:
        raise ConfigError(f"unknown [experiment] keys: {', '.join(unknown)}")
    tree = doc.get("tree", {})
    unknown = sorted(set(tree) - _TREE_KEYS)
    if unknown:
        raise ConfigError(f"unknown [tree] keys: {', '.join(unknown)}")
    data = doc.get("data", {})
    if scheme != "tree":
        if not data:
            raise ConfigError(
                "config needs a [data] table: synthetic = true or the "
                "four idx paths")
        if data.get("synthetic") and any(k in data for k in _MNIST_ROLES):
            raise ConfigError(
                "[data] mixes synthetic = true with idx paths")
    cfg = ExperimentConfig(
        scheme=scheme,
        workers=int(exp.get("workers", 2)),
        rounds=int(exp.get("rounds", 5)),
        epochs_per_round=int(exp.get("epochs_per_round", 5)),
        arch=tuple(exp.get("arch", (784, 64, 32, 10))),
        lr=float(exp.get("lr", 0.01)),
        momentum=float(exp.get("momentum", 0.5)),
        batch_size=int(exp.get("batch_size", 64)),
        seed=int(exp.get("seed", 0)),
        repetitions=int(exp.get("repetitions", 1)),
        output_dir=str(exp.get("output_dir", "runs")),
        data=dict(data),
        manifest=doc.get("dist", {}).get("manifest"),
        tree=dict(tree),
        power_watts=doc.get("energy", {}).get("power_watts"))
    if cfg.repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    return cfg


# -- building ----------------------------------------------------------


def _fed_config(cfg, seed):
    return schemes.FederationConfig(
        workers=cfg.workers, rounds=cfg.rounds,
        epochs_per_round=cfg.epochs_per_round, arch=tuple(cfg.arch),
        lr=cfg.lr, momentum=cfg.momentum, batch_size=cfg.batch_size,
        seed=seed)


def _tree_config(cfg, seed):
    return schemes.TreeConfig(seed=seed, **cfg.tree)


def _build(cfg, seed):
    """Program, bindings and the result probe for one run."""
    if cfg.scheme == "tree":
        tc = _tree_config(cfg, seed)
        sink = []
        bindings = schemes.tree_bindings(tc, alert_sink=sink)
        program = schemes.build_tree(tc)
        return program, bindings, sink, tc
    fc = _fed_config(cfg, seed)
    train, test = materialise_data(cfg.data)
    recorder = schemes.FlRecorder()
    bindings = schemes.fl_bindings(fc, train, test, recorder=recorder)
    if cfg.scheme == "master-worker":
        program = schemes.build_master_worker(fc)
    else:
        program = schemes.build_p2p(fc)
    return program, bindings, (recorder, train, test), fc


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fl_report(cfg, seed, recorder, test, trace):
    models = recorder.models(0)
    accuracies = [round(mlkit.evaluate(m, test), 6) for m in models]
    report = {
        "scheme": cfg.scheme,
        "workers": cfg.workers,
        "rounds": cfg.rounds,
        "epochs_per_round": cfg.epochs_per_round,
        "seed": seed,
        "final_accuracy": accuracies[-1] if accuracies else None,
        "accuracy_per_round": accuracies,
        "messages": trace.total_messages(),
        "bytes": trace.total_bytes(),
        "param_count": mlkit.count_params(tuple(cfg.arch)),
        "forward_flops": mlkit.count_forward_flops(tuple(cfg.arch)),
    }
    return report


def _timings(cfg, result, train_size):
    timings = {
        "wall_seconds": result.wall_seconds,
        "busy_seconds": {str(k): v for k, v in
                         sorted(result.busy_seconds.items())},
    }
    if cfg.power_watts and cfg.scheme != "tree":
        fwd = mlkit.count_forward_flops(tuple(cfg.arch))
        samples = cfg.rounds * cfg.epochs_per_round * train_size
        # backward pass costed at twice the forward pass
        timings["energy"] = {
            "power_watts": cfg.power_watts,
            "joules": cfg.power_watts * result.wall_seconds,
            "joules_per_flop": energy_per_flop(
                cfg.power_watts, result.wall_seconds, samples, fwd, 2 * fwd),
        }
    return timings


def report_merge(reports):
    """Fold per-repetition reports into mean/min/max summaries."""
    if not reports:
        raise ValueError("no reports to merge")
    for key in ("scheme", "workers", "rounds", "epochs_per_round",
                "leaves", "combiners", "frames", "threshold",
                "param_count", "forward_flops", "messages", "bytes"):
        vals = [r[key] for r in reports if key in r]
        if vals and any(v != vals[0] for v in vals):
            raise ValueError(f"reports disagree on {key}")
    merged = {"repetitions": len(reports),
              "seeds": [r.get("seed") for r in reports]}
    for key in ("scheme", "workers", "rounds", "epochs_per_round", "leaves",
                "combiners", "frames", "threshold", "param_count",
                "forward_flops", "messages", "bytes"):
        vals = [r[key] for r in reports if key in r]
        if vals:
            merged[key] = vals[0]
    for key in ("final_accuracy", "alerts", "boxes_total"):
        vals = [r[key] for r in reports if r.get(key) is not None]
        if vals:
            merged[key] = {"mean": float(np.mean(vals)),
                           "min": float(np.min(vals)),
                           "max": float(np.max(vals))}
    series = [r.get("accuracy_per_round") for r in reports]
    if all(s is not None for s in series) and len({len(s) for s in series}) == 1:
        merged["accuracy_per_round_mean"] = [
            float(np.mean(col)) for col in zip(*series)]
    return merged


# -- running -----------------------------------------------------------


def run_experiment(cfg, mode="local", group=None, quiescence_timeout=60.0,
                   connect_timeout=20.0):
    """Execute all repetitions of an experiment; returns the report list
    and the merged report (None for a single repetition)."""
    if mode not in ("local", "dist"):
        raise ConfigError(f"unknown mode '{mode}'")
    if mode == "dist":
        if not cfg.manifest:
            raise ConfigError("dist mode needs [dist] manifest in the config")
        if not group:
            raise ConfigError("dist mode needs the dgroup to run")
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    reports = []
    for rep in range(cfg.repetitions):
        seed = cfg.seed + rep
        run_dir = out_root / f"run{rep}"
        run_dir.mkdir(exist_ok=True)
        program, bindings, probe, built = _build(cfg, seed)
        g = graphmod.compile(program, bindings)
        if mode == "local":
            result = runtime.run_local(
                g, bindings, seed=seed,
                quiescence_timeout=quiescence_timeout)
            suffix = ""
        else:
            assignment, endpoints = graphmod.load_manifest(cfg.manifest)
            plan = graphmod.partition(g, assignment, endpoints)
            result = net.run_group(
                plan, group, bindings, seed=seed,
                quiescence_timeout=quiescence_timeout,
                connect_timeout=connect_timeout)
            suffix = f"-{group}"

        with open(run_dir / f"trace{suffix}.csv", "w",
                  encoding="utf-8") as fh:
            fh.write(result.trace.to_csv())

        if cfg.scheme == "tree":
            sink = probe
            records = sorted(sink, key=lambda r: r["frame"])
            with open(run_dir / f"alerts{suffix}.jsonl", "w",
                      encoding="utf-8") as fh:
                for rec in records:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            report = {
                "scheme": "tree",
                "seed": seed,
                "leaves": built.leaves,
                "combiners": built.combiners,
                "frames": built.frames,
                "threshold": built.threshold,
                "alerts": len(records),
                "boxes_total": int(sum(r["boxes"] for r in records)),
                "messages": result.trace.total_messages(),
                "bytes": result.trace.total_bytes(),
            }
            train_size = 0
        else:
            recorder, train, test = probe
            report = _fl_report(cfg, seed, recorder, test, result.trace)
            train_size = len(train)

        _write_json(run_dir / f"report{suffix}.json", report)
        _write_json(run_dir / f"timings{suffix}.json",
                    _timings(cfg, result, train_size))
        reports.append(report)

    merged = None
    if len(reports) > 1:
        merged = report_merge(reports)
        _write_json(out_root / "mean_report.json", merged)
    return reports, merged


# -- multiprocess harness ----------------------------------------------


def loopback_endpoints(groups):
    """One free loopback port per group."""
    endpoints = {}
    for g in sorted(set(groups)):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        endpoints[g] = ("127.0.0.1", s.getsockname()[1])
        s.close()
    return endpoints


def _child_entry(cfg, seed, group, assignment, endpoints, timeouts, out):
    try:
        program, bindings, probe, _ = _build(cfg, seed)
        g = graphmod.compile(program, bindings)
        plan = graphmod.partition(g, assignment, endpoints)
        result = net.run_group(
            plan, group, bindings, seed=seed,
            quiescence_timeout=timeouts[0], connect_timeout=timeouts[1])
        payload = {
            "outputs": [(nid, msg.round, [np.asarray(t) for t in msg.payload])
                        for nid, msg in result.outputs],
            "trace": result.trace,
            "wall": result.wall_seconds,
        }
        if cfg.scheme == "tree":
            payload["alerts"] = list(probe)
        else:
            recorder = probe[0]
            payload["tests"] = list(recorder.tests)
            payload["models"] = {
                m: [model.to_tensors() for model in recorder.models(m)]
                for m in range(cfg.workers)}
        out.put(("ok", group, payload))
    except Exception as exc:  # surfaced in the parent
        import traceback
        out.put(("error", group, f"{exc.__class__.__name__}: {exc}\n"
                 f"{traceback.format_exc()}"))


def run_scheme_multiprocess(cfg, seed=None, quiescence_timeout=60.0,
                            connect_timeout=20.0):
    """Run every dgroup of the scheme's standard split, one process per
    group over loopback. Returns {group: payload} with each group's
    outputs, trace and probe data."""
    seed = cfg.seed if seed is None else seed
    program, bindings, _, _ = _build(cfg, seed)
    g = graphmod.compile(program, bindings)
    assignment = schemes.standard_assignment(g, cfg.scheme)
    endpoints = loopback_endpoints(assignment.values())

    ctx = multiprocessing.get_context("spawn")
    out = ctx.Queue()
    procs = []
    for grp in sorted(set(assignment.values())):
        p = ctx.Process(
            target=_child_entry,
            args=(cfg, seed, grp, assignment, endpoints,
                  (quiescence_timeout, connect_timeout), out),
            daemon=True)
        p.start()
        procs.append(p)

    results, errors = {}, []
    deadline = time.monotonic() + connect_timeout + quiescence_timeout + 120
    for _ in procs:
        try:
            status, grp, payload = out.get(
                timeout=max(1.0, deadline - time.monotonic()))
        except queue_mod.Empty:
            errors.append("timed out waiting for group results")
            break
        if status == "ok":
            results[grp] = payload
        else:
            errors.append(f"group {grp} failed: {payload}")
    for p in procs:
        p.join(timeout=10.0)
    for p in procs:
        if p.is_alive():
            p.terminate()
    if errors:
        raise RuntimeError("; ".join(errors))
    return results
