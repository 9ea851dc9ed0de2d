"""The same experiment, one process per deployment group.

run_scheme_multiprocess spawns each group of the standard split in
its own process; boundary channels run over loopback TCP with the
length-prefixed frame format from dmlflow.wire. The result must match
the single-process run bit for bit.

(Everything sits under the main guard because the spawned group
processes re-import this module.)
"""

import numpy as np

from dmlflow import experiments, graph, runtime, schemes


def local_reference(cfg):
    """Build and run the identical experiment in this process."""
    fed = schemes.FederationConfig(
        workers=cfg.workers, rounds=cfg.rounds,
        epochs_per_round=cfg.epochs_per_round, arch=cfg.arch,
        lr=cfg.lr, momentum=cfg.momentum, batch_size=cfg.batch_size,
        seed=cfg.seed)
    train, test = experiments.materialise_data(cfg.data)
    bindings = schemes.fl_bindings(fed, train, test)
    g = graph.compile(schemes.build_master_worker(fed), bindings)
    return runtime.run_local(g, bindings, seed=cfg.seed)


if __name__ == "__main__":
    cfg = experiments.ExperimentConfig(
        scheme="master-worker", workers=2, rounds=3, epochs_per_round=1,
        arch=(20, 16, 4), lr=0.1, batch_size=16, seed=0,
        data={"synthetic": True, "train_samples": 256, "test_samples": 64,
              "classes": 4, "dim": 20})

    local = local_reference(cfg)
    print(f"local run: {local.trace.total_messages()} messages,"
          f" final model round {local.outputs[0][1].round}")

    results = experiments.run_scheme_multiprocess(cfg)
    print(f"groups finished: {sorted(results)}")
    for name, payload in sorted(results.items()):
        sent = payload["trace"].total_messages()
        print(f"  {name}: sent {sent} messages,"
              f" wall {payload['wall']:.2f}s")

    # the aggregator group holds the exit node and the final model
    nid, rnd, tensors = results["A"]["outputs"][0]
    _, local_msg = local.outputs[0]
    same = all(np.array_equal(a, b)
               for a, b in zip(tensors, local_msg.payload))
    print(f"final model identical to the local run: {same}")
    assert same

    # each channel's traffic is counted once, by its sending group, so
    # the merged trace equals the local one row for row
    merged = runtime.ExecutionTrace()
    for payload in results.values():
        merged.merge(payload["trace"])
    assert merged.total_messages() == local.trace.total_messages()
    assert merged.total_bytes() == local.trace.total_bytes()
    print("merged per-group traces match the local trace")
