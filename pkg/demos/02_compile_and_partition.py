"""From program text to an executable graph to deployment groups.

Compilation turns each block into concrete nodes (logic workers,
routers, mergers, reducers) and channels. Partitioning then assigns
nodes to named deployment groups; channels that cross a group
boundary become network channels, and their count per round is what
the communication analysis is about.
"""

from dmlflow import dsl, graph, schemes
from dmlflow.bindings import stub_bindings
from dmlflow.experiments import loopback_endpoints

source = schemes.master_worker_source(workers=4, rounds=10)
print(source)

program = dsl.parse(source)
bindings = stub_bindings(graph.function_names(program))
g = graph.compile(program, bindings)

print(f"compiled: {len(g.nodes)} nodes, {len(g.channels)} channels")
for nid, node in sorted(g.nodes.items()):
    print(f"  node {nid}: {node.kind:14s} {node.name:12s}"
          f" nodeset={node.nodeset or '-'} member={node.member}")
for ch in g.channels:
    marks = []
    if ch.feedback:
        marks.append("feedback")
    if ch.injection:
        marks.append("injection")
    print(f"  channel {ch.channel_id}: {ch.src} -> {ch.dst}"
          f" {' '.join(marks)}")

# -- deployment groups --------------------------------------------------

# the standard split puts the aggregation side on one group and each
# worker on its own; loopback endpoints stand in for real hosts here
assignment = schemes.standard_assignment(g, "master-worker")
endpoints = loopback_endpoints(assignment.values())
plan = graph.partition(g, assignment, endpoints)

print("\ngroups:")
for name, nodes in sorted(plan.groups.items()):
    print(f"  {name}: nodes {sorted(nodes)}")

stats = graph.channel_stats(plan)
print(f"channels: {stats.total} total, {stats.inter} inter-group,"
      f" {stats.intra} intra-group")
print(f"steady-state messages per round: {stats.per_round_messages}"
      f" (= 2 x {len(plan.groups) - 1} workers)")

# -- artifacts ----------------------------------------------------------

# a manifest records the same assignment in a file other hosts can load
graph.write_manifest(plan, "/tmp/mw-groups.toml")
print("\nwrote /tmp/mw-groups.toml:")
print(open("/tmp/mw-groups.toml").read())

# and the graph renders to Graphviz for inspection
with open("/tmp/mw.dot", "w") as fh:
    fh.write(graph.to_dot(g, plan=plan))
print("wrote /tmp/mw.dot (render with: dot -Tpng /tmp/mw.dot -o mw.png)")
