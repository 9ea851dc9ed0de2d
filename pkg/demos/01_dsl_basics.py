"""A tour of the building-block language.

Programs are composed from a handful of blocks: seq/par wrap a
function, dist replicates a stage across a nodeset, 1toN and NtoOne
fan traffic out and back in, reduce folds many inputs into one, and
feedback loops a stage until a round condition runs out. The `.`
operator pipes stages together.
"""

from dmlflow import dsl

# -- parsing ------------------------------------------------------------

source = """\
nodeset W = 3;
cond r = 5;

seq(init) . feedback(
    dist[W]{ par(test) . par(train) }
    . NtoOne(gatherall) . seq(FedAvg)
    . 1toN(bcast)
, r)
"""

program = dsl.parse(source)
print("parsed a", type(program.body).__name__, "of",
      len(program.body.stages), "stages")
print("nodesets:", {name: ns.size for name, ns in program.nodesets.items()})
print("conds:", {name: c.rounds for name, c in program.conds.items()})

# the renderer emits a canonical text form; parsing that text again
# gives back a structurally equal program
canonical = dsl.render(program)
print("\ncanonical form:")
print(canonical)
assert dsl.parse(canonical) == program

# -- validation ---------------------------------------------------------

# the validator checks arity between pipe stages, nodeset references,
# and loop conditions before anything is compiled
bad = dsl.parse("nodeset W = 2;\nnodeset V = 3;\n"
                "seq(a) . dist[W]{ par(b) } . dist[V]{ par(c) }")
for diag in dsl.validate(bad):
    print(f"diagnostic at {diag.span.line}:{diag.span.col}:",
          diag.severity, "-", diag.message)

clean = dsl.validate(program)
print("canonical program diagnostics:", clean)

# -- rewriting ----------------------------------------------------------

# R1 contracts gather-everything-then-apply into a single reduce stage;
# both forms run identically, so the rewrite is free to apply
contracted = dsl.rewrite(program, "R1")
print("\nafter R1:")
print(dsl.render(contracted))

# rewrites are reversible; R1_INV re-expands the reduce
expanded = dsl.rewrite(contracted, "R1_INV")
assert expanded == program
print("R1_INV restored the original form")

# asking for a rewrite whose pattern is absent is an error, not a no-op
try:
    dsl.rewrite(contracted, "R1")
except dsl.PatternNotFoundError as exc:
    print("second R1 rejected:", exc)
