"""Program text: parsing, rendering, validation, rewriting."""

import numpy as np
import pytest

import proggen
from dmlflow import dsl


MASTER_WORKER = """
nodeset W = 4;
cond r = 10;

seq(init) . feedback(
    dist[W]{ par(test) . par(train) }
    . reduce(FedAvg)
    . 1toN(bcast)
, r)
"""

MASTER_WORKER_EXPANDED = """
nodeset W = 4;
cond r = 10;

seq(init) . feedback(
    dist[W]{ par(test) . par(train) }
    . NtoOne(gatherall) . seq(FedAvg)
    . 1toN(bcast)
, r)
"""

P2P = """
nodeset P = 3;
cond r = 5;

dist[P]{ seq(init) }
. feedback(
    dist[P]{ par(test) . par(train) . 1toN(bcast) . reduce(FedAvg) }
, r)
"""

TREE = """
nodeset L = 4;
nodeset C = 2;
nodeset R = 1;
cond forever = infinite;

seq(init) . feedback(
    dist[L]{ par(infer) }
    . reduce(route)
    . dist[C]{ par(combine) }
    . reduce(route)
    . dist[R]{ seq(alert) }
, forever)
"""


class TestParse:
    def test_master_worker_structure(self):
        p = dsl.parse(MASTER_WORKER)
        assert p.nodesets["W"].size == 4
        assert p.conds["r"].rounds == 10
        assert isinstance(p.body, dsl.Pipe)
        init, loop = p.body.stages
        assert init == dsl.Seq("init")
        assert isinstance(loop, dsl.Feedback)
        assert loop.cond == "r"
        stages = loop.body.stages
        assert isinstance(stages[0], dsl.Distribute)
        assert stages[0].nodeset == "W"
        assert stages[0].body == dsl.Pipe((dsl.Par("test"), dsl.Par("train")))
        assert stages[1] == dsl.Reduce("FedAvg")
        assert stages[2] == dsl.OneToN("broadcast")

    def test_infinite_condition(self):
        p = dsl.parse(TREE)
        assert p.conds["forever"].rounds is None

    def test_explicit_member_list(self):
        p = dsl.parse("nodeset W = [alpha, beta];\ndist[W]{ seq(f) }\n")
        assert p.nodesets["W"].size == 2
        assert p.nodesets["W"].members == ("alpha", "beta")

    def test_unicast_selectors(self):
        for text, want in [("1toN(ucast:rr)", dsl.OneToN("unicast", "rr")),
                           ("1toN(ucast:auto)", dsl.OneToN("unicast", "auto")),
                           ("1toN(ucast:3)", dsl.OneToN("unicast", 3))]:
            assert dsl.parse(f"seq(a) . {text}").body.stages[1] == want

    def test_comments_and_whitespace(self):
        p = dsl.parse("# leading comment\nnodeset W = 2;  # trailing\n"
                      "dist[W]{ seq(f) }\n")
        assert p.nodesets["W"].size == 2

    def test_grouping_parentheses(self):
        p = dsl.parse("(seq(a) . seq(b)) . seq(c)")
        assert isinstance(p.body.stages[0], dsl.Pipe)
        assert len(p.body.stages) == 2

    def test_spans_recorded(self):
        p = dsl.parse(MASTER_WORKER)
        assert p.body.stages[0].span.line == 5

    @pytest.mark.parametrize("text,fragment", [
        ("seq()", "function name"),
        ("nodeset W = 2\nseq(f)", "';'"),
        ("dist[Q]{ seq(f) }", "undeclared node set"),
        ("feedback(seq(f), nope)", "undeclared condition"),
        ("1toN(sideways)", "unknown distribution policy"),
        ("NtoOne(scatter)", "unknown gathering policy"),
        ("seq(f) .", "expected a stage"),
        ("cond r = -1;\nseq(f)", ""),
    ])
    def test_parse_errors(self, text, fragment):
        with pytest.raises(dsl.ParseError) as err:
            dsl.parse(text)
        assert fragment in str(err.value)

    def test_error_location(self):
        with pytest.raises(dsl.ParseError) as err:
            dsl.parse("nodeset W = 2;\nseq(f) . dist[Q]{ seq(g) }\n")
        assert err.value.line == 2
        assert err.value.col == 15
        assert err.value.message.startswith("undeclared node set")


class TestRender:
    @pytest.mark.parametrize("text", [MASTER_WORKER, MASTER_WORKER_EXPANDED,
                                      P2P, TREE])
    def test_canonical_round_trip(self, text):
        p = dsl.parse(text)
        again = dsl.parse(dsl.render(p))
        assert again == p

    def test_render_is_fixpoint(self):
        p = dsl.parse(MASTER_WORKER)
        once = dsl.render(p)
        assert dsl.render(dsl.parse(once)) == once

    def test_random_programs_round_trip(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            p = proggen.random_program(rng)
            text = dsl.render(p)
            assert dsl.parse(text) == p, text


class TestValidate:
    @pytest.mark.parametrize("text", [MASTER_WORKER, P2P, TREE])
    def test_canonical_programs_clean(self, text):
        assert dsl.validate(dsl.parse(text)) == []

    def test_zero_round_condition(self):
        p = dsl.parse(MASTER_WORKER)
        p.conds["r"] = dsl.CondDecl("r", 0)
        diags = dsl.validate(p)
        assert any(d.severity == "error" and "0 rounds" in d.message
                   for d in diags)

    def test_nodeset_size_mismatch_across_pipe(self):
        p = dsl.parse("nodeset W = 3;\nnodeset V = 2;\n"
                      "dist[W]{ par(f) } . dist[V]{ par(g) }\n")
        diags = dsl.validate(p)
        assert any("arity mismatch" in d.message for d in diags)

    def test_matching_sizes_clean(self):
        p = dsl.parse("nodeset W = 3;\nnodeset V = 3;\n"
                      "dist[W]{ par(f) } . dist[V]{ par(g) }\n")
        assert dsl.validate(p) == []

    def test_unregistered_function(self):
        p = dsl.parse(MASTER_WORKER)
        diags = dsl.validate(p, known_functions={"init", "test", "train"})
        assert any("'FedAvg' is not registered" in d.message for d in diags)
        assert dsl.validate(
            p, known_functions={"init", "test", "train", "FedAvg"}) == []


class TestRewrite:
    def test_r1_contracts_gatherall(self):
        expanded = dsl.parse(MASTER_WORKER_EXPANDED)
        contracted = dsl.rewrite(expanded, "R1")
        assert contracted == dsl.parse(MASTER_WORKER)

    def test_r1_inverse_expands(self):
        contracted = dsl.parse(MASTER_WORKER)
        expanded = dsl.rewrite(contracted, "R1_INV")
        assert expanded == dsl.parse(MASTER_WORKER_EXPANDED)

    def test_r1_then_inverse_is_identity(self):
        p = dsl.parse(MASTER_WORKER_EXPANDED)
        assert dsl.rewrite(dsl.rewrite(p, "R1"), "R1_INV") == p

    def test_r2_round_trip(self):
        p = dsl.parse("nodeset W = 4;\n"
                      "dist[W]{ seq(a) . 1toN(bcast) . reduce(g) }\n")
        split = dsl.rewrite(p, "R2")
        assert split == dsl.parse(
            "nodeset W = 4;\n"
            "dist[W]{ seq(a) . 1toN(bcast) } . dist[W]{ reduce(g) }\n")
        assert dsl.rewrite(split, "R2_INV") == p

    def test_rewrite_does_not_mutate_input(self):
        p = dsl.parse(MASTER_WORKER_EXPANDED)
        before = dsl.render(p)
        dsl.rewrite(p, "R1")
        assert dsl.render(p) == before

    def test_first_match_only(self):
        p = dsl.parse("NtoOne(gatherall) . seq(a) . NtoOne(gatherall) . seq(b)")
        once = dsl.rewrite(p, "R1")
        kinds = [type(s).__name__ for s in once.body.stages]
        assert kinds == ["Reduce", "NToOne", "Seq"]

    def test_pattern_not_found(self):
        p = dsl.parse(MASTER_WORKER)
        with pytest.raises(dsl.PatternNotFoundError):
            dsl.rewrite(p, "R1")

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            dsl.rewrite(dsl.parse(MASTER_WORKER), "R9")
