"""Building-block coordination language: AST, parser, renderer, validator,
and the two structural rewrite rules with their inverses.

Programs describe how sequential code fragments are composed into a
distributed computation. Concrete syntax:

    program  :=  header* expr
    header   :=  "nodeset" IDENT "=" (INT | "[" IDENT ("," IDENT)* "]") ";"
              |  "cond" IDENT "=" (INT | "infinite") ";"
    expr     :=  stage ("." stage)*          # two or more stages form a Pipe
    stage    :=  "seq" "(" IDENT ")"          # wrap sequential code
              |  "par" "(" IDENT ")"          # wrap parallelizable code
              |  "dist" "[" IDENT "]" "{" expr "}"   # replicate over a node set
              |  "reduce" "(" IDENT ")"       # N-to-1 by a named function
              |  "spread" "(" IDENT ")"       # 1-to-N by a named function
              |  "1toN" "(" dpol ")"          # distribution router
              |  "NtoOne" "(" gpol ")"        # gathering merger
              |  "feedback" "(" expr "," IDENT ")"   # loop guarded by a condition
              |  "(" expr ")"
    dpol     :=  "bcast" | "scatter" | "ucast" ":" ("rr" | "auto" | INT)
    gpol     :=  "gather" | "gatherall" | "reduce" ":" IDENT

`#` starts a line comment. Identifiers are opaque names resolved against a
binding table when the program is compiled to a graph.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Span:
    line: int
    col: int


def _span_field():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Seq:
    fn: str
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Par:
    fn: str
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Distribute:
    body: "Expr"
    nodeset: str
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Pipe:
    stages: tuple
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Reduce:
    fn: str
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Spread:
    fn: str
    span: Span | None = _span_field()


@dataclass(frozen=True)
class OneToN:
    policy: str                      # "broadcast" | "scatter" | "unicast"
    selector: object = None          # "rr" | "auto" | int, for unicast only
    span: Span | None = _span_field()


@dataclass(frozen=True)
class NToOne:
    policy: str                      # "gather" | "gatherall" | "reduce"
    fn: str | None = None            # for the reduce policy
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Feedback:
    body: "Expr"
    cond: str
    span: Span | None = _span_field()


Expr = (Seq, Par, Distribute, Pipe, Reduce, Spread, OneToN, NToOne, Feedback)


@dataclass(frozen=True)
class NodeSetDecl:
    name: str
    size: int
    members: tuple | None = None     # explicit member labels, if listed


@dataclass(frozen=True)
class CondDecl:
    name: str
    rounds: int | None               # None means run until the stream ends


@dataclass
class Program:
    nodesets: dict
    conds: dict
    body: object

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return (self.nodesets == other.nodesets and self.conds == other.conds
                and self.body == other.body)


@dataclass(frozen=True)
class Diagnostic:
    severity: str                    # "error" | "warning"
    message: str
    span: Span | None = None


class ParseError(Exception):
    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class PatternNotFoundError(Exception):
    pass


# ---------------------------------------------------------------------------
# Tokenizer

_KEYWORDS = {"seq", "par", "dist", "reduce", "spread", "feedback",
             "nodeset", "cond", "infinite"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<oneton>1toN\b)
  | (?P<ntoone>NtoOne\b)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[().,;:={}\[\]])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text):
    toks = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}",
                             line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        col = pos - line_start + 1
        if kind == "ws":
            nl = chunk.count("\n")
            if nl:
                line += nl
                line_start = pos + chunk.rfind("\n") + 1
        elif kind == "comment":
            pass
        elif kind == "ident" and chunk in _KEYWORDS:
            toks.append(_Tok("kw", chunk, line, col))
        else:
            toks.append(_Tok(kind, chunk, line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0
        self.nodesets = {}
        self.conds = {}

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, tok.line, tok.col)

    def expect(self, kind, text=None):
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text if text is not None else kind
            got = t.text or "end of input"
            self.fail(f"expected {want!r}, found {got!r}")
        return self.next()

    def expect_punct(self, ch):
        return self.expect("punct", ch)

    def ident(self, what="identifier"):
        t = self.peek()
        if t.kind != "ident":
            self.fail(f"expected {what}, found {t.text or 'end of input'!r}")
        return self.next()

    # headers -----------------------------------------------------------

    def parse_program(self):
        while self.peek().kind == "kw" and self.peek().text in ("nodeset", "cond"):
            self.parse_header()
        body = self.parse_expr()
        t = self.peek()
        if t.kind != "eof":
            self.fail(f"trailing input {t.text!r}")
        return Program(self.nodesets, self.conds, body)

    def parse_header(self):
        kw = self.next()
        name_tok = self.ident(f"{kw.text} name")
        name = name_tok.text
        if name in self.nodesets or name in self.conds:
            self.fail(f"duplicate declaration of {name!r}", name_tok)
        self.expect_punct("=")
        if kw.text == "nodeset":
            t = self.peek()
            if t.kind == "int":
                self.next()
                self.nodesets[name] = NodeSetDecl(name, int(t.text))
            elif t.kind == "punct" and t.text == "[":
                self.next()
                members = [self.ident("member name").text]
                while self.peek().text == ",":
                    self.next()
                    members.append(self.ident("member name").text)
                self.expect_punct("]")
                self.nodesets[name] = NodeSetDecl(name, len(members), tuple(members))
            else:
                self.fail("expected a size or a member list")
        else:
            t = self.peek()
            if t.kind == "int":
                self.next()
                rounds = int(t.text)
                if rounds < 1:
                    self.fail("round count must be >= 1", t)
                self.conds[name] = CondDecl(name, rounds)
            elif t.kind == "kw" and t.text == "infinite":
                self.next()
                self.conds[name] = CondDecl(name, None)
            else:
                self.fail("expected a round count or 'infinite'")
        self.expect_punct(";")

    # expressions --------------------------------------------------------

    def parse_expr(self):
        first_tok = self.peek()
        stages = [self.parse_stage()]
        while self.peek().kind == "punct" and self.peek().text == ".":
            self.next()
            stages.append(self.parse_stage())
        if len(stages) == 1:
            return stages[0]
        return Pipe(tuple(stages), span=Span(first_tok.line, first_tok.col))

    def parse_stage(self):
        t = self.peek()
        sp = Span(t.line, t.col)
        if t.kind == "kw" and t.text in ("seq", "par", "reduce", "spread"):
            self.next()
            self.expect_punct("(")
            fn = self.ident("function name").text
            self.expect_punct(")")
            cls = {"seq": Seq, "par": Par, "reduce": Reduce, "spread": Spread}[t.text]
            return cls(fn, span=sp)
        if t.kind == "kw" and t.text == "dist":
            self.next()
            self.expect_punct("[")
            ns_tok = self.ident("node set name")
            if ns_tok.text not in self.nodesets:
                self.fail(f"undeclared node set {ns_tok.text!r}", ns_tok)
            self.expect_punct("]")
            self.expect_punct("{")
            body = self.parse_expr()
            self.expect_punct("}")
            return Distribute(body, ns_tok.text, span=sp)
        if t.kind == "kw" and t.text == "feedback":
            self.next()
            self.expect_punct("(")
            body = self.parse_expr()
            self.expect_punct(",")
            cond_tok = self.ident("condition name")
            if cond_tok.text not in self.conds:
                self.fail(f"undeclared condition {cond_tok.text!r}", cond_tok)
            self.expect_punct(")")
            return Feedback(body, cond_tok.text, span=sp)
        if t.kind == "oneton":
            self.next()
            self.expect_punct("(")
            node = self.parse_dpol(sp)
            self.expect_punct(")")
            return node
        if t.kind == "ntoone":
            self.next()
            self.expect_punct("(")
            node = self.parse_gpol(sp)
            self.expect_punct(")")
            return node
        if t.kind == "punct" and t.text == "(":
            self.next()
            inner = self.parse_expr()
            self.expect_punct(")")
            return inner
        self.fail(f"expected a stage, found {t.text or 'end of input'!r}")

    def parse_dpol(self, sp):
        t = self.ident("distribution policy")
        if t.text == "bcast":
            return OneToN("broadcast", span=sp)
        if t.text == "scatter":
            return OneToN("scatter", span=sp)
        if t.text == "ucast":
            self.expect_punct(":")
            s = self.peek()
            if s.kind == "int":
                self.next()
                return OneToN("unicast", int(s.text), span=sp)
            if s.kind == "ident" and s.text in ("rr", "auto"):
                self.next()
                return OneToN("unicast", s.text, span=sp)
            self.fail("expected 'rr', 'auto', or a member index")
        self.fail(f"unknown distribution policy {t.text!r}", t)

    def parse_gpol(self, sp):
        t = self.peek()
        if t.kind == "ident" and t.text in ("gather", "gatherall"):
            self.next()
            return NToOne(t.text, span=sp)
        if t.kind == "kw" and t.text == "reduce":
            self.next()
            self.expect_punct(":")
            fn = self.ident("function name").text
            return NToOne("reduce", fn, span=sp)
        self.fail(f"unknown gathering policy {t.text or 'end of input'!r}")


def parse(text):
    """Parse program text. Raises ParseError with line/column on bad input."""
    return _Parser(text).parse_program()


# ---------------------------------------------------------------------------
# Renderer

def _render_expr(e, parent_is_pipe=False):
    if isinstance(e, Seq):
        return f"seq({e.fn})"
    if isinstance(e, Par):
        return f"par({e.fn})"
    if isinstance(e, Reduce):
        return f"reduce({e.fn})"
    if isinstance(e, Spread):
        return f"spread({e.fn})"
    if isinstance(e, OneToN):
        if e.policy == "broadcast":
            return "1toN(bcast)"
        if e.policy == "scatter":
            return "1toN(scatter)"
        return f"1toN(ucast:{e.selector})"
    if isinstance(e, NToOne):
        if e.policy == "reduce":
            return f"NtoOne(reduce:{e.fn})"
        return f"NtoOne({e.policy})"
    if isinstance(e, Distribute):
        return f"dist[{e.nodeset}]{{{_render_expr(e.body)}}}"
    if isinstance(e, Feedback):
        return f"feedback({_render_expr(e.body)}, {e.cond})"
    if isinstance(e, Pipe):
        text = " . ".join(_render_expr(s, parent_is_pipe=True) for s in e.stages)
        return f"({text})" if parent_is_pipe else text
    raise TypeError(f"not an expression node: {e!r}")


def render(program):
    """Canonical text for a program; parse(render(p)) == p structurally."""
    lines = []
    for ns in program.nodesets.values():
        if ns.members is not None:
            lines.append(f"nodeset {ns.name} = [{', '.join(ns.members)}];")
        else:
            lines.append(f"nodeset {ns.name} = {ns.size};")
    for c in program.conds.values():
        value = "infinite" if c.rounds is None else str(c.rounds)
        lines.append(f"cond {c.name} = {value};")
    lines.append(_render_expr(program.body))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation

FLEX = -1  # arity determined by the surrounding composition


def _arity(e, program, diags, in_dist):
    """Return (fan_in, fan_out) with FLEX for context-determined sides."""
    if isinstance(e, (Seq, Par)):
        return 1, 1
    if isinstance(e, Reduce):
        # a reduce between two dist blocks binds as a routing map, so its
        # output side is decided by what follows
        return FLEX, FLEX
    if isinstance(e, NToOne):
        return FLEX, 1
    if isinstance(e, Spread):
        return 1, FLEX
    if isinstance(e, OneToN):
        return 1, FLEX
    if isinstance(e, Distribute):
        ns = program.nodesets.get(e.nodeset)
        if ns is None:
            diags.append(Diagnostic("error", f"undeclared node set {e.nodeset!r}", e.span))
            return FLEX, FLEX
        if ns.size < 1:
            diags.append(Diagnostic("error", f"node set {e.nodeset!r} has size {ns.size}", e.span))
        _check_expr(e.body, program, diags, in_dist=True)
        return ns.size, ns.size
    if isinstance(e, Feedback):
        if e.cond not in program.conds:
            diags.append(Diagnostic("error", f"undeclared condition {e.cond!r}", e.span))
        body_in, body_out = _check_expr(e.body, program, diags, in_dist=in_dist)
        # The loop routes body output back to body input; a single flexible
        # exit (a router) or matching arities are both wirable.
        if FLEX not in (body_in, body_out) and body_in != body_out and body_out != 1:
            diags.append(Diagnostic(
                "error",
                f"feedback cannot route {body_out} outputs back to {body_in} inputs",
                e.span))
        # Externally the loop emits once per exit node when the condition fires.
        return body_in, 1 if body_out == FLEX else body_out
    if isinstance(e, Pipe):
        return _check_pipe(e, program, diags, in_dist)
    raise TypeError(f"not an expression node: {e!r}")


def _check_pipe(pipe, program, diags, in_dist):
    if len(pipe.stages) < 2:
        diags.append(Diagnostic("error", "pipe needs at least two stages", pipe.span))
        if not pipe.stages:
            return FLEX, FLEX
    arities = [_check_expr(s, program, diags, in_dist) for s in pipe.stages]
    for k in range(len(pipe.stages) - 1):
        out_a = arities[k][1]
        in_b = arities[k + 1][0]
        nxt = pipe.stages[k + 1]
        if out_a == FLEX or in_b == FLEX:
            continue
        if out_a == in_b:
            continue
        if out_a == 1 and isinstance(nxt, Feedback):
            continue  # single seed duplicated to every loop entry
        diags.append(Diagnostic(
            "error",
            f"arity mismatch between pipe stages {k} and {k + 1}: "
            f"{out_a} outputs feed {in_b} inputs",
            getattr(nxt, "span", None)))
    return arities[0][0], arities[-1][1]


def _check_expr(e, program, diags, in_dist):
    return _arity(e, program, diags, in_dist)


def _walk(e):
    yield e
    if isinstance(e, Pipe):
        for s in e.stages:
            yield from _walk(s)
    elif isinstance(e, (Distribute, Feedback)):
        yield from _walk(e.body)


def validate(program, known_functions=None):
    """Structural and arity diagnostics for a program.

    When `known_functions` (a set of names) is given, reduce/spread
    functions missing from it are reported as errors.
    """
    diags = []
    _check_expr(program.body, program, diags, in_dist=False)
    for c in program.conds.values():
        if c.rounds is not None and c.rounds < 1:
            diags.append(Diagnostic("error", f"condition {c.name!r} has {c.rounds} rounds"))
    if known_functions is not None:
        for node in _walk(program.body):
            fn = None
            if isinstance(node, (Reduce, Spread)):
                fn = node.fn
            elif isinstance(node, NToOne) and node.policy == "reduce":
                fn = node.fn
            if fn is not None and fn not in known_functions:
                diags.append(Diagnostic(
                    "error", f"function {fn!r} is not registered", node.span))
    return diags


# ---------------------------------------------------------------------------
# Rewriting

RULES = ("R1", "R1_INV", "R2", "R2_INV")


def _unwrap(stages):
    return stages[0] if len(stages) == 1 else Pipe(tuple(stages))


def _try_r1(e):
    """NtoOne(gatherall) . seq(g)  ->  reduce(g)"""
    if isinstance(e, Pipe):
        for k in range(len(e.stages) - 1):
            a, b = e.stages[k], e.stages[k + 1]
            if isinstance(a, NToOne) and a.policy == "gatherall" and isinstance(b, Seq):
                stages = list(e.stages)
                stages[k:k + 2] = [Reduce(b.fn)]
                return _unwrap(stages)
    return None


def _try_r1_inv(e):
    """reduce(g)  ->  NtoOne(gatherall) . seq(g)"""
    if isinstance(e, Pipe):
        for k, s in enumerate(e.stages):
            if isinstance(s, Reduce):
                stages = list(e.stages)
                stages[k:k + 1] = [NToOne("gatherall"), Seq(s.fn)]
                return Pipe(tuple(stages))
    elif isinstance(e, Reduce):
        return Pipe((NToOne("gatherall"), Seq(e.fn)))
    return None


def _split_r2(d):
    if not (isinstance(d, Distribute) and isinstance(d.body, Pipe)):
        return None
    stages = d.body.stages
    if len(stages) < 2:
        return None
    head, tail = stages[-2], stages[-1]
    if not (isinstance(head, OneToN) and head.policy == "broadcast"
            and isinstance(tail, Reduce)):
        return None
    left = Distribute(_unwrap(list(stages[:-1])), d.nodeset)
    right = Distribute(tail, d.nodeset)
    return left, right


def _try_r2(e):
    """dist[P]{... . 1toN(bcast) . reduce(g)}
       ->  dist[P]{... . 1toN(bcast)} . dist[P]{reduce(g)}"""
    split = _split_r2(e)
    if split:
        return Pipe(split)
    if isinstance(e, Pipe):
        for k, s in enumerate(e.stages):
            split = _split_r2(s)
            if split:
                stages = list(e.stages)
                stages[k:k + 1] = list(split)
                return Pipe(tuple(stages))
    return None


def _try_r2_inv(e):
    """dist[P]{... . 1toN(bcast)} . dist[P]{reduce(g)}  ->  fused dist"""
    if not isinstance(e, Pipe):
        return None
    for k in range(len(e.stages) - 1):
        a, b = e.stages[k], e.stages[k + 1]
        if not (isinstance(a, Distribute) and isinstance(b, Distribute)
                and a.nodeset == b.nodeset and isinstance(b.body, Reduce)):
            continue
        tail = a.body.stages[-1] if isinstance(a.body, Pipe) else a.body
        if not (isinstance(tail, OneToN) and tail.policy == "broadcast"):
            continue
        inner = list(a.body.stages) if isinstance(a.body, Pipe) else [a.body]
        fused = Distribute(Pipe(tuple(inner + [b.body])), a.nodeset)
        stages = list(e.stages)
        stages[k:k + 2] = [fused]
        return _unwrap(stages)
    return None


_RULE_FNS = {"R1": _try_r1, "R1_INV": _try_r1_inv,
             "R2": _try_r2, "R2_INV": _try_r2_inv}


def _rewrite_first(e, rule_fn):
    replaced = rule_fn(e)
    if replaced is not None:
        return replaced, True
    if isinstance(e, Pipe):
        for k, s in enumerate(e.stages):
            new, done = _rewrite_first(s, rule_fn)
            if done:
                stages = list(e.stages)
                stages[k] = new
                return _unwrap(stages), True
    elif isinstance(e, Distribute):
        new, done = _rewrite_first(e.body, rule_fn)
        if done:
            return Distribute(new, e.nodeset), True
    elif isinstance(e, Feedback):
        new, done = _rewrite_first(e.body, rule_fn)
        if done:
            return Feedback(new, e.cond), True
    return e, False


def rewrite(program, rule_id):
    """Apply one structural identity once (first match, preorder).

    Raises PatternNotFoundError when the program contains no match, and
    ValueError for an unknown rule id. The rewritten program computes the
    same results as the original; the run-based tests check that.
    """
    if rule_id not in _RULE_FNS:
        raise ValueError(f"unknown rewrite rule {rule_id!r}; expected one of {RULES}")
    body, done = _rewrite_first(program.body, _RULE_FNS[rule_id])
    if not done:
        raise PatternNotFoundError(f"no site matches rule {rule_id}")
    return Program(dict(program.nodesets), dict(program.conds), body)
