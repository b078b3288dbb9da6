"""Canonical linearization of states and contexts, and its inverse.

The surface form is whitespace-separated tokens with quoted values, e.g.

    Exec: restaurant ( food = " Indian " ) ;
    RecommendOne: propose restaurant . make_reservation ( name = " Curry Prince " ) ;

Slots are alphabetical within a statement and statements are ordered
(queries before actions, domains alphabetical), so linearize is injective
on canonical states and delinearize(linearize(s)) round-trips exactly.
"""

from __future__ import annotations

from .schema import DomainSchema, schema_map
from .states import (
    ACCEPTED, AGENT_ACTS, DONTCARE, EXECUTED, PROPOSED, USER_ACTS,
    ActionStatement, AgentState, Context, ExecResult, FilterAtom,
    QueryStatement, Row, Statement, UserState, Value, is_dontcare, parse_value,
)


class DelinearizeError(ValueError):
    def __init__(self, msg: str, pos: int | None = None):
        super().__init__(msg if pos is None else f"token {pos}: {msg}")
        self.pos = pos


# ---------------------------------------------------------------------------
# rendering

def _value_tokens(v: Value) -> list[str]:
    if is_dontcare(v):
        return ["dontcare"]
    return ['"'] + v.tokens() + ['"']


def _atom_tokens(a: FilterAtom) -> list[str]:
    out = [a.slot, a.op]
    out += _value_tokens(a.values[0])
    for v in a.values[1:]:
        out.append("or")
        out += _value_tokens(v)
    return out


def _body_tokens(body, propose: bool = False) -> list[str]:
    out: list[str] = ["propose"] if propose else []
    if isinstance(body, QueryStatement):
        proj = sorted(body.requested)
        if proj:
            for i, col in enumerate(proj):
                if i:
                    out.append(",")
                out.append(col)
            out.append("of")
        out += [body.domain, "("]
        for i, a in enumerate(body.filter):
            if i:
                out.append(",")
            out += _atom_tokens(a)
        out.append(")")
    else:
        out += [body.domain, ".", body.action, "("]
        for i, (name, v) in enumerate(body.params):
            if i:
                out.append(",")
            out += [name, "="] + _value_tokens(v)
        out.append(")")
    return out


def _result_tokens(res: ExecResult) -> list[str]:
    out = ["#results", "=", str(res.count)]
    if res.error is not None:
        out += ["error", "=", res.error]
        if res.error_param is not None:
            out += ["(", res.error_param, ")"]
    if res.first is not None:
        out += ["first", "{"]
        for i, (col, v) in enumerate(res.first.cells):
            if i:
                out.append(",")
            out += [col, "="] + _value_tokens(v)
        out.append("}")
    return out


def _slotref_tokens(refs) -> list[str]:
    out: list[str] = []
    for i, (dom, slot) in enumerate(sorted(refs)):
        if i:
            out.append(",")
        out += [dom, ".", slot]
    return out


def linearize_user(us: UserState) -> str:
    toks: list[str] = []
    for s in us.statements:
        toks += _body_tokens(s.body) + [";"]
    return _join(us.act, toks)


def linearize_agent(astate: AgentState) -> str:
    toks: list[str] = []
    if astate.requested:
        toks += ["request"] + _slotref_tokens(astate.requested) + [";"]
    if astate.suggest:
        toks += ["suggest"] + _slotref_tokens(astate.suggest) + [";"]
    if astate.proposed is not None:
        toks += _body_tokens(astate.proposed.body, propose=True) + [";"]
    return _join(astate.act, toks)


def linearize_context(ctx: Context) -> str:
    toks: list[str] = []
    if ctx.active is not None:
        toks += ["active", ctx.active, ";"]
    for dom, stmt in ctx.queries:
        if (dom, "query") in ctx.fresh:
            toks.append("new")
        toks += _body_tokens(stmt.body) + _result_tokens(stmt.result) + [";"]
    for dom, stmt in ctx.actions:
        if (dom, "action") in ctx.fresh:
            toks.append("new")
        toks += _body_tokens(stmt.body) + _result_tokens(stmt.result) + [";"]
    for stmt in ctx.carryover:
        toks += _body_tokens(stmt.body) + [";"]
    if ctx.requested:
        toks += ["request"] + _slotref_tokens(ctx.requested) + [";"]
    if ctx.suggest:
        toks += ["suggest"] + _slotref_tokens(ctx.suggest) + [";"]
    if ctx.proposed is not None:
        toks += _body_tokens(ctx.proposed.body, propose=True) + [";"]
    return _join(ctx.last_act, toks)


def _join(act: str, toks: list[str]) -> str:
    if not toks:
        return f"{act}:"
    return f"{act}: " + " ".join(toks)


def linearize(state) -> str:
    if isinstance(state, UserState):
        return linearize_user(state)
    if isinstance(state, AgentState):
        return linearize_agent(state)
    if isinstance(state, Context):
        return linearize_context(state)
    raise TypeError(f"cannot linearize {type(state).__name__}")


# ---------------------------------------------------------------------------
# parsing

class _Tokens:
    def __init__(self, text: str):
        self.toks = text.split()
        self.pos = 0

    def peek(self, ahead: int = 0) -> str | None:
        i = self.pos + ahead
        return self.toks[i] if i < len(self.toks) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise DelinearizeError("unexpected end of input", self.pos)
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise DelinearizeError(f"expected {tok!r}, got {got!r}", self.pos - 1)

    def done(self) -> bool:
        return self.pos >= len(self.toks)


class _Parser:
    def __init__(self, text: str, schemas: list[DomainSchema]):
        self.t = _Tokens(text)
        self.schemas = schema_map(schemas)

    def act(self) -> str:
        tok = self.t.next()
        if not tok.endswith(":"):
            raise DelinearizeError(f"expected an act followed by ':', got {tok!r}", self.t.pos - 1)
        return tok[:-1]

    def domain_of(self, name: str, pos: int) -> DomainSchema:
        dom = self.schemas.get(name)
        if dom is None:
            raise DelinearizeError(f"unknown domain {name!r}", pos)
        return dom

    def value(self, dom: DomainSchema, slot: str) -> Value:
        pos = self.t.pos
        if self.t.peek() == "dontcare":
            self.t.next()
            return DONTCARE
        kind = dom.slot_kind(slot)
        if kind is None:
            raise DelinearizeError(f"unknown slot {slot!r} in {dom.name!r}", pos)
        self.t.expect('"')
        words: list[str] = []
        while self.t.peek() != '"':
            words.append(self.t.next())
        self.t.expect('"')
        try:
            return parse_value(kind, " ".join(words))
        except ValueError as e:
            raise DelinearizeError(f"bad {kind} value {' '.join(words)!r}: {e}", pos)

    def atom(self, dom: DomainSchema) -> FilterAtom:
        pos = self.t.pos
        slot = self.t.next()
        if dom.table.column(slot) is None:
            raise DelinearizeError(f"unknown slot {slot!r} in {dom.name!r}", pos)
        op = self.t.next()
        values = [self.value(dom, slot)]
        while self.t.peek() == "or":
            self.t.next()
            values.append(self.value(dom, slot))
        try:
            return FilterAtom(slot, op, tuple(values))
        except ValueError as e:
            raise DelinearizeError(str(e), pos)

    def statement_body(self):
        # [col ("," col)* "of"] domain "(" ... ")"  |  domain "." action "(" ... ")"
        start = self.t.pos
        names = [self.t.next()]
        while self.t.peek() == ",":
            self.t.next()
            names.append(self.t.next())
        if self.t.peek() == "of":
            self.t.next()
            domname = self.t.next()
            dom = self.domain_of(domname, self.t.pos - 1)
            for c in names:
                if dom.table.column(c) is None:
                    raise DelinearizeError(f"unknown slot {c!r} in {domname!r}", start)
            return self.query_tail(dom, frozenset(names))
        if len(names) != 1:
            raise DelinearizeError("projection list without 'of'", start)
        if self.t.peek() == ".":
            dom = self.domain_of(names[0], start)
            self.t.next()
            action_name = self.t.next()
            action = dom.action(action_name)
            if action is None:
                raise DelinearizeError(f"unknown action {action_name!r} in {dom.name!r}",
                                       self.t.pos - 1)
            self.t.expect("(")
            params: list[tuple[str, Value]] = []
            while self.t.peek() != ")":
                if params:
                    self.t.expect(",")
                pos = self.t.pos
                pname = self.t.next()
                if action.param(pname) is None:
                    raise DelinearizeError(f"unknown param {pname!r} of {action_name!r}", pos)
                self.t.expect("=")
                params.append((pname, self.value(dom, pname)))
            self.t.expect(")")
            return ActionStatement(dom.name, action_name, tuple(params))
        dom = self.domain_of(names[0], start)
        return self.query_tail(dom, frozenset())

    def query_tail(self, dom: DomainSchema, requested: frozenset[str]) -> QueryStatement:
        self.t.expect("(")
        atoms: list[FilterAtom] = []
        while self.t.peek() != ")":
            if atoms:
                self.t.expect(",")
            atoms.append(self.atom(dom))
        self.t.expect(")")
        try:
            return QueryStatement(dom.name, tuple(atoms), requested)
        except ValueError as e:
            raise DelinearizeError(str(e), self.t.pos)

    def slotrefs(self) -> frozenset[tuple[str, str]]:
        refs: list[tuple[str, str]] = []
        while True:
            pos = self.t.pos
            domname = self.t.next()
            dom = self.domain_of(domname, pos)
            self.t.expect(".")
            slot = self.t.next()
            if dom.slot_kind(slot) is None:
                raise DelinearizeError(f"unknown slot {slot!r} in {domname!r}", pos)
            refs.append((domname, slot))
            if self.t.peek() != ",":
                break
            self.t.next()
        return frozenset(refs)

    def exec_result(self, dom: DomainSchema) -> ExecResult:
        self.t.expect("#results")
        self.t.expect("=")
        pos = self.t.pos
        try:
            count = int(self.t.next())
        except ValueError:
            raise DelinearizeError("expected a result count", pos)
        error = error_param = None
        if self.t.peek() == "error":
            self.t.next()
            self.t.expect("=")
            error = self.t.next()
            if self.t.peek() == "(":
                self.t.next()
                error_param = self.t.next()
                self.t.expect(")")
        first = None
        if self.t.peek() == "first":
            self.t.next()
            self.t.expect("{")
            cells: list[tuple[str, Value]] = []
            while self.t.peek() != "}":
                if cells:
                    self.t.expect(",")
                col = self.t.next()
                self.t.expect("=")
                cells.append((col, self.value(dom, col)))
            self.t.expect("}")
            first = Row(tuple(cells))
        return ExecResult(count, first, error, error_param)


def delinearize_user(text: str, schemas: list[DomainSchema]) -> UserState:
    p = _Parser(text, schemas)
    act = p.act()
    if act not in USER_ACTS:
        raise DelinearizeError(f"{act!r} is not a user act", 0)
    stmts: list[Statement] = []
    while not p.t.done():
        body = p.statement_body()
        p.t.expect(";")
        stmts.append(Statement(body, ACCEPTED))
    return UserState(act, tuple(stmts))


def delinearize_agent(text: str, schemas: list[DomainSchema]) -> AgentState:
    p = _Parser(text, schemas)
    act = p.act()
    if act not in AGENT_ACTS:
        raise DelinearizeError(f"{act!r} is not an agent act", 0)
    requested = suggest = frozenset()
    proposed = None
    while not p.t.done():
        tok = p.t.next()
        if tok == "request":
            requested = p.slotrefs()
        elif tok == "suggest":
            suggest = p.slotrefs()
        elif tok == "propose":
            proposed = Statement(p.statement_body(), PROPOSED)
        else:
            raise DelinearizeError(f"unexpected {tok!r} in agent state", p.t.pos - 1)
        p.t.expect(";")
    return AgentState(act, requested, suggest, proposed)


def delinearize_context(text: str, schemas: list[DomainSchema]) -> Context:
    if not text.strip():
        return Context()
    p = _Parser(text, schemas)
    act = p.act()
    active = None
    if p.t.peek() == "active":
        p.t.next()
        pos = p.t.pos
        active = p.t.next()
        p.domain_of(active, pos)
        p.t.expect(";")
    queries: dict[str, Statement] = {}
    actions: dict[str, Statement] = {}
    carryover: list[Statement] = []
    fresh: set[tuple[str, str]] = set()
    requested = suggest = frozenset()
    proposed = None
    while not p.t.done():
        tok = p.t.peek()
        if tok == "request":
            p.t.next()
            requested = p.slotrefs()
            p.t.expect(";")
            continue
        if tok == "suggest":
            p.t.next()
            suggest = p.slotrefs()
            p.t.expect(";")
            continue
        if tok == "propose":
            p.t.next()
            proposed = Statement(p.statement_body(), PROPOSED)
            p.t.expect(";")
            continue
        is_new = tok == "new"
        if is_new:
            p.t.next()
        body = p.statement_body()
        dom = p.schemas[body.domain]
        if p.t.peek() == "#results":
            result = p.exec_result(dom)
            stmt = Statement(body, EXECUTED, result)
            kind = "query" if isinstance(body, QueryStatement) else "action"
            target = queries if kind == "query" else actions
            if body.domain in target:
                raise DelinearizeError(f"two executed {kind} statements for {body.domain!r}",
                                       p.t.pos)
            target[body.domain] = stmt
            if is_new:
                fresh.add((body.domain, kind))
        else:
            if is_new:
                raise DelinearizeError("'new' marks executed statements only", p.t.pos)
            carryover.append(Statement(body, ACCEPTED))
        p.t.expect(";")
    return Context(
        last_act=act, active=active,
        queries=tuple(sorted(queries.items())),
        actions=tuple(sorted(actions.items())),
        carryover=tuple(carryover), fresh=frozenset(fresh),
        requested=requested, suggest=suggest, proposed=proposed,
    )


def delinearize(text: str, schemas: list[DomainSchema]):
    """Parse a linearization whose type is unknown.  Empty input is the null
    context; acts that exist for both sides resolve to user states first."""
    if not text.strip():
        return Context()
    act = text.split(None, 1)[0].rstrip(":")
    errors = []
    attempts = []
    if act in USER_ACTS:
        attempts.append(delinearize_user)
    if act in AGENT_ACTS:
        attempts.append(delinearize_agent)
    attempts.append(delinearize_context)
    for fn in attempts:
        try:
            return fn(text, schemas)
        except (DelinearizeError, ValueError) as e:
            errors.append(str(e))
    raise DelinearizeError("; ".join(errors))
