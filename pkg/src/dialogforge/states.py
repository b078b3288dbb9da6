"""The formal dialogue state algebra.

Values, filter atoms, statements, user/agent states, and the compressed
context that replaces the utterance history.  All types are treated as
immutable values; the only effectful operation is advance_context, which
runs accepted statements through an executor handle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

DAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")

DAY_WORDS = {
    "mon": "monday", "tue": "tuesday", "wed": "wednesday", "thu": "thursday",
    "fri": "friday", "sat": "saturday", "sun": "sunday",
}


class StateError(ValueError):
    pass


# ---------------------------------------------------------------------------
# values

class Value:
    """Base of the closed value family.  Equality folds case and trims
    whitespace on free strings so that surface variation never creates two
    distinct states."""

    __slots__ = ()

    @property
    def key(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, Value) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __lt__(self, other: "Value"):
        return self.key < other.key

    def tokens(self) -> list[str]:
        """Surface tokens used inside quoted value position."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Str(Value):
    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", " ".join(self.text.split()))
        if not self.text:
            raise StateError("empty string value")
        if '"' in self.text:
            raise StateError("string values may not contain a quote character")

    @property
    def key(self):
        return ("str", self.text.casefold())

    def tokens(self):
        return self.text.split()

    def __repr__(self):
        return f"Str({self.text!r})"


@dataclass(frozen=True, eq=False)
class Int(Value):
    n: int

    @property
    def key(self):
        return ("int", self.n)

    def tokens(self):
        return [str(self.n)]

    def __repr__(self):
        return f"Int({self.n})"


@dataclass(frozen=True, eq=False)
class Time(Value):
    hour: int
    minute: int

    def __post_init__(self):
        if not (0 <= self.hour <= 23 and 0 <= self.minute <= 59):
            raise StateError(f"bad time {self.hour}:{self.minute}")

    @property
    def key(self):
        return ("time", self.hour, self.minute)

    def tokens(self):
        return [f"{self.hour:02d}:{self.minute:02d}"]

    def __repr__(self):
        return f"Time({self.hour:02d}:{self.minute:02d})"


@dataclass(frozen=True, eq=False)
class Day(Value):
    name: str

    def __post_init__(self):
        if self.name not in DAYS:
            raise StateError(f"bad day {self.name!r}")

    @property
    def key(self):
        return ("day", DAYS.index(self.name))

    def tokens(self):
        return [self.name]

    def __repr__(self):
        return f"Day({self.name})"


class _Dontcare(Value):
    @property
    def key(self):
        return ("dontcare",)

    def tokens(self):
        return ["dontcare"]

    def __repr__(self):
        return "Dontcare"


DONTCARE = _Dontcare()


def is_dontcare(v: Value) -> bool:
    return v.key == ("dontcare",)


def parse_value(kind: str, text: str) -> Value:
    """Build a Value of the given schema kind from surface text."""
    text = text.strip()
    if text.casefold() == "dontcare":
        return DONTCARE
    if kind == "integer":
        return Int(int(text))
    if kind == "time_of_day":
        h, _, m = text.partition(":")
        return Time(int(h), int(m))
    if kind == "day_of_week":
        low = text.casefold()
        for short, long in DAY_WORDS.items():
            if low in (short, long):
                return Day(short)
        raise StateError(f"bad day {text!r}")
    return Str(text)


# ---------------------------------------------------------------------------
# dialogue acts

USER_ACTS = ("Greet", "Exec", "AskRecommend", "Insist", "Cancel", "End", "Invalid")
# one further user act slot is reserved; the transaction machine only ever
# emits the seven above

AGENT_ACTS = (
    "Init", "Greet", "SlotFill", "SearchQuestion", "RecommendOne", "RecommendMany",
    "ProposeRefinedQuery", "Propose", "Confirm", "EmptySearch", "ActionSuccess",
    "ActionError", "LearnMoreWhat", "AnythingElse", "Invalid",
)

# acts allowed to populate each agent-state field
_ACTS_WITH_REQUESTED = {"SlotFill", "SearchQuestion"}
_ACTS_WITH_SUGGEST = {"EmptySearch", "ActionError"}
_ACTS_WITH_PROPOSED = {"Propose", "Confirm", "RecommendOne", "RecommendMany",
                       "ProposeRefinedQuery"}

OPS = ("=", "!=", "<", ">", "<=", ">=")


# ---------------------------------------------------------------------------
# statements

@dataclass(frozen=True)
class FilterAtom:
    slot: str
    op: str
    values: tuple[Value, ...]

    def __post_init__(self):
        if self.op not in OPS:
            raise StateError(f"bad operator {self.op!r}")
        if not self.values:
            raise StateError(f"atom on {self.slot!r} has no values")
        dedup = {v.key: v for v in self.values}
        object.__setattr__(self, "values",
                           tuple(dedup[k] for k in sorted(dedup)))
        if any(is_dontcare(v) for v in self.values):
            if self.op != "=" or len(self.values) != 1:
                raise StateError(f"dontcare on {self.slot!r} must be a sole '=' value")
        if self.op not in ("=", "!="):
            for v in self.values:
                if not isinstance(v, (Int, Time)):
                    raise StateError(f"operator {self.op!r} on {self.slot!r} needs a number or time")

    @property
    def is_dontcare(self) -> bool:
        return is_dontcare(self.values[0])


def atom(slot: str, op: str, *values: Value) -> FilterAtom:
    return FilterAtom(slot, op, tuple(values))


def eq(slot: str, value: Value) -> FilterAtom:
    return FilterAtom(slot, "=", (value,))


@dataclass(frozen=True)
class QueryStatement:
    domain: str
    filter: tuple[FilterAtom, ...] = ()
    requested: frozenset[str] = frozenset()

    def __post_init__(self):
        atoms = tuple(sorted(self.filter, key=lambda a: (a.slot, OPS.index(a.op))))
        seen = set()
        for a in atoms:
            if (a.slot, a.op) in seen:
                raise StateError(f"duplicate atom for ({a.slot}, {a.op})")
            seen.add((a.slot, a.op))
        object.__setattr__(self, "filter", atoms)
        object.__setattr__(self, "requested", frozenset(self.requested))

    def atom_for(self, slot: str) -> FilterAtom | None:
        for a in self.filter:
            if a.slot == slot:
                return a
        return None

    def constrained_slots(self) -> list[str]:
        """Slots with a real constraint (dontcare counts as addressed, not constrained)."""
        return sorted({a.slot for a in self.filter if not a.is_dontcare})

    def addressed_slots(self) -> list[str]:
        return sorted({a.slot for a in self.filter})


@dataclass(frozen=True)
class ActionStatement:
    domain: str
    action: str
    params: tuple[tuple[str, Value], ...] = ()

    def __post_init__(self):
        items = self.params.items() if isinstance(self.params, dict) else self.params
        pairs = tuple(sorted(items))
        names = [n for n, _ in pairs]
        if len(names) != len(set(names)):
            raise StateError(f"duplicate params in {self.domain}.{self.action}")
        object.__setattr__(self, "params", pairs)

    def param(self, name: str) -> Value | None:
        for n, v in self.params:
            if n == name:
                return v
        return None

    def param_map(self) -> dict[str, Value]:
        return dict(self.params)


StatementBody = QueryStatement | ActionStatement

PROPOSED = "proposed"
ACCEPTED = "accepted"
EXECUTED = "executed"


@dataclass(frozen=True)
class Row:
    """One database record; every column has a concrete (non-dontcare) value."""
    cells: tuple[tuple[str, Value], ...]

    def __post_init__(self):
        items = self.cells.items() if isinstance(self.cells, dict) else self.cells
        object.__setattr__(self, "cells", tuple(sorted(items)))

    def get(self, col: str) -> Value | None:
        for n, v in self.cells:
            if n == col:
                return v
        return None


@dataclass(frozen=True)
class ExecResult:
    count: int
    first: Row | None = None
    error: str | None = None
    error_param: str | None = None

    def __post_init__(self):
        if self.count < 0:
            raise StateError("negative result count")
        if self.count == 0 and self.first is not None:
            raise StateError("empty result cannot carry a first row")
        if self.error is not None and self.count != 0:
            raise StateError("an errored result must have count 0")


@dataclass(frozen=True)
class Statement:
    body: StatementBody
    status: str = ACCEPTED
    result: ExecResult | None = None

    def __post_init__(self):
        if self.status not in (PROPOSED, ACCEPTED, EXECUTED):
            raise StateError(f"bad status {self.status!r}")
        if (self.result is not None) != (self.status == EXECUTED):
            raise StateError("result present iff status is executed")

    @property
    def domain(self) -> str:
        return self.body.domain

    @property
    def is_query(self) -> bool:
        return isinstance(self.body, QueryStatement)


def _stmt_order(s: Statement):
    # queries before actions, then domains alphabetical
    if isinstance(s.body, QueryStatement):
        return (0, s.body.domain, "")
    return (1, s.body.domain, s.body.action)


# ---------------------------------------------------------------------------
# states

@dataclass(frozen=True)
class UserState:
    act: str
    statements: tuple[Statement, ...] = ()

    def __post_init__(self):
        if self.act not in USER_ACTS:
            raise StateError(f"bad user act {self.act!r}")
        stmts = tuple(sorted(self.statements, key=_stmt_order))
        object.__setattr__(self, "statements", stmts)
        if self.act not in ("Exec", "Insist") and stmts:
            raise StateError(f"user act {self.act} carries no statements")
        for s in stmts:
            if s.status != ACCEPTED:
                raise StateError("user statements must be accepted")


@dataclass(frozen=True)
class AgentState:
    act: str
    requested: frozenset[tuple[str, str]] = frozenset()
    suggest: frozenset[tuple[str, str]] = frozenset()
    proposed: Statement | None = None

    def __post_init__(self):
        if self.act not in AGENT_ACTS:
            raise StateError(f"bad agent act {self.act!r}")
        object.__setattr__(self, "requested", frozenset(self.requested))
        object.__setattr__(self, "suggest", frozenset(self.suggest))
        if self.requested and self.act not in _ACTS_WITH_REQUESTED:
            raise StateError(f"{self.act} cannot request slots")
        if self.suggest and self.act not in _ACTS_WITH_SUGGEST:
            raise StateError(f"{self.act} cannot suggest changes")
        if self.proposed is not None:
            if self.act not in _ACTS_WITH_PROPOSED:
                raise StateError(f"{self.act} cannot carry a proposal")
            if self.proposed.status != PROPOSED:
                raise StateError("proposal must have proposed status")


@dataclass(frozen=True)
class Context:
    """Compressed dialogue summary: per domain at most one executed query and
    one executed action, plus last-turn pending statements and agent fields.

    active/fresh record which domain and statements the immediately previous
    transition touched; the policy needs them because the per-domain maps are
    order free."""

    last_act: str = "Init"
    active: str | None = None
    queries: tuple[tuple[str, Statement], ...] = ()
    actions: tuple[tuple[str, Statement], ...] = ()
    carryover: tuple[Statement, ...] = ()
    fresh: frozenset[tuple[str, str]] = frozenset()
    requested: frozenset[tuple[str, str]] = frozenset()
    suggest: frozenset[tuple[str, str]] = frozenset()
    proposed: Statement | None = None

    def __post_init__(self):
        if self.last_act not in USER_ACTS and self.last_act not in AGENT_ACTS:
            raise StateError(f"bad act {self.last_act!r}")
        qs = self.queries.items() if isinstance(self.queries, dict) else self.queries
        acts = self.actions.items() if isinstance(self.actions, dict) else self.actions
        object.__setattr__(self, "queries", tuple(sorted(qs)))
        object.__setattr__(self, "actions", tuple(sorted(acts)))
        object.__setattr__(self, "fresh", frozenset(self.fresh))
        object.__setattr__(self, "requested", frozenset(self.requested))
        object.__setattr__(self, "suggest", frozenset(self.suggest))
        for dom, s in list(self.queries) + list(self.actions):
            if s.status != EXECUTED or s.body.domain != dom:
                raise StateError(f"context executed map for {dom!r} is inconsistent")
        for s in self.carryover:
            if s.status != ACCEPTED:
                raise StateError("carryover holds accepted statements only")

    def query_of(self, domain: str) -> Statement | None:
        for d, s in self.queries:
            if d == domain:
                return s
        return None

    def action_of(self, domain: str) -> Statement | None:
        for d, s in self.actions:
            if d == domain:
                return s
        return None

    def carryover_of(self, domain: str) -> Statement | None:
        for s in self.carryover:
            if s.domain == domain:
                return s
        return None

    def domains(self) -> list[str]:
        return sorted({d for d, _ in self.queries} | {d for d, _ in self.actions}
                      | {s.domain for s in self.carryover})

    @property
    def is_start(self) -> bool:
        return (self.last_act == "Init" and not self.queries and not self.actions
                and not self.carryover)


def null_context() -> Context:
    return Context()


@dataclass(frozen=True)
class DialogueTurn:
    r: Context
    a: AgentState
    u: UserState
    r_next: Context


# ---------------------------------------------------------------------------
# operations

def attach_agent_state(ctx: Context, astate: AgentState) -> Context:
    """User-facing context: prior context plus the agent's requested slots,
    suggested changes and proposal.  Executed statements never change."""
    active = ctx.active
    touched = sorted({d for d, _ in astate.requested} | {d for d, _ in astate.suggest})
    if astate.proposed is not None:
        active = astate.proposed.domain
    elif touched:
        active = touched[0]
    return replace(
        ctx,
        last_act=astate.act,
        active=active,
        requested=astate.requested,
        suggest=astate.suggest,
        proposed=astate.proposed,
    )


def merge_query(base: QueryStatement | None, new: QueryStatement,
                 entity_key: str) -> QueryStatement:
    """New atoms override same-slot atoms; untouched atoms are inherited.
    A filter on the entity key pins a single record, so it replaces the
    query wholesale instead of merging."""
    if base is None or new.atom_for(entity_key) is not None:
        return new
    new_slots = {a.slot for a in new.filter}
    kept = [a for a in base.filter if a.slot not in new_slots]
    return QueryStatement(new.domain, tuple(kept) + new.filter, new.requested)


def merge_action(base: ActionStatement | None, new: ActionStatement,
                  entity_key: str) -> ActionStatement:
    if base is None or base.action != new.action:
        return new
    bkey, nkey = base.param(entity_key), new.param(entity_key)
    if nkey is not None and bkey is not None and nkey != bkey:
        return new
    merged = base.param_map()
    merged.update(new.param_map())
    return ActionStatement(new.domain, new.action, tuple(merged.items()))


def advance_context(ctx: Context, us: UserState, engine,
                    confirm_actions: bool = False) -> Context:
    """Fold a user state into the context: merge statements over their
    same-domain predecessors, execute everything complete, keep the rest as
    pending carryover, and retain only the latest executed statement of each
    kind per domain.

    engine supplies run(body) -> ExecResult, complete(body) -> bool and
    entity_key(domain) -> str; executor failures land in ExecResult.error.
    With confirm_actions, a complete action only runs after the agent's
    Confirm turn (ctx.last_act == "Confirm"); until then it stays pending.
    """
    if us.act == "Invalid":
        # nothing was understood: the agent's pending question survives
        return replace(ctx, last_act="Invalid")

    queries = dict(ctx.queries)
    actions = dict(ctx.actions)
    carryover: list[Statement] = []
    fresh: set[tuple[str, str]] = set()
    active = ctx.active

    for stmt in us.statements:
        dom = stmt.domain
        active = dom
        if isinstance(stmt.body, QueryStatement):
            prior = queries.get(dom)
            body = merge_query(prior.body if prior else None, stmt.body,
                                engine.entity_key(dom))
            result = engine.run(body)
            queries[dom] = Statement(body, EXECUTED, result)
            fresh.add((dom, "query"))
        else:
            base = ctx.carryover_of(dom)
            if base is None or not isinstance(base.body, ActionStatement):
                prior = actions.get(dom)
                base_body = prior.body if prior else None
            else:
                base_body = base.body
            body = merge_action(base_body, stmt.body, engine.entity_key(dom))
            if not engine.complete(body):
                carryover.append(Statement(body, ACCEPTED))
            elif confirm_actions and ctx.last_act != "Confirm":
                carryover.append(Statement(body, ACCEPTED))
            else:
                result = engine.run(body)
                actions[dom] = Statement(body, EXECUTED, result)
                fresh.add((dom, "action"))

    if us.act == "Cancel":
        carryover = []

    return Context(
        last_act=us.act,
        active=active,
        queries=tuple(sorted(queries.items())),
        actions=tuple(sorted(actions.items())),
        carryover=tuple(carryover),
        fresh=frozenset(fresh),
    )


def states_equal(a: UserState, b: UserState) -> bool:
    """Structural equality; constructors already canonicalize ordering and
    value normalization."""
    return a == b


def slots_of(us: UserState) -> set[tuple[str, str, Value]]:
    """Provided (domain, slot, value) triples, ignoring operators, requested
    slots and the act.  Disjunctions contribute their first value."""
    out: set[tuple[str, str, Value]] = set()
    for stmt in us.statements:
        if isinstance(stmt.body, QueryStatement):
            for a in stmt.body.filter:
                out.add((stmt.domain, a.slot, a.values[0]))
        else:
            for name, v in stmt.body.params:
                out.add((stmt.domain, name, v))
    return out


def has_disjunction(us: UserState) -> bool:
    return any(
        len(a.values) > 1
        for s in us.statements if isinstance(s.body, QueryStatement)
        for a in s.body.filter
    )
