"""In-memory database with selection/projection query execution and
simulated action execution.

Rows are kept sorted by entity key so "first result" and everything built
on it (recommendations, representative rows in contexts) is deterministic.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .schema import DomainSchema, schema_map
from .states import (
    ActionStatement, DAYS, ExecResult, FilterAtom, Int, QueryStatement, Row,
    Statement, StateError, Str, Time, Value, is_dontcare, parse_value,
)

MISSING_ENTITY = "missing_entity"
UNAVAILABLE_SLOT_VALUE = "unavailable_slot_value"
INVALID_PARAM = "invalid_param"

# menus for sampling action-parameter values that no table column backs
TIME_MENU = ("11:00", "12:00", "13:00", "17:00", "18:00", "18:30", "19:00", "20:00")
INT_MENU = tuple(range(1, 9))


class DatabaseError(ValueError):
    pass


@dataclass(frozen=True)
class ActionOutcome:
    success: bool
    error_code: str | None = None
    error_param: str | None = None

    def to_exec_result(self) -> ExecResult:
        if self.success:
            return ExecResult(count=1)
        return ExecResult(count=0, error=self.error_code, error_param=self.error_param)


class Database:
    def __init__(self, tables: dict[str, list[Row]]):
        self.tables = tables

    def rows(self, domain: str) -> list[Row]:
        return self.tables.get(domain, [])


def load_database(path: str | Path, schemas: list[DomainSchema]) -> Database:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DatabaseError(f"{path}: parse error at line {e.lineno} column {e.colno}: {e.msg}")
    return parse_database(data, schemas)


def parse_database(data, schemas: list[DomainSchema]) -> Database:
    if not isinstance(data, dict):
        raise DatabaseError("top level: expected an object mapping domain to rows")
    smap = schema_map(schemas)
    tables: dict[str, list[Row]] = {}
    for domain, rows_raw in data.items():
        dom = smap.get(domain)
        if dom is None:
            raise DatabaseError(f"unknown domain {domain!r}")
        if not isinstance(rows_raw, list):
            raise DatabaseError(f"{domain}: expected a list of rows")
        rows: list[Row] = []
        keys: set = set()
        for i, row_raw in enumerate(rows_raw):
            if not isinstance(row_raw, dict):
                raise DatabaseError(f"{domain}[{i}]: expected an object")
            cells: list[tuple[str, Value]] = []
            for col in dom.table.columns:
                if col.name not in row_raw:
                    raise DatabaseError(f"{domain}[{i}]: missing column {col.name!r}")
                try:
                    value = parse_value(col.kind, str(row_raw[col.name]))
                except (ValueError, StateError) as e:
                    raise DatabaseError(f"{domain}[{i}].{col.name}: {e}")
                if is_dontcare(value):
                    raise DatabaseError(
                        f"{domain}[{i}].{col.name}: rows need concrete values")
                cells.append((col.name, value))
            row = Row(tuple(cells))
            key = row.get(dom.table.entity_key).key
            if key in keys:
                raise DatabaseError(f"{domain}[{i}]: duplicate entity key")
            keys.add(key)
            rows.append(row)
        rows.sort(key=lambda r: r.get(dom.table.entity_key).key)
        tables[domain] = rows
    return Database(tables)


# ---------------------------------------------------------------------------
# query execution

def _cmp_match(op: str, row_val: Value, v: Value) -> bool:
    if not isinstance(row_val, (Int, Time)) or type(row_val) is not type(v):
        return False
    a, b = row_val.key, v.key
    if op == "<":
        return a < b
    if op == ">":
        return a > b
    if op == "<=":
        return a <= b
    return a >= b


def _atom_match(dom: DomainSchema, row: Row, a: FilterAtom) -> bool:
    if a.is_dontcare:
        return True
    row_val = row.get(a.slot)
    if row_val is None:
        return False
    col = dom.table.column(a.slot)
    substring = col is not None and col.substring_match
    if a.op == "=":
        for v in a.values:
            if row_val == v:
                return True
            if substring and isinstance(v, Str) and isinstance(row_val, Str) \
                    and v.text.casefold() in row_val.text.casefold():
                return True
        return False
    if a.op == "!=":
        return all(row_val != v for v in a.values)
    return any(_cmp_match(a.op, row_val, v) for v in a.values)


def query_rows(db: Database, q: QueryStatement, schemas: list[DomainSchema]) -> list[Row]:
    dom = schema_map(schemas).get(q.domain)
    if dom is None:
        raise DatabaseError(f"unknown domain {q.domain!r}")
    return [r for r in db.rows(q.domain) if all(_atom_match(dom, r, a) for a in q.filter)]


def execute_query(db: Database, q: QueryStatement, schemas: list[DomainSchema]) -> ExecResult:
    rows = query_rows(db, q, schemas)
    return ExecResult(count=len(rows), first=rows[0] if rows else None)


# ---------------------------------------------------------------------------
# action execution

def _param_type_ok(kind: str, v: Value) -> bool:
    from .states import Day
    expected = {"string_enum": Str, "free_string": Str, "integer": Int,
                "time_of_day": Time, "day_of_week": Day}[kind]
    return isinstance(v, expected)


def action_complete(a: ActionStatement, schemas: list[DomainSchema]) -> bool:
    dom = schema_map(schemas)[a.domain]
    spec = dom.action(a.action)
    if spec is None:
        return False
    for p in spec.required_params():
        v = a.param(p.name)
        if v is None or is_dontcare(v):
            return False
    return True


def execute_action(db: Database, a: ActionStatement, schemas: list[DomainSchema],
                   rng: random.Random | None = None, simulate: bool = False,
                   p_fail: float = 0.1) -> ActionOutcome:
    """Run (or simulate) an action.  Simulation adds a seeded chance of an
    unavailable-slot failure so error-recovery transitions get coverage."""
    if not action_complete(a, schemas):
        raise StateError(f"action {a.domain}.{a.action} is incomplete")
    dom = schema_map(schemas)[a.domain]
    spec = dom.action(a.action)
    for name, v in a.params:
        p = spec.param(name)
        if p is None:
            return ActionOutcome(False, INVALID_PARAM, name)
        if not is_dontcare(v) and not _param_type_ok(p.kind, v):
            return ActionOutcome(False, INVALID_PARAM, name)
    ent = spec.entity_param()
    if ent is not None:
        key_val = a.param(ent.name)
        if key_val is not None and not is_dontcare(key_val):
            rows = db.rows(a.domain)
            if not any(r.get(dom.table.entity_key) == key_val for r in rows):
                return ActionOutcome(False, MISSING_ENTITY, ent.name)
    if simulate and p_fail > 0:
        if rng is None:
            raise StateError("simulated execution needs a seeded generator")
        if rng.random() < p_fail:
            bookable = sorted(p.name for p in spec.params if p.links is None)
            param = rng.choice(bookable) if bookable else spec.params[0].name
            return ActionOutcome(False, UNAVAILABLE_SLOT_VALUE, param)
    return ActionOutcome(True)


# ---------------------------------------------------------------------------
# sampling

def sample_row(db: Database, domain: str, rng: random.Random) -> Row:
    rows = db.rows(domain)
    if not rows:
        raise DatabaseError(f"cannot sample from empty table {domain!r}")
    return rng.choice(rows)


def distinct_values(db: Database, domain: str, slot: str) -> list[Value]:
    seen: dict[tuple, Value] = {}
    for row in db.rows(domain):
        v = row.get(slot)
        if v is not None and v.key not in seen:
            seen[v.key] = v
    return [seen[k] for k in sorted(seen)]


def sample_value(db: Database, schemas: list[DomainSchema], domain: str, slot: str,
                 rng: random.Random) -> Value:
    """Uniform draw over a column's distinct values; action parameters with no
    backing column draw from a kind-appropriate menu."""
    dom = schema_map(schemas)[domain]
    col = dom.table.column(slot)
    if col is not None:
        values = distinct_values(db, domain, slot)
        if not values:
            raise DatabaseError(f"no values for {domain}.{slot}")
        return rng.choice(values)
    for action in dom.actions:
        p = action.param(slot)
        if p is None:
            continue
        if p.links is not None:
            values = distinct_values(db, domain, p.links)
            if not values:
                raise DatabaseError(f"no values for {domain}.{p.links}")
            return rng.choice(values)
        if p.kind == "time_of_day":
            return parse_value("time_of_day", rng.choice(TIME_MENU))
        if p.kind == "integer":
            return Int(rng.choice(INT_MENU))
        if p.kind == "day_of_week":
            return parse_value("day_of_week", rng.choice(DAYS))
        raise DatabaseError(f"cannot sample a {p.kind} for {domain}.{slot}")
    raise DatabaseError(f"unknown slot {domain}.{slot}")


# ---------------------------------------------------------------------------
# executor handle

class Engine:
    """Bundles schemas, database and simulation settings behind the executor
    interface advance_context expects.  Immutable apart from the caller-owned
    generator used for simulated failures."""

    def __init__(self, schemas: list[DomainSchema], db: Database,
                 rng: random.Random | None = None, simulate: bool = False,
                 p_fail: float = 0.0):
        self.schemas = schemas
        self.smap = schema_map(schemas)
        self.db = db
        self.rng = rng
        self.simulate = simulate
        self.p_fail = p_fail

    def entity_key(self, domain: str) -> str:
        return self.smap[domain].table.entity_key

    def complete(self, body) -> bool:
        if isinstance(body, QueryStatement):
            return True
        return action_complete(body, self.schemas)

    def run(self, body) -> ExecResult:
        try:
            if isinstance(body, QueryStatement):
                return execute_query(self.db, body, self.schemas)
            outcome = execute_action(self.db, body, self.schemas, rng=self.rng,
                                     simulate=self.simulate, p_fail=self.p_fail)
            return outcome.to_exec_result()
        except (DatabaseError, StateError):
            return ExecResult(count=0, error=INVALID_PARAM)

    def sample_row(self, domain: str, rng: random.Random) -> Row:
        return sample_row(self.db, domain, rng)

    def sample_value(self, domain: str, slot: str, rng: random.Random) -> Value:
        return sample_value(self.db, self.schemas, domain, slot, rng)
