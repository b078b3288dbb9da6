"""Domain definitions: one database table plus its actions, with the
natural-language annotations that templates draw surface forms from.

Everything domain specific (slot names, value kinds, phrases) lives here;
the transaction machine itself never mentions a concrete domain.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

IDENT_RE = re.compile(r"^[a-z][a-z0-9_]*$")

# structural tokens of the linearization grammar; identifiers may not shadow them
RESERVED = frozenset({"active", "new", "request", "suggest", "propose", "first",
                      "error", "of", "or", "dontcare"})

VALUE_KINDS = ("string_enum", "free_string", "integer", "time_of_day", "day_of_week")


class SchemaError(ValueError):
    """Schema file failed validation; message names the offending field."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    filterable: bool = False
    requestable: bool = False
    phrases: tuple[str, ...] = ()
    # exact match is the default; substring lets a column like "name"
    # match partial mentions if a deployment wants that
    substring_match: bool = False


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    required: bool = False
    links: str | None = None
    phrases: tuple[str, ...] = ()


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[ParamSpec, ...]
    phrases: tuple[str, ...] = ()

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def required_params(self) -> list[ParamSpec]:
        return [p for p in self.params if p.required]

    def entity_param(self) -> ParamSpec | None:
        for p in self.params:
            if p.links is not None:
                return p
        return None


@dataclass(frozen=True)
class TableSchema:
    name: str
    entity_key: str
    columns: tuple[ColumnSpec, ...]
    phrases: tuple[str, ...] = ()

    def column(self, name: str) -> ColumnSpec | None:
        for c in self.columns:
            if c.name == name:
                return c
        return None


@dataclass(frozen=True)
class DomainSchema:
    name: str
    table: TableSchema
    actions: tuple[ActionSchema, ...]

    def column(self, name: str) -> ColumnSpec | None:
        return self.table.column(name)

    def action(self, name: str) -> ActionSchema | None:
        for a in self.actions:
            if a.name == name:
                return a
        return None

    def filterable_columns(self) -> list[ColumnSpec]:
        return [c for c in self.table.columns if c.filterable]

    def requestable_columns(self) -> list[ColumnSpec]:
        return [c for c in self.table.columns if c.requestable]

    def slot_kind(self, slot: str) -> str | None:
        """Value kind of a table column or any action parameter, or None."""
        col = self.table.column(slot)
        if col is not None:
            return col.kind
        for a in self.actions:
            p = a.param(slot)
            if p is not None:
                return p.kind
        return None


def schema_map(schemas: list[DomainSchema]) -> dict[str, DomainSchema]:
    return {s.name: s for s in schemas}


def _ident(value, where: str) -> str:
    if not isinstance(value, str) or not IDENT_RE.match(value):
        raise SchemaError(f"{where}: {value!r} is not a valid identifier")
    if value in RESERVED:
        raise SchemaError(f"{where}: {value!r} is a reserved word")
    return value


def _phrases(obj: dict, where: str, default: tuple[str, ...] = ()) -> tuple[str, ...]:
    raw = obj.get("phrases", list(default))
    if not isinstance(raw, list) or not all(isinstance(p, str) and p.strip() for p in raw):
        raise SchemaError(f"{where}.phrases: must be a list of non-empty strings")
    return tuple(raw)


def _parse_column(obj: dict, where: str) -> ColumnSpec:
    name = _ident(obj.get("name"), f"{where}.name")
    kind = obj.get("kind")
    if kind not in VALUE_KINDS:
        raise SchemaError(f"{where}.kind: {kind!r} not one of {VALUE_KINDS}")
    col = ColumnSpec(
        name=name,
        kind=kind,
        filterable=bool(obj.get("filterable", False)),
        requestable=bool(obj.get("requestable", False)),
        phrases=_phrases(obj, where),
        substring_match=obj.get("match") == "substring",
    )
    if (col.filterable or col.requestable) and not col.phrases:
        raise SchemaError(f"{where}: filterable/requestable column {name!r} needs phrases")
    return col


def _parse_param(obj: dict, where: str, table: TableSchema) -> ParamSpec:
    name = _ident(obj.get("name"), f"{where}.name")
    kind = obj.get("kind")
    if kind not in VALUE_KINDS:
        raise SchemaError(f"{where}.kind: {kind!r} not one of {VALUE_KINDS}")
    links = obj.get("links")
    # a parameter sharing a column's name always links the action to the table
    if links is None and table.column(name) is not None:
        links = name
    if links is not None and table.column(links) is None:
        raise SchemaError(f"{where}.links: {links!r} is not a column of {table.name!r}")
    phrases = _phrases(obj, where, default=(name.replace("book_", "").replace("_", " "),))
    return ParamSpec(name=name, kind=kind, required=bool(obj.get("required", False)),
                     links=links, phrases=phrases)


def _parse_table(obj: dict, where: str) -> TableSchema:
    name = _ident(obj.get("name"), f"{where}.name")
    entity_key = _ident(obj.get("entity_key"), f"{where}.entity_key")
    cols_raw = obj.get("columns")
    if not isinstance(cols_raw, list) or not cols_raw:
        raise SchemaError(f"{where}.columns: must be a non-empty list")
    columns = tuple(_parse_column(c, f"{where}.columns[{i}]") for i, c in enumerate(cols_raw))
    seen: set[str] = set()
    for c in columns:
        if c.name in seen:
            raise SchemaError(f"{where}: duplicate column {c.name!r}")
        seen.add(c.name)
    if entity_key not in seen:
        raise SchemaError(f"{where}.entity_key: {entity_key!r} is not a column")
    return TableSchema(name=name, entity_key=entity_key, columns=columns,
                       phrases=_phrases(obj, where, default=(name.replace("_", " "),)))


def _parse_action(obj: dict, where: str, table: TableSchema) -> ActionSchema:
    name = _ident(obj.get("name"), f"{where}.name")
    params_raw = obj.get("params")
    if not isinstance(params_raw, list) or not params_raw:
        raise SchemaError(f"{where}.params: must be a non-empty list")
    params = tuple(_parse_param(p, f"{where}.params[{i}]", table)
                   for i, p in enumerate(params_raw))
    seen: set[str] = set()
    for p in params:
        if p.name in seen:
            raise SchemaError(f"{where}: duplicate param {p.name!r}")
        seen.add(p.name)
    if not any(p.links == table.entity_key for p in params):
        raise SchemaError(
            f"{where}: action {name!r} has no param linking the entity key {table.entity_key!r}")
    return ActionSchema(name=name, params=params, phrases=_phrases(obj, where))


def parse_schemas(data) -> list[DomainSchema]:
    """Validate an already-decoded schema document."""
    if not isinstance(data, dict) or not isinstance(data.get("domains"), list):
        raise SchemaError("top level: expected an object with a 'domains' list")
    out: list[DomainSchema] = []
    names: set[str] = set()
    for i, dom in enumerate(data["domains"]):
        where = f"domains[{i}]"
        name = _ident(dom.get("name"), f"{where}.name")
        if name in names:
            raise SchemaError(f"{where}: duplicate domain {name!r}")
        names.add(name)
        if not isinstance(dom.get("table"), dict):
            raise SchemaError(f"{where}.table: missing")
        table = _parse_table(dom["table"], f"{where}.table")
        actions_raw = dom.get("actions", [])
        if not isinstance(actions_raw, list):
            raise SchemaError(f"{where}.actions: must be a list")
        actions = tuple(_parse_action(a, f"{where}.actions[{j}]", table)
                        for j, a in enumerate(actions_raw))
        out.append(DomainSchema(name=name, table=table, actions=actions))
    return out


def load_schemas(path: str | Path) -> list[DomainSchema]:
    """Load and validate domain schemas from a JSON file."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: parse error at line {e.lineno} column {e.colno}: {e.msg}") from e
    return parse_schemas(data)
