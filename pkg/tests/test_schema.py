import json

import pytest

from dialogforge.schema import SchemaError, load_schemas, parse_schemas

from conftest import SCHEMAS_PATH


def test_restaurant_schema_shape(schemas):
    rest = next(s for s in schemas if s.name == "restaurant")
    assert rest.table.entity_key == "name"
    assert [c.name for c in rest.table.columns] == [
        "name", "food", "price_range", "area", "address", "phone", "postcode"]
    assert len(rest.actions) == 1
    action = rest.actions[0]
    assert action.name == "make_reservation"
    assert {p.name for p in action.params} == {"name", "book_day", "book_people", "book_time"}
    # the shared name links the action to the table even without an explicit flag
    assert action.param("name").links == "name"
    assert action.entity_param().name == "name"


def test_zero_domains_is_empty_list():
    assert parse_schemas({"domains": []}) == []


def test_action_without_entity_link_is_rejected():
    data = {"domains": [{
        "name": "widget",
        "table": {"name": "widget", "entity_key": "name", "columns": [
            {"name": "name", "kind": "free_string", "filterable": True,
             "requestable": True, "phrases": ["name"]},
            {"name": "color", "kind": "string_enum", "filterable": True,
             "requestable": True, "phrases": ["color"]}]},
        "actions": [{"name": "order_widget", "phrases": ["order it"], "params": [
            {"name": "quantity", "kind": "integer", "required": True}]}],
    }]}
    with pytest.raises(SchemaError, match="order_widget"):
        parse_schemas(data)


def test_missing_phrases_on_filterable_column():
    data = {"domains": [{
        "name": "widget",
        "table": {"name": "widget", "entity_key": "name", "columns": [
            {"name": "name", "kind": "free_string", "filterable": True,
             "requestable": True, "phrases": []}]},
        "actions": [],
    }]}
    with pytest.raises(SchemaError, match="phrases"):
        parse_schemas(data)


def test_bad_identifier_and_reserved_word():
    base = {"name": "widget", "table": {"name": "widget", "entity_key": "name",
            "columns": [{"name": "name", "kind": "free_string", "phrases": ["name"]}]},
            "actions": []}
    bad = dict(base, name="Widget")
    with pytest.raises(SchemaError, match="identifier"):
        parse_schemas({"domains": [bad]})
    reserved = dict(base, name="propose")
    with pytest.raises(SchemaError, match="reserved"):
        parse_schemas({"domains": [reserved]})


def test_duplicate_domains_rejected():
    dom = {"name": "widget", "table": {"name": "widget", "entity_key": "name",
           "columns": [{"name": "name", "kind": "free_string", "phrases": ["name"]}]},
           "actions": []}
    with pytest.raises(SchemaError, match="duplicate domain"):
        parse_schemas({"domains": [dom, dom]})


def test_parse_error_carries_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"domains": [,]}')
    with pytest.raises(SchemaError, match="line 1"):
        load_schemas(p)


def test_load_is_pure_function_of_bytes():
    a = load_schemas(SCHEMAS_PATH)
    b = load_schemas(SCHEMAS_PATH)
    assert a == b


def test_unknown_kind_rejected():
    data = {"domains": [{
        "name": "widget",
        "table": {"name": "widget", "entity_key": "name", "columns": [
            {"name": "name", "kind": "uuid", "phrases": ["name"]}]},
        "actions": [],
    }]}
    with pytest.raises(SchemaError, match="kind"):
        parse_schemas(data)
