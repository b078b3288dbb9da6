import random

import pytest

from dialogforge.builtin import DEFAULT_POLICY, build_grammar, builtin_transaction_machine
from dialogforge.engine import Engine, parse_database
from dialogforge.machine import (enumerate_user_transitions, explore_reachability,
                                 sample_agent, select_agent)
from dialogforge.schema import parse_schemas
from dialogforge.states import (
    Context, EXECUTED, PROPOSED, ActionStatement, AgentState, QueryStatement,
    Statement, Str, UserState, advance_context, attach_agent_state, eq,
    null_context,
)

AUDIT_COUNTS = {"agent_rules": 16, "user_followups": 106, "distinct_user_tags": 20}


@pytest.fixture(scope="module")
def machine(schemas, db):
    return builtin_transaction_machine(schemas, db)


@pytest.fixture(scope="module")
def engine(schemas, db):
    return Engine(schemas, db)


def exec_ctx(engine, *atoms, domain="restaurant", requested=frozenset()):
    us = UserState("Exec", (Statement(QueryStatement(
        domain, tuple(atoms), frozenset(requested))),))
    return advance_context(null_context(), us, engine)


def test_audit_counts(machine):
    assert machine.counts() == AUDIT_COUNTS
    text = machine.describe()
    assert "16 agent rules" in text
    for rule in machine.rules:
        assert rule.name in text


def test_exactly_one_start_rule(machine):
    rules = machine.applicable_rules(null_context())
    assert [r.name for r in rules] == ["init"]
    assert rules[0].act == "Init"


def test_end_is_absorbing(machine, engine):
    ctx = advance_context(null_context(), UserState("End"), engine)
    assert machine.applicable_rules(ctx) == []
    assert machine.followups(ctx) == []
    with pytest.raises(ValueError):
        select_agent(machine, DEFAULT_POLICY, ctx, random.Random(0))


def test_many_results_asks_unconstrained_slot(machine, engine):
    ctx = exec_ctx(engine, eq("price_range", Str("cheap")))
    assert ctx.query_of("restaurant").result.count == 11
    names = {r.name for r in machine.applicable_rules(ctx)}
    assert "search_question" in names and "propose_refined_query" in names
    astate, utterance, rule = select_agent(machine, DEFAULT_POLICY, ctx,
                                           random.Random(0))
    # live policy prefers the open question; slots are asked in schema order
    assert rule.name == "search_question"
    assert astate.requested == frozenset({("restaurant", "food")})
    assert ("food" in utterance) or ("cuisine" in utterance)
    # once food and price are fixed, area is the remaining open slot
    ctx2 = exec_ctx(engine, eq("price_range", Str("cheap")), eq("food", Str("indian")))
    assert ctx2.query_of("restaurant").result.count == 6
    astate2, utterance2, _ = select_agent(machine, DEFAULT_POLICY, ctx2,
                                          random.Random(0))
    assert astate2.requested == frozenset({("restaurant", "area")})
    assert ("area" in utterance2) or ("part of town" in utterance2)


def test_single_result_recommends_with_proposal(machine, engine):
    ctx = exec_ctx(engine, eq("food", Str("spanish")))
    assert ctx.query_of("restaurant").result.count == 1
    astate, utterance, rule = select_agent(machine, DEFAULT_POLICY, ctx,
                                           random.Random(0))
    assert rule.name == "recommend_one" and astate.act == "RecommendOne"
    assert astate.proposed is not None
    assert astate.proposed.body.action == "make_reservation"
    assert astate.proposed.body.param("name") == Str("La Tasca")
    assert "la tasca" in utterance.lower()


def test_empty_search_suggests_first_constrained_slot(machine, engine):
    ctx = exec_ctx(engine, eq("food", Str("klingon")), eq("area", Str("centre")))
    assert ctx.query_of("restaurant").result.count == 0
    astate, utterance, rule = select_agent(machine, DEFAULT_POLICY, ctx,
                                           random.Random(0))
    assert rule.name == "empty_search" and astate.act == "EmptySearch"
    # alphabetically first constrained slot
    assert astate.suggest == frozenset({("restaurant", "area")})


def test_policy_determinism(machine, engine):
    ctx = exec_ctx(engine, eq("price_range", Str("cheap")))
    outs = {select_agent(machine, DEFAULT_POLICY, ctx, random.Random(3))[:2]
            for _ in range(5)}
    assert len(outs) == 1


def test_success_then_anything_else(machine, engine):
    ctx = exec_ctx(engine, eq("food", Str("spanish")))
    astate, _, _ = select_agent(machine, DEFAULT_POLICY, ctx, random.Random(0))
    ctx_user = attach_agent_state(ctx, astate)
    fols = enumerate_user_transitions(machine, ctx_user, astate)
    accept = next(f for f in fols if f.tag == "u_accept")
    from dialogforge.templates import Bindings
    us = accept.semantics(ctx_user, Bindings())
    ctx2 = advance_context(ctx_user, us, engine)
    # the accepted action is incomplete: the agent starts slot filling
    astate2, _, rule2 = select_agent(machine, DEFAULT_POLICY, ctx2, random.Random(0))
    assert rule2.name == "slot_fill"
    assert astate2.requested == frozenset({("restaurant", "book_day")})
    # a completed booking is announced once, then anything_else
    from dialogforge.states import Day, Int, Time
    full = ActionStatement("restaurant", "make_reservation", (
        ("name", Str("La Tasca")), ("book_day", Day("fri")),
        ("book_people", Int(2)), ("book_time", Time(18, 0))))
    ctx3 = advance_context(attach_agent_state(ctx2, astate2),
                           UserState("Exec", (Statement(full),)), engine)
    astate3, _, rule3 = select_agent(machine, DEFAULT_POLICY, ctx3, random.Random(0))
    assert rule3.name == "action_success"
    ctx4 = advance_context(attach_agent_state(ctx3, astate3), UserState("Greet"),
                           engine)
    astate4, _, rule4 = select_agent(machine, DEFAULT_POLICY, ctx4, random.Random(0))
    assert rule4.name == "anything_else" and astate4.act == "AnythingElse"


def test_agent_states_satisfy_field_constraints(machine, engine):
    # sample agent plans across many random contexts; constructing AgentState
    # validates the per-act field constraints
    rng = random.Random(11)
    ctx = null_context()
    for _ in range(300):
        rules = machine.applicable_rules(ctx)
        if not rules:
            ctx = null_context()
            continue
        astate, _, _ = sample_agent(machine, ctx, rng)
        ctx_user = attach_agent_state(ctx, astate)
        fols = machine.followups(ctx_user)
        assert fols, ctx_user
        fol = fols[rng.randrange(len(fols))]
        from dialogforge.machine import make_sampler
        from dialogforge.templates import expand
        sampler = make_sampler(machine.engine, fol.exclude)
        _, deriv = expand(machine.grammar, fol.tag, rng, bindings=fol.bindings,
                          sampler=sampler, constraint=fol.expand_constraint)
        us = fol.semantics(ctx_user, deriv.bindings())
        ctx = advance_context(ctx_user, us, machine.engine)
        if us.act == "End":
            ctx = null_context()


def test_followups_by_agent_act(machine, engine):
    ctx = exec_ctx(engine, eq("price_range", Str("cheap")))
    astate, _, _ = select_agent(machine, DEFAULT_POLICY, ctx, random.Random(0))
    ctx_user = attach_agent_state(ctx, astate)
    tags = {f.tag for f in enumerate_user_transitions(machine, ctx_user, astate)}
    assert {"u_answer_slot", "u_answer_dontcare", "u_refine_add", "u_cancel",
            "u_end", "u_switch"} <= tags

    ctx1 = exec_ctx(engine, eq("food", Str("spanish")))
    astate1, _, _ = select_agent(machine, DEFAULT_POLICY, ctx1, random.Random(0))
    tags1 = {f.tag for f in machine.followups(attach_agent_state(ctx1, astate1))}
    assert "u_accept" in tags1 and "u_accept_action" in tags1

    # after a booking: end and domain switch stay open, slot answers do not
    from dialogforge.states import Day, Int, Time
    full = ActionStatement("restaurant", "make_reservation", (
        ("name", Str("La Tasca")), ("book_day", Day("fri")),
        ("book_people", Int(2)), ("book_time", Time(18, 0))))
    ctx2 = advance_context(ctx1, UserState("Exec", (Statement(full),)), engine)
    astate2, _, _ = select_agent(machine, DEFAULT_POLICY, ctx2, random.Random(0))
    tags2 = {f.tag for f in machine.followups(attach_agent_state(ctx2, astate2))}
    assert {"u_end", "u_switch", "u_thanks"} <= tags2
    assert "u_answer_slot" not in tags2

    # switching domains is not offered while the agent slot-fills
    prop = Statement(ActionStatement("restaurant", "make_reservation",
                                     (("name", Str("La Tasca")),)), PROPOSED)
    ctx3 = attach_agent_state(ctx1, AgentState("SlotFill", requested=frozenset(
        {("restaurant", "book_day")})))
    tags3 = {f.tag for f in machine.followups(ctx3)}
    assert "u_switch" not in tags3 and "u_answer_param" in tags3


def test_followup_names_cover_enumerated_tags(machine, engine):
    declared = {}
    for rule in machine.rules:
        declared[rule.act] = declared.get(rule.act, set()) | set(rule.followup_names)
    rng = random.Random(2)
    ctx = null_context()
    for _ in range(200):
        rules = machine.applicable_rules(ctx)
        if not rules:
            ctx = null_context()
            continue
        astate, _, rule = sample_agent(machine, ctx, rng)
        ctx_user = attach_agent_state(ctx, astate)
        tags = {f.tag for f in machine.followups(ctx_user)}
        assert tags <= declared[astate.act], (astate.act, tags - declared[astate.act])
        fols = machine.followups(ctx_user)
        fol = fols[rng.randrange(len(fols))]
        from dialogforge.machine import make_sampler
        from dialogforge.templates import expand
        sampler = make_sampler(machine.engine, fol.exclude)
        _, deriv = expand(machine.grammar, fol.tag, rng, bindings=fol.bindings,
                          sampler=sampler, constraint=fol.expand_constraint)
        us = fol.semantics(ctx_user, deriv.bindings())
        ctx = advance_context(ctx_user, us, machine.engine)
        if us.act == "End":
            ctx = null_context()


def test_build_fails_without_askable_slots():
    data = {"domains": [{
        "name": "thing",
        "table": {"name": "thing", "entity_key": "name", "columns": [
            {"name": "name", "kind": "free_string", "requestable": True,
             "phrases": ["name"]}]},
        "actions": [{"name": "get_thing", "phrases": ["get it"], "params": [
            {"name": "name", "kind": "free_string", "required": True}]}],
    }]}
    schemas = parse_schemas(data)
    db = parse_database({"thing": [{"name": "one"}]}, schemas)
    with pytest.raises(ValueError, match="no filterable slots"):
        builtin_transaction_machine(schemas, db)


@pytest.mark.slow
def test_every_rule_reachable_within_eight_turns(machine):
    reach = explore_reachability(machine, max_depth=8)
    missing = {r.name for r in machine.rules} - set(reach)
    assert not missing
    assert max(reach.values()) <= 8
