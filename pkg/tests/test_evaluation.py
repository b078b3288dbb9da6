import random

import pytest

from dialogforge.builtin import builtin_transaction_machine
from dialogforge.evaluation import (
    SYNTHESIZABLE, TRAINED, UNREPRESENTABLE, UNSYNTHESIZABLE, EvalError,
    EvalRecord, abstract_context, abstract_user, build_signature, categorize,
    evaluate, load_signature, save_signature, shape_of,
)
from dialogforge.linearize import delinearize_user, linearize_context
from dialogforge.states import (AgentState, Statement, Str, UserState,
                                advance_context, attach_agent_state, eq,
                                null_context, QueryStatement)
from dialogforge.synthesis import SynthConfig, synthesize, training_lines


def rec(dialogue, turn, gold, pred, context="Init:"):
    return EvalRecord(dialogue, turn, context, "", gold, pred)


GOLD_A = 'Exec: restaurant ( food = " indian " ) ;'
GOLD_B = 'Exec: hotel ( area = " north " ) ;'
WRONG = 'Exec: restaurant ( food = " italian " ) ;'


def test_all_correct_gives_ones(schemas):
    records = [rec("d0", i, GOLD_A, GOLD_A) for i in range(3)]
    report = evaluate(records, schemas)
    assert (report.turn_em, report.turn_slot, report.dialogue_em,
            report.dialogue_slot) == (1.0, 1.0, 1.0, 1.0)


def test_single_error_dialogue_golden(schemas):
    """Four turns, only turn 1 wrong: turn EM 3/4, dialogue EM 1/4 (only
    turn 0 has an all-correct prefix)."""
    records = [
        rec("d0", 0, GOLD_A, GOLD_A),
        rec("d0", 1, GOLD_A, WRONG),
        rec("d0", 2, GOLD_A, GOLD_A),
        rec("d0", 3, GOLD_A, GOLD_A),
    ]
    report = evaluate(records, schemas)
    assert report.turn_em == 0.75
    assert report.dialogue_em == 0.25
    assert report.dialogue_em_by_dialogue == 0.0


def test_two_dialogue_golden(schemas):
    """One perfect 4-turn dialogue plus a 2-turn dialogue with both wrong:
    turn EM 4/6 and dialogue EM 4/6."""
    records = [rec("d0", i, GOLD_A, GOLD_A) for i in range(4)]
    records += [rec("d1", 0, GOLD_B, WRONG), rec("d1", 1, GOLD_B, WRONG)]
    report = evaluate(records, schemas)
    assert report.turn_em == pytest.approx(4 / 6)
    assert report.dialogue_em == pytest.approx(4 / 6)
    assert report.dialogue_em_by_dialogue == 0.5


def test_em_implies_slot_but_not_conversely(schemas):
    with_req = 'Exec: phone of restaurant ( food = " indian " ) ;'
    records = [rec("d0", 0, with_req, GOLD_A)]
    report = evaluate(records, schemas)
    assert report.turn_em == 0.0 and report.turn_slot == 1.0


def test_unparseable_prediction_counts_as_miss(schemas):
    records = [rec("d0", 0, GOLD_A, "garbage ( nonsense")]
    report = evaluate(records, schemas)
    assert report.turn_em == 0.0 and report.turn_slot == 0.0


def test_turn_gap_is_structural_error(schemas):
    records = [rec("d0", 0, GOLD_A, GOLD_A), rec("d0", 2, GOLD_A, GOLD_A)]
    with pytest.raises(EvalError, match="d0"):
        evaluate(records, schemas)


def test_permutation_invariance_across_dialogues(schemas):
    a = [rec("d0", 0, GOLD_A, GOLD_A), rec("d0", 1, GOLD_A, WRONG),
         rec("d1", 0, GOLD_B, GOLD_B)]
    b = [a[2], a[0], a[1]]
    ra, rb = evaluate(a, schemas), evaluate(b, schemas)
    assert ra.to_dict() == rb.to_dict()


def test_metric_invariants_on_fuzzed_predictions(schemas, db):
    machine = builtin_transaction_machine(schemas, db)
    base = []
    for record in synthesize(machine, machine.grammar, db,
                             SynthConfig(num_dialogues=40, seed=21)):
        user_lines, _ = training_lines(record, schemas)
        base.extend(user_lines)
    rng = random.Random(0)
    alternates = [GOLD_A, GOLD_B, WRONG, "Invalid:", "Greet:", "broken (("]
    for trial in range(60):
        records = []
        for line in base:
            pred = line["target"]
            roll = rng.random()
            if roll < 0.3:
                pred = rng.choice(alternates)
            records.append(EvalRecord(line["id"], line["turn"], line["context"],
                                      line["utterance"], line["target"], pred))
        report = evaluate(records, schemas)
        report.validate()
        assert report.dialogue_em <= report.turn_em <= report.turn_slot


# ---------------------------------------------------------------------------
# categorization

@pytest.fixture(scope="module")
def machine(schemas, db):
    return builtin_transaction_machine(schemas, db)


@pytest.fixture(scope="module")
def corpus(schemas, db, machine):
    lines = []
    for record in synthesize(machine, machine.grammar, db,
                             SynthConfig(num_dialogues=150, seed=8)):
        user_lines, _ = training_lines(record, schemas)
        lines.extend(user_lines)
    return lines


def test_abstraction_strips_values(schemas):
    a = shape_of("Init:", GOLD_A, schemas)
    b = shape_of("Init:", WRONG, schemas)
    assert a == b
    assert "<str>" in a and "indian" not in a


def test_signature_round_trip(tmp_path, schemas, corpus):
    sig = build_signature(corpus, schemas)
    path = tmp_path / "sig.json"
    save_signature(sig, path)
    assert load_signature(path) == sig


def test_invalid_gold_is_unrepresentable(schemas, machine, corpus):
    sig = build_signature(corpus, schemas)
    r = rec("d0", 0, "Invalid:", "Invalid:")
    assert categorize(machine, sig, r, schemas) == UNREPRESENTABLE


def test_synthesized_turns_are_trained(schemas, machine, corpus):
    sig = build_signature(corpus, schemas)
    for line in corpus[:50]:
        r = EvalRecord(line["id"], line["turn"], line["context"],
                       line["utterance"], line["target"], line["target"])
        assert categorize(machine, sig, r, schemas) == TRAINED


def test_machine_producible_turn_is_synthesizable_or_trained(schemas, db, machine, corpus):
    sig = build_signature(corpus, schemas)
    from dialogforge.engine import Engine
    engine = Engine(schemas, db)
    ctx = null_context()
    for atoms in ((eq("area", Str("west")),), (eq("food", Str("french")),),
                  (eq("price_range", Str("cheap")),)):
        ctx = advance_context(ctx, UserState("Exec", (Statement(
            QueryStatement("restaurant", atoms)),)), engine)
    assert ctx.query_of("restaurant").result.count == 1
    from dialogforge.machine import select_agent
    from dialogforge.builtin import DEFAULT_POLICY
    astate, _, _ = select_agent(machine, DEFAULT_POLICY, ctx, random.Random(0))
    assert astate.act == "RecommendOne"
    ctx_user = attach_agent_state(ctx, astate)
    target = 'Exec: postcode of restaurant ( name = " La Marguerite " ) ;'
    r = EvalRecord("d0", 0, linearize_context(ctx_user), "what is the postcode ?",
                   target, target)
    got = categorize(machine, sig, r, schemas)
    assert got in (TRAINED, SYNTHESIZABLE)


def test_reissued_query_after_success_is_unsynthesizable(schemas, db, machine, corpus):
    """The machine offers no re-issue followup after a completed booking, so
    an identical repeated query cannot be produced there."""
    sig = build_signature(corpus, schemas)
    from dialogforge.engine import Engine
    from dialogforge.states import ActionStatement, Day, Int, Time
    engine = Engine(schemas, db)
    ctx = advance_context(null_context(), UserState("Exec", (Statement(
        QueryStatement("restaurant", (eq("food", Str("spanish")),))),)), engine)
    full = ActionStatement("restaurant", "make_reservation", (
        ("name", Str("La Tasca")), ("book_day", Day("fri")),
        ("book_people", Int(2)), ("book_time", Time(18, 0))))
    ctx = advance_context(ctx, UserState("Exec", (Statement(full),)), engine)
    ctx_user = attach_agent_state(ctx, AgentState("ActionSuccess"))
    reissue = 'Exec: restaurant ( food = " spanish " ) ;'
    r = EvalRecord("d0", 0, linearize_context(ctx_user), "find me a spanish restaurant",
                   reissue, reissue)
    assert categorize(machine, sig, r, schemas, depth=1) == UNSYNTHESIZABLE


def test_categorize_partitions_and_shares_sum(schemas, machine, corpus):
    sig = build_signature(corpus, schemas)
    records = []
    for line in corpus[:40]:
        records.append(EvalRecord(line["id"], line["turn"], line["context"],
                                  line["utterance"], line["target"], line["target"]))
    report = evaluate(records, schemas, machine=machine, signature=sig)
    table = report.category_table
    assert abs(sum(row["share"] for row in table.values()) - 1.0) < 1e-9
    assert set(table) == {UNREPRESENTABLE, TRAINED, SYNTHESIZABLE, UNSYNTHESIZABLE}
