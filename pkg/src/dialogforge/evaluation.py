"""Metrics (exact match, slot accuracy, dialogue accuracy) and turn
categorization against a machine and a training-set signature.

Turn metrics assume the gold context as parser input.  Dialogue metrics
count a turn as correct only when it and every earlier turn of its dialogue
are correct; the report also carries the per-dialogue aggregation since
both readings of "dialogue accuracy" are defensible.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .linearize import (DelinearizeError, delinearize_context, delinearize_user,
                        linearize_context)
from .machine import MachineSpec
from .states import (ActionStatement, Context, QueryStatement, Statement,
                     UserState, Value, advance_context, attach_agent_state,
                     has_disjunction, slots_of, states_equal)
from .templates import Bindings

UNREPRESENTABLE = "unrepresentable"
TRAINED = "trained"
SYNTHESIZABLE = "synthesizable"
UNSYNTHESIZABLE = "unsynthesizable"
CATEGORIES = (UNREPRESENTABLE, TRAINED, SYNTHESIZABLE, UNSYNTHESIZABLE)


@dataclass(frozen=True)
class EvalRecord:
    dialogue_id: str
    turn: int
    context: str
    utterance: str
    gold_target: str
    pred_target: str

    @staticmethod
    def from_pair(gold: dict, pred: dict) -> "EvalRecord":
        gid = str(gold.get("id", gold.get("dialogue_id")))
        pid = str(pred.get("id", pred.get("dialogue_id")))
        if (gid, gold.get("turn")) != (pid, pred.get("turn")):
            raise ValueError(
                f"gold/pred mismatch at {gid}#{gold.get('turn')} vs {pid}#{pred.get('turn')}")
        return EvalRecord(gid, int(gold["turn"]), gold["context"],
                          gold.get("utterance", ""), gold["target"],
                          pred["target"])


class EvalError(ValueError):
    pass


@dataclass
class MetricsReport:
    turn_em: float
    turn_slot: float
    dialogue_em: float
    dialogue_slot: float
    dialogue_em_by_dialogue: float
    dialogue_slot_by_dialogue: float
    turns: int
    dialogues: int
    disjunction_turns: int
    per_domain: dict[str, dict[str, float]]
    category_table: dict[str, dict[str, float]] | None = None

    def validate(self) -> None:
        eps = 1e-9
        fractions = [self.turn_em, self.turn_slot, self.dialogue_em, self.dialogue_slot,
                     self.dialogue_em_by_dialogue, self.dialogue_slot_by_dialogue]
        if not all(-eps <= f <= 1 + eps for f in fractions):
            raise EvalError("metric out of [0, 1]")
        if self.dialogue_em > self.turn_em + eps:
            raise EvalError("dialogue EM cannot exceed turn EM")
        if self.dialogue_slot > self.turn_slot + eps:
            raise EvalError("dialogue slot cannot exceed turn slot")
        if self.turn_em > self.turn_slot + eps:
            raise EvalError("turn EM cannot exceed turn slot accuracy")
        if self.category_table is not None:
            share = sum(row["share"] for row in self.category_table.values())
            if abs(share - 1.0) > 1e-6:
                raise EvalError("category shares must sum to 1")

    def to_dict(self) -> dict:
        out = {
            "turn_em": self.turn_em, "turn_slot": self.turn_slot,
            "dialogue_em": self.dialogue_em, "dialogue_slot": self.dialogue_slot,
            "dialogue_em_by_dialogue": self.dialogue_em_by_dialogue,
            "dialogue_slot_by_dialogue": self.dialogue_slot_by_dialogue,
            "turns": self.turns, "dialogues": self.dialogues,
            "disjunction_turns": self.disjunction_turns,
            "per_domain": self.per_domain,
        }
        if self.category_table is not None:
            out["category_table"] = self.category_table
        return out


def _parse_user(text: str, schemas) -> UserState | None:
    try:
        return delinearize_user(text, schemas)
    except (DelinearizeError, ValueError):
        return None


def evaluate(records: list[EvalRecord], schemas, machine: MachineSpec | None = None,
             signature: set[str] | None = None, search_depth: int = 2) -> MetricsReport:
    by_dialogue: dict[str, list[EvalRecord]] = {}
    order: list[str] = []
    for r in records:
        if r.dialogue_id not in by_dialogue:
            order.append(r.dialogue_id)
        by_dialogue.setdefault(r.dialogue_id, []).append(r)
    for did, turns in by_dialogue.items():
        expected = list(range(len(turns)))
        if [t.turn for t in turns] != expected:
            raise EvalError(f"dialogue {did}: turns not contiguous from 0")

    turn_em = turn_slot = 0
    dial_em = dial_slot = 0
    dial_em_whole = dial_slot_whole = 0
    disjunction_turns = 0
    total = 0
    domain_hits: dict[str, list[int]] = {}
    category_counts: dict[str, list[int]] = {c: [0, 0] for c in CATEGORIES}

    for did in order:
        em_prefix = slot_prefix = True
        for r in by_dialogue[did]:
            total += 1
            gold = _parse_user(r.gold_target, schemas)
            if gold is None:
                raise EvalError(f"dialogue {did} turn {r.turn}: bad gold target")
            pred = _parse_user(r.pred_target, schemas)
            em = pred is not None and states_equal(pred, gold)
            slot = pred is not None and slots_of(pred) == slots_of(gold)
            turn_em += em
            turn_slot += slot
            em_prefix = em_prefix and em
            slot_prefix = slot_prefix and slot
            dial_em += em_prefix
            dial_slot += slot_prefix
            if has_disjunction(gold):
                disjunction_turns += 1
            domains = sorted({s.domain for s in gold.statements}) or ["none"]
            for d in domains:
                domain_hits.setdefault(d, [0, 0])
                domain_hits[d][0] += em
                domain_hits[d][1] += 1
            if machine is not None and signature is not None:
                cat = categorize(machine, signature, r, schemas, depth=search_depth)
                category_counts[cat][0] += em
                category_counts[cat][1] += 1
        dial_em_whole += em_prefix
        dial_slot_whole += slot_prefix

    n_dial = len(order)
    report = MetricsReport(
        turn_em=turn_em / total if total else 0.0,
        turn_slot=turn_slot / total if total else 0.0,
        dialogue_em=dial_em / total if total else 0.0,
        dialogue_slot=dial_slot / total if total else 0.0,
        dialogue_em_by_dialogue=dial_em_whole / n_dial if n_dial else 0.0,
        dialogue_slot_by_dialogue=dial_slot_whole / n_dial if n_dial else 0.0,
        turns=total, dialogues=n_dial,
        disjunction_turns=disjunction_turns,
        per_domain={
            d: {"em": hits / n if n else 0.0, "turns": n}
            for d, (hits, n) in sorted(domain_hits.items())
        },
        category_table=None if machine is None or signature is None else {
            c: {"share": n / total if total else 0.0, "em": hits / n if n else 0.0}
            for c, (hits, n) in category_counts.items()
        },
    )
    report.validate()
    return report


# ---------------------------------------------------------------------------
# abstraction: the shape of a state with the slot values stripped

_KIND_TOKEN = {"str": "<str>", "int": "<int>", "time": "<time>", "day": "<day>",
               "dontcare": "<dontcare>"}


def _abs_value(v: Value) -> str:
    return _KIND_TOKEN[v.key[0]]


def _count_bucket(n: int) -> str:
    if n == 0:
        return "zero"
    if n == 1:
        return "one"
    if n <= 5:
        return "few"
    return "many"


def _abs_body(body) -> str:
    if isinstance(body, QueryStatement):
        atoms = " , ".join(
            f"{a.slot} {a.op} {' or '.join(_abs_value(v) for v in a.values)}"
            for a in body.filter)
        proj = ",".join(sorted(body.requested))
        return f"{proj} of {body.domain} ( {atoms} )" if proj else f"{body.domain} ( {atoms} )"
    params = " , ".join(f"{n} = {_abs_value(v)}" for n, v in body.params)
    return f"{body.domain} . {body.action} ( {params} )"


def abstract_user(us: UserState) -> str:
    return f"{us.act}: " + " ; ".join(_abs_body(s.body) for s in us.statements)


def abstract_context(ctx: Context) -> str:
    parts = [f"{ctx.last_act}:"]
    if ctx.active:
        parts.append(f"active {ctx.active}")
    for dom, stmt in ctx.queries:
        fresh = "new " if (dom, "query") in ctx.fresh else ""
        err = f" error {stmt.result.error}" if stmt.result.error else ""
        parts.append(f"{fresh}{_abs_body(stmt.body)} "
                     f"#results {_count_bucket(stmt.result.count)}{err}")
    for dom, stmt in ctx.actions:
        fresh = "new " if (dom, "action") in ctx.fresh else ""
        err = f" error {stmt.result.error}" if stmt.result.error else ""
        parts.append(f"{fresh}{_abs_body(stmt.body)} "
                     f"#results {_count_bucket(stmt.result.count)}{err}")
    for stmt in ctx.carryover:
        parts.append(f"pending {_abs_body(stmt.body)}")
    if ctx.requested:
        parts.append("request " + ",".join(f"{d}.{s}" for d, s in sorted(ctx.requested)))
    if ctx.suggest:
        parts.append("suggest " + ",".join(f"{d}.{s}" for d, s in sorted(ctx.suggest)))
    if ctx.proposed is not None:
        parts.append(f"propose {_abs_body(ctx.proposed.body)}")
    return " ; ".join(parts)


def shape_of(context_text: str, target_text: str, schemas) -> str:
    ctx = delinearize_context(context_text, schemas)
    us = delinearize_user(target_text, schemas)
    return abstract_context(ctx) + " || " + abstract_user(us)


def build_signature(user_records, schemas) -> set[str]:
    """Abstract (context, user state) shapes of a training set; records are
    dicts with 'context' and 'target' fields."""
    out: set[str] = set()
    for rec in user_records:
        out.add(shape_of(rec["context"], rec["target"], schemas))
    return out


def save_signature(signature: set[str], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps({"shapes": sorted(signature)}, indent=0), encoding="utf-8")


def load_signature(path: str | Path) -> set[str]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return set(data["shapes"])


# ---------------------------------------------------------------------------
# categorization

_VALUE_TAGS = {"u_new_query", "u_switch", "u_refine_add", "u_change_slot",
               "u_answer_slot", "u_answer_param", "u_change_param"}


def _representative_bindings(machine: MachineSpec, fol) -> list[Bindings]:
    """Concrete binding sets standing in for whatever values a followup's
    templates could carry; values are abstracted away afterwards.  Tags whose
    templates always carry a value never get an empty binding set."""
    engine = machine.engine
    rng = random.Random(0)
    cons = fol.constraint
    if "slot" in cons:
        d, s = cons["slot"]
        v = engine.sample_value(d, s, rng)
        return [Bindings(values=((d, s, v),))]
    out = [] if fol.tag in _VALUE_TAGS else [Bindings()]
    if "domain" in cons:
        d = cons["domain"]
        dom = engine.smap[d]
        if fol.tag in _VALUE_TAGS:
            for col in dom.filterable_columns():
                if col.name == dom.table.entity_key:
                    continue
                v = engine.sample_value(d, col.name, rng)
                out.append(Bindings(values=((d, col.name, v),), domain=d))
        if fol.tag == "u_ask_attr":
            for col in dom.requestable_columns():
                out.append(Bindings(columns=((d, col.name),), domain=d))
        if fol.tag not in _VALUE_TAGS:
            out.append(Bindings(domain=d))
    return out


def candidate_user_shapes(machine: MachineSpec, ctx: Context) -> set[str]:
    shapes: set[str] = set()
    for fol in machine.followups(ctx):
        for b in _representative_bindings(machine, fol):
            try:
                us = fol.semantics(ctx, b)
            except Exception:
                continue
            shapes.add(abstract_user(us))
    return shapes


def categorize(machine: MachineSpec, signature: set[str], record: EvalRecord,
               schemas, depth: int = 2) -> str:
    gold = delinearize_user(record.gold_target, schemas)
    if gold.act == "Invalid":
        return UNREPRESENTABLE
    shape = shape_of(record.context, record.gold_target, schemas)
    if shape in signature:
        return TRAINED
    ctx = delinearize_context(record.context, schemas)
    target_ctx = abstract_context(ctx)
    target_us = abstract_user(gold)
    seen: set[str] = set()
    frontier = [ctx]
    for _ in range(max(1, depth)):
        next_frontier: list[Context] = []
        for c in frontier:
            key = abstract_context(c)
            if key in seen:
                continue
            seen.add(key)
            if key == target_ctx and target_us in candidate_user_shapes(machine, c):
                return SYNTHESIZABLE
            next_frontier.extend(_advance_candidates(machine, c))
        frontier = next_frontier
        if not frontier:
            break
    return UNSYNTHESIZABLE


def _advance_candidates(machine: MachineSpec, ctx: Context) -> list[Context]:
    """One abstract turn outward: each followup with representative bindings,
    advanced with a non-failing executor, then each applicable agent rule."""
    rng = random.Random(0)
    out: list[Context] = []
    for fol in machine.followups(ctx):
        for b in _representative_bindings(machine, fol):
            try:
                us = fol.semantics(ctx, b)
                r_next = advance_context(ctx, us, machine.engine)
            except Exception:
                continue
            for rule in machine.applicable_rules(r_next):
                try:
                    plan = rule.agent(r_next, rng)
                    out.append(attach_agent_state(r_next, plan.state))
                except Exception:
                    continue
    return out
