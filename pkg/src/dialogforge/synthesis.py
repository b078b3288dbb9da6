"""Working-set dialogue synthesis.

A fixed-size pool of partial dialogues grows one turn per sweep: sample an
applicable agent rule, phrase it, sample a user followup, phrase it, compute
both formal states, then advance the context with simulated execution.
Completed dialogues (End, or the turn cap) are emitted and replaced, until
the requested number has been produced.  Everything is deterministic under
the seed: each dialogue owns a generator derived by hashing (seed, serial).
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .engine import Database, Engine
from .linearize import (delinearize_agent, delinearize_context, linearize_agent,
                        linearize_context, linearize_user)
from .machine import AgentPlan, MachineSpec, make_sampler
from .states import AgentState, Context, advance_context, attach_agent_state
from .templates import Grammar, expand

DEFAULT_WORKING_SET = 100
DEFAULT_MAX_TURNS = 8


@dataclass(frozen=True)
class SynthConfig:
    num_dialogues: int
    seed: int
    working_set_size: int = DEFAULT_WORKING_SET
    max_turns: int = DEFAULT_MAX_TURNS
    p_fail: float = 0.1
    # confirmation turns are synthesized so parsers see them in training;
    # the live agent keeps confirmation off by default
    confirm_actions: bool = True
    # followups are sampled by transition type; answering and accepting are
    # upweighted so transactions complete at a usable rate, and raising the
    # temperature flattens the weights back toward uniform
    transition_temperature: float = 1.0

    def __post_init__(self):
        if self.num_dialogues <= 0 or self.working_set_size <= 0 or self.max_turns <= 0:
            raise ValueError("num_dialogues, working_set_size and max_turns must be positive")
        if self.transition_temperature <= 0:
            raise ValueError("transition_temperature must be positive")


_COOPERATIVE_TAGS = {"u_answer_param": 3.0, "u_answer_slot": 2.0,
                     "u_accept": 2.0, "u_accept_action": 2.0}


@dataclass
class TurnRecord:
    turn: int
    context: str
    agent_act: str
    agent_utterance: str
    agent_state: str
    user_utterance: str
    user_state: str
    next_context: str
    agent_rule: str
    user_followup: str

    def to_dict(self) -> dict:
        return {
            "turn": self.turn, "context": self.context, "agent_act": self.agent_act,
            "agent_utterance": self.agent_utterance, "agent_state": self.agent_state,
            "user_utterance": self.user_utterance, "user_state": self.user_state,
            "next_context": self.next_context, "agent_rule": self.agent_rule,
            "user_followup": self.user_followup,
        }


@dataclass
class DialogueRecord:
    dialogue_id: str
    turns: list[TurnRecord]

    def to_dict(self) -> dict:
        return {"dialogue_id": self.dialogue_id, "turns": [t.to_dict() for t in self.turns]}


def derive_rng(seed: int, dialogue_serial: int) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{dialogue_serial}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _sample_followup(followups, rng: random.Random, temperature: float):
    """Uniform over transition types (tags), then uniform over the concrete
    instances of the chosen type."""
    groups: dict[str, list] = {}
    for f in followups:
        groups.setdefault(f.tag, []).append(f)
    tags = sorted(groups)
    weights = [_COOPERATIVE_TAGS.get(t, 1.0) ** (1.0 / temperature) for t in tags]
    total = sum(weights)
    x = rng.random() * total
    for tag, w in zip(tags, weights):
        x -= w
        if x <= 0:
            break
    group = groups[tag]
    return group[rng.randrange(len(group))]


class _Partial:
    __slots__ = ("dialogue_id", "rng", "engine", "ctx", "turns", "done")

    def __init__(self, dialogue_id: str, rng: random.Random, engine: Engine):
        self.dialogue_id = dialogue_id
        self.rng = rng
        self.engine = engine
        self.ctx = Context()
        self.turns: list[TurnRecord] = []
        self.done = False


def synthesize(machine: MachineSpec, grammar: Grammar, db: Database,
               cfg: SynthConfig) -> Iterator[DialogueRecord]:
    schemas = machine.engine.schemas

    def fresh(serial: int) -> _Partial:
        rng = derive_rng(cfg.seed, serial)
        engine = Engine(schemas, db, rng=rng, simulate=True, p_fail=cfg.p_fail)
        return _Partial(f"{cfg.seed}-{serial:06d}", rng, engine)

    def step(d: _Partial) -> None:
        r = d.ctx
        if r.last_act == "End":
            d.done = True
            return
        rules = machine.applicable_rules(r)
        if rules:
            rule = rules[d.rng.randrange(len(rules))]
            rule_name = rule.name
            plan = rule.agent(r, d.rng)
        else:
            # never fail hard: fall back to a generic anything-else turn
            rule_name = "fallback_anything_else"
            plan = AgentPlan(AgentState("AnythingElse"), "a_anything_else")
        agent_utt, _ = expand(grammar, plan.tag, d.rng, bindings=plan.bindings,
                              constraint=plan.constraint)
        ctx_user = attach_agent_state(r, plan.state)
        followups = machine.followups(ctx_user)
        fol = _sample_followup(followups, d.rng, cfg.transition_temperature)
        sampler = make_sampler(machine.engine, fol.exclude)
        try:
            user_utt, deriv = expand(grammar, fol.tag, d.rng, bindings=fol.bindings,
                                     sampler=sampler,
                                     constraint=fol.expand_constraint)
        except Exception as e:
            raise RuntimeError(
                f"rule {rule_name!r} followup {fol.name!r} is unexpandable: {e}") from e
        us = fol.semantics(ctx_user, deriv.bindings())
        r_next = advance_context(ctx_user, us, d.engine,
                                 confirm_actions=cfg.confirm_actions)
        d.turns.append(TurnRecord(
            turn=len(d.turns),
            context=linearize_context(r),
            agent_act=plan.state.act,
            agent_utterance=agent_utt,
            agent_state=linearize_agent(plan.state),
            user_utterance=user_utt,
            user_state=linearize_user(us),
            next_context=linearize_context(r_next),
            agent_rule=rule_name,
            user_followup=fol.name,
        ))
        d.ctx = r_next
        if us.act == "End" or len(d.turns) >= cfg.max_turns:
            d.done = True

    working = [fresh(i) for i in range(cfg.working_set_size)]
    next_serial = cfg.working_set_size
    emitted = 0
    while emitted < cfg.num_dialogues:
        for i in range(len(working)):
            if emitted >= cfg.num_dialogues:
                break
            d = working[i]
            step(d)
            if d.done:
                yield DialogueRecord(d.dialogue_id, d.turns)
                emitted += 1
                working[i] = fresh(next_serial)
                next_serial += 1


# ---------------------------------------------------------------------------
# training-set emission

def training_lines(record: DialogueRecord, schemas) -> tuple[list[dict], list[dict]]:
    """One user line and one agent line per turn.  The user parser's context
    is the agent-facing context with the agent state attached; the agent
    parser sees the agent-facing context directly."""
    user_lines, agent_lines = [], []
    for t in record.turns:
        ctx = delinearize_context(t.context, schemas)
        astate = delinearize_agent(t.agent_state, schemas)
        user_ctx = linearize_context(attach_agent_state(ctx, astate))
        user_lines.append({
            "id": record.dialogue_id, "turn": t.turn, "context": user_ctx,
            "utterance": t.user_utterance, "target": t.user_state,
        })
        agent_lines.append({
            "id": record.dialogue_id, "turn": t.turn, "context": t.context,
            "utterance": t.agent_utterance, "target": t.agent_state,
        })
    return user_lines, agent_lines


def dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_corpus(records: Iterator[DialogueRecord], out_dir: str | Path, schemas,
                 ) -> dict[str, int]:
    """Write dialogues.jsonl, user.jsonl and agent.jsonl; returns counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"dialogues": 0, "turns": 0}
    with open(out / "dialogues.jsonl", "w", encoding="utf-8") as fd, \
         open(out / "user.jsonl", "w", encoding="utf-8") as fu, \
         open(out / "agent.jsonl", "w", encoding="utf-8") as fa:
        for rec in records:
            fd.write(dump_line(rec.to_dict()) + "\n")
            user_lines, agent_lines = training_lines(rec, schemas)
            for line in user_lines:
                fu.write(dump_line(line) + "\n")
            for line in agent_lines:
                fa.write(dump_line(line) + "\n")
            counts["dialogues"] += 1
            counts["turns"] += len(rec.turns)
    return counts


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_dialogues(path: str | Path) -> Iterator[DialogueRecord]:
    for obj in read_jsonl(path):
        turns = [TurnRecord(**t) for t in obj["turns"]]
        yield DialogueRecord(obj["dialogue_id"], turns)
