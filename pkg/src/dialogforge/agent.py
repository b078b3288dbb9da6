"""Execution-time dialogue loop: sessions stepping through the
parse -> execute -> select-agent cycle, plus a scripted user simulator used
for liveness testing.

A session owns its generator and executor; the machine, grammar and
database are shared immutably across sessions."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .builtin import DEFAULT_POLICY, build_grammar, builtin_transaction_machine
from .engine import Database, Engine, load_database
from .linearize import (DelinearizeError, delinearize_user, linearize_agent,
                        linearize_context, linearize_user)
from .machine import MachineSpec, Policy, make_sampler, select_agent
from .parser import GrammarParser
from .schema import load_schemas
from .states import (AgentState, Context, DialogueTurn, UserState,
                     advance_context, attach_agent_state)
from .templates import Grammar, ValueMatcher, expand, load_templates

GOODBYE = "goodbye ! have a great day ."


class Stack(NamedTuple):
    schemas: list
    db: Database
    grammar: Grammar
    matcher: ValueMatcher
    machine: MachineSpec
    policy: Policy


def build_stack(schemas_path, db_path, templates_path=None) -> Stack:
    schemas = load_schemas(schemas_path)
    db = load_database(db_path, schemas)
    grammar = build_grammar(schemas)
    if templates_path:
        for prod in load_templates(templates_path):
            grammar.add(prod)
        grammar.validate()
    matcher = ValueMatcher(schemas, db)
    machine = builtin_transaction_machine(schemas, db, grammar)
    return Stack(schemas, db, grammar, matcher, machine, DEFAULT_POLICY)


@dataclass
class StepResult:
    reply: str
    agent_state: str
    user_state: str
    context: str
    ended: bool
    invalid_count: int = 0


class SessionEnded(RuntimeError):
    pass


class Session:
    def __init__(self, stack: Stack, seed: int, confirm_actions: bool = False,
                 external_parser: Callable[[str, str], str] | None = None):
        self.stack = stack
        self.seed = seed
        self.rng = random.Random(seed)
        self.engine = Engine(stack.schemas, stack.db, rng=self.rng)
        self.parser = GrammarParser(stack.machine, stack.grammar, stack.matcher,
                                    stack.schemas)
        self.external_parser = external_parser
        self.confirm_actions = confirm_actions
        self.history: list[DialogueTurn] = []
        self.status = "active"
        self.invalid_count = 0
        r = Context()
        astate, utterance, _ = select_agent(stack.machine, stack.policy, r, self.rng)
        self.greeting = utterance
        self._r = r
        self._astate = astate
        self.ctx_user = attach_agent_state(r, astate)

    @property
    def ended(self) -> bool:
        return self.status == "ended"

    def agent_state_text(self) -> str:
        return linearize_agent(self._astate)

    def _parse(self, utterance: str) -> UserState:
        if self.external_parser is not None:
            try:
                target = self.external_parser(linearize_context(self.ctx_user), utterance)
                return delinearize_user(target, self.stack.schemas)
            except (DelinearizeError, ValueError, RuntimeError):
                return UserState("Invalid")
        us, _ = self.parser.parse_state(self.ctx_user, utterance)
        return us

    def step(self, utterance: str) -> StepResult:
        if self.ended:
            raise SessionEnded("this session has ended")
        us = self._parse(utterance)
        r_next = advance_context(self.ctx_user, us, self.engine,
                                 confirm_actions=self.confirm_actions)
        self.history.append(DialogueTurn(self._r, self._astate, us, r_next))
        if us.act == "Invalid":
            self.invalid_count += 1
            reply, _ = expand(self.stack.grammar, "a_clarify", self.rng)
            # the standing question or proposal is re-asked unchanged
            astate = self._astate
            self._r = r_next
            self.ctx_user = attach_agent_state(r_next, astate)
            return StepResult(reply, linearize_agent(astate), linearize_user(us),
                              linearize_context(self.ctx_user), False,
                              self.invalid_count)
        if us.act == "End":
            self.status = "ended"
            self._r = r_next
            self.ctx_user = r_next
            return StepResult(GOODBYE, "", linearize_user(us),
                              linearize_context(r_next), True, self.invalid_count)
        astate, reply, _ = select_agent(self.stack.machine, self.stack.policy,
                                        r_next, self.rng)
        self._r = r_next
        self._astate = astate
        self.ctx_user = attach_agent_state(r_next, astate)
        return StepResult(reply, linearize_agent(astate), linearize_user(us),
                          linearize_context(self.ctx_user), False, self.invalid_count)

    def state_text(self) -> str:
        return linearize_context(self.ctx_user)


# ---------------------------------------------------------------------------
# scripted user simulator

@dataclass
class EpisodeStats:
    turns: int
    ended: bool
    accepted_action: bool
    action_success: bool
    invalid_turns: int


_SIM_WEIGHTS = {
    "u_answer_param": 6.0, "u_answer_slot": 4.0, "u_accept": 3.0,
    "u_accept_action": 1.0, "u_request_action": 1.5,
    "u_cancel": 0.2, "u_insist": 0.5, "u_greet": 0.5, "u_thanks": 1.0,
}


def _pick_weighted(items: list[tuple[str, float]], rng: random.Random) -> int:
    total = sum(w for _, w in items)
    x = rng.random() * total
    for i, (_, w) in enumerate(items):
        x -= w
        if x <= 0:
            return i
    return len(items) - 1


def simulate_episode(stack: Stack, seed: int, max_turns: int = 16,
                     confirm_actions: bool = False) -> EpisodeStats:
    """Drive a session with followups sampled from the machine itself,
    phrased through the grammar, so the full parse/execute/reply loop runs."""
    session = Session(stack, seed, confirm_actions=confirm_actions)
    rng = random.Random(seed + 7919)
    accepted_action = False
    success = False
    for _ in range(max_turns):
        ctx = session.ctx_user
        followups = stack.machine.followups(ctx)
        if not followups:
            break
        succeeded_already = any(
            s.result.error is None for _, s in ctx.actions)
        # a cooperative user: answer the agent's question, approve the
        # confirmation, otherwise explore
        fol = None
        answers = [f for f in followups if f.tag == "u_answer_param"]
        if answers:
            fol = answers[0]
        elif ctx.last_act == "Confirm":
            accepts = [f for f in followups if f.tag == "u_accept"]
            fol = accepts[0] if accepts else None
        if fol is None:
            weighted = []
            for f in followups:
                w = _SIM_WEIGHTS.get(f.tag, 1.0)
                if f.tag == "u_end":
                    w = 2.0 if succeeded_already else 0.2
                weighted.append((f.tag, w))
            fol = followups[_pick_weighted(weighted, rng)]
        sampler = make_sampler(stack.machine.engine, fol.exclude)
        utterance, _ = expand(stack.grammar, fol.tag, rng, bindings=fol.bindings,
                              sampler=sampler, constraint=fol.expand_constraint)
        if fol.tag in ("u_accept", "u_accept_action") and ctx.proposed is not None \
                and not ctx.proposed.is_query:
            accepted_action = True
        result = session.step(utterance)
        if "ActionSuccess:" in result.agent_state:
            success = True
        if result.ended:
            break
    ended = session.ended or len(session.history) >= max_turns
    if not success:
        success = any(s.result.error is None for _, s in session.ctx_user.actions)
    return EpisodeStats(turns=len(session.history), ended=ended,
                        accepted_action=accepted_action, action_success=success,
                        invalid_turns=session.invalid_count)
