"""Transition rules, the rule-based policy, and single-turn stepping.

A rule pairs an applicability predicate over the result state with a
semantic function that builds the concrete agent state plus the template
bindings needed to phrase it.  User followups are enumerated from the
user-facing context, so parse-time admissibility and synthesis see the
same inventory.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from .engine import Engine
from .states import AgentState, Context, UserState, Value
from .templates import Bindings, Grammar, expand


@dataclass(frozen=True)
class AgentPlan:
    state: AgentState
    tag: str
    bindings: dict = field(default_factory=dict, hash=False)
    constraint: dict = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class Followup:
    """One expected user move: a template tag plus the semantic function that
    turns its bindings into a user state.  gen_constraint, when set, narrows
    the productions synthesis may expand (e.g. to unambiguous phrasings)
    while parsing still admits everything constraint allows."""
    name: str
    tag: str
    domain: str | None
    semantics: Callable[[Context, Bindings], UserState]
    constraint: dict = field(default_factory=dict, hash=False)
    bindings: dict = field(default_factory=dict, hash=False)
    exclude: dict = field(default_factory=dict, hash=False)
    gen_constraint: dict | None = field(default=None, hash=False)

    @property
    def expand_constraint(self) -> dict:
        return self.gen_constraint if self.gen_constraint is not None else self.constraint


@dataclass(frozen=True)
class Rule:
    name: str
    act: str
    doc: str
    applicable: Callable[[Context], bool]
    agent: Callable[[Context, random.Random], AgentPlan]
    followup_names: tuple[str, ...]


@dataclass(frozen=True)
class Policy:
    order: tuple[str, ...]


class MachineSpec:
    """The rule inventory plus the shared grammar/engine handles needed to
    phrase agent turns.  Immutable after build."""

    def __init__(self, rules: list[Rule], grammar: Grammar, engine: Engine,
                 enumerate_followups: Callable[[Context], list[Followup]]):
        self.rules = list(rules)
        self.grammar = grammar
        self.engine = engine
        self._enumerate = enumerate_followups
        names = [r.name for r in self.rules]
        if len(names) != len(set(names)):
            raise ValueError("duplicate rule names")
        starters = [r.name for r in self.rules
                    if r.applicable(Context())]
        if len(starters) != 1:
            raise ValueError(f"exactly one rule must handle the start state, got {starters}")

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def applicable_rules(self, ctx: Context) -> list[Rule]:
        if ctx.last_act == "End":
            return []
        return [r for r in self.rules if r.applicable(ctx)]

    def followups(self, ctx: Context) -> list[Followup]:
        if ctx.last_act == "End":
            return []
        return self._enumerate(ctx)

    def counts(self) -> dict[str, int]:
        return {
            "agent_rules": len(self.rules),
            "user_followups": sum(len(r.followup_names) for r in self.rules),
            "distinct_user_tags": len({n for r in self.rules for n in r.followup_names}),
        }

    def describe(self) -> str:
        lines = []
        c = self.counts()
        lines.append(f"transaction machine: {c['agent_rules']} agent rules, "
                     f"{c['user_followups']} user followups "
                     f"({c['distinct_user_tags']} distinct)")
        for r in self.rules:
            lines.append(f"  {r.name} [{r.act}]")
            lines.append(f"    when: {r.doc}")
            lines.append(f"    user: {', '.join(r.followup_names)}")
        return "\n".join(lines)


def make_sampler(engine: Engine, exclude: dict | None = None):
    """Value sampler for template expansion; exclude maps (domain, slot) to a
    set of value keys that should not come up (e.g. the value being changed)."""
    exclude = exclude or {}

    def sampler(domain: str, slot: str, rng: random.Random) -> Value:
        banned = exclude.get((domain, slot))
        if not banned:
            return engine.sample_value(domain, slot, rng)
        for _ in range(16):
            v = engine.sample_value(domain, slot, rng)
            if v.key not in banned:
                return v
        return v

    return sampler


FALLBACK_UTTERANCES = ("is there anything else i can help you with ?",)


def select_agent(machine: MachineSpec, policy: Policy, ctx: Context,
                 rng: random.Random) -> tuple[AgentState, str, Rule | None]:
    """Live policy: first applicable rule in policy order wins.  When nothing
    applies the agent falls back to a generic anything-else turn."""
    if ctx.last_act == "End":
        raise ValueError("the end state has no outgoing transitions")
    applicable = {r.name for r in machine.applicable_rules(ctx)}
    for name in policy.order:
        if name in applicable:
            rule = machine.rule(name)
            plan = rule.agent(ctx, rng)
            utterance, _ = expand(machine.grammar, plan.tag, rng,
                                  bindings=plan.bindings, constraint=plan.constraint)
            return plan.state, utterance, rule
    return AgentState("AnythingElse"), FALLBACK_UTTERANCES[0], None


def sample_agent(machine: MachineSpec, ctx: Context,
                 rng: random.Random) -> tuple[AgentState, str, Rule]:
    """Synthesis-time choice: sample uniformly among the applicable rules so
    every transition gets coverage."""
    rules = machine.applicable_rules(ctx)
    if not rules:
        rule = None
        return AgentState("AnythingElse"), FALLBACK_UTTERANCES[0], rule
    rule = rules[rng.randrange(len(rules))]
    plan = rule.agent(ctx, rng)
    utterance, _ = expand(machine.grammar, plan.tag, rng,
                          bindings=plan.bindings, constraint=plan.constraint)
    return plan.state, utterance, rule


def enumerate_user_transitions(machine: MachineSpec, ctx: Context,
                               astate: AgentState | None = None) -> list[Followup]:
    """All user followups whose preconditions hold in the user-facing context.
    astate, when given, must match what the context already embeds."""
    if astate is not None and astate.act != ctx.last_act:
        raise ValueError("agent state does not match the context")
    return machine.followups(ctx)


def explore_reachability(machine: MachineSpec, max_depth: int = 8,
                         confirm_actions: bool = True) -> dict[str, int]:
    """Breadth-first walk over abstract contexts: every (rule, followup,
    representative binding) branch is taken, action execution forks into a
    success and a failure outcome, and contexts deduplicate on their abstract
    shape.  Returns the first depth (agent turn number) each rule fired at."""
    from .engine import Engine, distinct_values
    from .evaluation import abstract_context, abstract_user
    from .states import Context, advance_context, attach_agent_state
    from .templates import Bindings

    engine = machine.engine
    ok_engine = Engine(engine.schemas, engine.db)
    fail_rng = random.Random(0)
    fail_engine = Engine(engine.schemas, engine.db, rng=fail_rng, simulate=True,
                         p_fail=1.0)

    rep_cache: dict[tuple, list] = {}

    def rep_values(domain: str, slot: str, base_atoms) -> list:
        """One value per result-count bucket for a column; a fixed menu pick
        for a bare action parameter."""
        from .states import FilterAtom, QueryStatement
        key = (domain, slot, base_atoms)
        if key in rep_cache:
            return rep_cache[key]
        dom = engine.smap[domain]
        col = dom.table.column(slot)
        if col is None:
            out = [engine.sample_value(domain, slot, random.Random(0))]
            rep_cache[key] = out
            return out
        buckets = {}
        for v in distinct_values(engine.db, domain, slot):
            atoms = [a for a in base_atoms if a.slot != slot]
            atoms.append(FilterAtom(slot, "=", (v,)))
            res = ok_engine.run(QueryStatement(domain, tuple(atoms)))
            b = min(res.count, 2) if res.count <= 1 else (2 if res.count <= 5 else 3)
            if b not in buckets:
                buckets[b] = v
        out = [buckets[k] for k in sorted(buckets)]
        rep_cache[key] = out
        return out

    def followup_bindings(ctx, fol) -> list[Bindings]:
        cons = fol.constraint
        base_atoms = ()
        if fol.domain:
            q = ctx.query_of(fol.domain)
            if q is not None:
                base_atoms = q.body.filter
        if "slot" in cons:
            d, s = cons["slot"]
            return [Bindings(values=((d, s, v),)) for v in rep_values(d, s, base_atoms)]
        out = [Bindings()]
        if fol.tag in ("u_new_query", "u_refine_add", "u_switch") and fol.domain:
            d = fol.domain
            dom = engine.smap[d]
            out = []
            for col in dom.filterable_columns():
                for v in rep_values(d, col.name, base_atoms):
                    out.append(Bindings(values=((d, col.name, v),), domain=d))
            out.append(Bindings(domain=d))
        elif fol.tag == "u_ask_attr" and fol.domain:
            d = fol.domain
            dom = engine.smap[d]
            cols = dom.requestable_columns()
            out = [Bindings(columns=((d, cols[0].name),), domain=d)] if cols else [Bindings()]
        return out

    first_seen: dict[str, int] = {}
    seen_shapes: set[str] = set()
    frontier: list[Context] = [Context()]
    all_rules = len(machine.rules)
    for depth in range(1, max_depth + 1):
        next_frontier: list[Context] = []
        for ctx in frontier:
            for rule in machine.applicable_rules(ctx):
                first_seen.setdefault(rule.name, depth)
                if len(first_seen) == all_rules:
                    return first_seen
                plan = rule.agent(ctx, random.Random(0))
                ctx_user = attach_agent_state(ctx, plan.state)
                for fol in machine.followups(ctx_user):
                    for b in followup_bindings(ctx_user, fol):
                        try:
                            us = fol.semantics(ctx_user, b)
                        except Exception:
                            continue
                        engines = [ok_engine]
                        if any(not s.is_query for s in us.statements):
                            engines.append(fail_engine)
                        for eng in engines:
                            try:
                                r2 = advance_context(ctx_user, us, eng,
                                                     confirm_actions=confirm_actions)
                            except Exception:
                                continue
                            shape = abstract_context(r2)
                            if shape not in seen_shapes:
                                seen_shapes.add(shape)
                                next_frontier.append(r2)
        frontier = next_frontier
        if not frontier:
            break
    return first_seen


def match_followup(followups: list[Followup], deriv, grammar: Grammar) -> Followup | None:
    """Resolve a parsed derivation to the followup instance that interprets
    it: same tag, production compatible with the instance's constraint, and
    a domain that does not contradict the bindings."""
    from .templates import constraint_ok

    b = deriv.bindings()
    dom = b.main_domain
    fallback = None
    for f in followups:
        if f.tag != (deriv.tag or ""):
            continue
        if not constraint_ok(grammar, deriv.production, f.constraint):
            continue
        if f.domain is None or dom is None or f.domain == dom:
            return f
        if fallback is None:
            fallback = f
    return fallback


def admissible_checker(followups: list[Followup], grammar: Grammar):
    return lambda deriv: match_followup(followups, deriv, grammar) is not None
