"""The built-in transaction machine: agent rules, user followups, and the
template grammar they share.

The machine is instantiated over a schema set; all domain-specific surface
comes from the schema phrase annotations and the database value lexicon.
Thresholds: more than MANY results ask or propose a refinement, 2..MANY
recommend a short list, exactly 1 recommend it outright.
"""

from __future__ import annotations

import random

from .engine import Database, Engine, distinct_values
from .machine import AgentPlan, Followup, MachineSpec, Policy, Rule
from .schema import DomainSchema, schema_map
from .states import (
    ACCEPTED, DONTCARE, PROPOSED, ActionStatement, AgentState, Context,
    FilterAtom, Int, QueryStatement, Statement, UserState, Value, eq,
    merge_action, merge_query,
)
from .templates import Bindings, Grammar, Lit, Production, Ref, Slot

MANY = 5

COUNT_SLOT = "@count"


# ---------------------------------------------------------------------------
# grammar construction

def _parts(pattern: str, refs: dict) -> tuple:
    """Compile "i want a @val @dom" into literal runs and placeholder parts."""
    parts: list = []
    buf: list[str] = []
    for tok in pattern.split():
        if tok.startswith("@"):
            if buf:
                parts.append(Lit.of(" ".join(buf)))
                buf = []
            parts.append(refs[tok[1:]])
        else:
            buf.append(tok)
    if buf:
        parts.append(Lit.of(" ".join(buf)))
    return tuple(parts)


def _phrase_parts(phrase: str, slot: Slot) -> tuple:
    """Schema phrases mark the value insertion point with '#'."""
    parts: list = []
    for i, chunk in enumerate(phrase.split("#")):
        if i:
            parts.append(slot)
        chunk = chunk.strip()
        if chunk:
            parts.append(Lit.of(chunk))
    return tuple(parts)


USER_TURN = "user_turn"
AGENT_TURN = "agent_turn"

_STATIC_USER = {
    "u_greet": ["hello", "hi", "hi there", "good morning"],
    "u_accept": ["yes", "yes please", "sure", "sounds good", "go ahead",
                 "yes , that works"],
    "u_reject": ["no", "no thank you", "no thanks", "not right now"],
    "u_ask_recommend": ["which one do you recommend ?", "what do you suggest ?",
                        "can you recommend one ?", "no , what else do you have ?"],
    "u_answer_dontcare": ["i do not mind", "no preference", "i do not care",
                          "anything is fine", "it does not matter"],
    "u_insist": ["are you sure ? please check again", "please try again",
                 "can you look one more time ?"],
    "u_cancel": ["never mind", "forget it", "cancel that",
                 "let us forget about it"],
    "u_end": ["that is all , thank you", "goodbye", "bye", "that will be all"],
    "u_thanks": ["thank you so much", "thanks a lot", "great , thank you"],
}

_STATIC_AGENT = {
    "a_init": ["hello , how can i help you today ?", "hi ! what can i do for you ?"],
    "a_greet": ["hi there ! what are you looking for ?", "hello ! how can i help ?"],
    "a_action_success": ["all done ! your booking is confirmed .",
                         "great , that worked . you are all set ."],
    "a_learn_more": ["would you like to know anything else about it ?",
                     "can i tell you more about it ?"],
    "a_anything_else": ["is there anything else i can help you with ?",
                        "anything else today ?"],
    "a_cancel_ack": ["okay , no problem . anything else i can do ?",
                     "sure , cancelled . can i help with something else ?"],
    "a_clarify": ["i am sorry , i did not quite catch that . could you rephrase ?",
                  "sorry , i did not understand . could you say that differently ?"],
}


def build_grammar(schemas: list[DomainSchema]) -> Grammar:
    g = Grammar()

    def add(lhs, pattern, refs=None, tag=None, sem=None):
        g.add(Production(lhs, _parts(pattern, refs or {}), tag=tag, sem=sem))

    for tag, texts in _STATIC_USER.items():
        for t in texts:
            add(USER_TURN, t, tag=tag)
    for tag, texts in _STATIC_AGENT.items():
        for t in texts:
            add(AGENT_TURN, t, tag=tag)

    # columns that exist in exactly one domain can be named without the domain
    col_domains: dict[str, set[str]] = {}
    for dom in schemas:
        for col in dom.table.columns:
            col_domains.setdefault(col.name, set()).add(dom.name)

    for dom in schemas:
        d = dom.name
        key = dom.table.entity_key
        dom_nt = f"dom__{d}"
        for ph in dom.table.phrases:
            g.add(Production(dom_nt, (Lit.of(ph),), sem=("domain", d)))
        name_slot = Slot(d, key)

        for col in dom.table.columns:
            c = col.name
            noun_nt, vp_nt = f"noun__{d}__{c}", f"vp__{d}__{c}"
            for ph in col.phrases:
                if "#" in ph:
                    g.add(Production(vp_nt, _phrase_parts(ph, Slot(d, c)),
                                     sem=("column", d, c)))
                else:
                    g.add(Production(noun_nt, (Lit.of(ph),), sem=("column", d, c)))

        for action in dom.actions:
            a = action.name
            actp_nt = f"actp__{d}__{a}"
            for ph in action.phrases:
                g.add(Production(actp_nt, (Lit.of(ph),), sem=("action", d, a)))
            for p in action.params:
                pnoun_nt = f"noun__{d}__{p.name}"
                for ph in p.phrases:
                    if "#" in ph:
                        g.add(Production(f"pvp__{d}__{p.name}",
                                         _phrase_parts(ph, Slot(d, p.name)),
                                         sem=("column", d, p.name)))
                    else:
                        g.add(Production(pnoun_nt, (Lit.of(ph),),
                                         sem=("column", d, p.name)))

        # ---- user templates over this domain
        for col in dom.filterable_columns():
            c = col.name
            val = Slot(d, c)
            has_noun = any("#" not in p for p in col.phrases)
            if col.kind == "integer" and has_noun:
                refs = {"val": val, "dom": Ref(dom_nt), "noun": Ref(f"noun__{d}__{c}")}
                add(USER_TURN, "i am looking for a @dom with @val @noun", refs,
                    tag="u_new_query")
                add(USER_TURN, "i want a @dom with @val @noun", refs, tag="u_new_query")
                add(USER_TURN, "i also need a @dom with @val @noun", refs, tag="u_switch")
                add(USER_TURN, "with at least @val @noun", refs,
                    tag="u_refine_add", sem=("op", ">="))
                add(USER_TURN, "with more than @val @noun", refs,
                    tag="u_refine_add", sem=("op", ">"))
            elif c != key:
                refs = {"val": val, "dom": Ref(dom_nt)}
                add(USER_TURN, "i am looking for a @val @dom", refs, tag="u_new_query")
                add(USER_TURN, "i want a @val @dom", refs, tag="u_new_query")
                add(USER_TURN, "find me a @val @dom", refs, tag="u_new_query")
                add(USER_TURN, "i also need a @val @dom", refs, tag="u_switch")
                add(USER_TURN, "can you also find me a @val @dom", refs, tag="u_switch")
                if col_domains[c] == {d} and has_noun:
                    nrefs = {"val": val, "noun": Ref(f"noun__{d}__{c}")}
                    add(USER_TURN, "i am looking for @val @noun", nrefs, tag="u_new_query")
                    add(USER_TURN, "i want @val @noun", nrefs, tag="u_new_query")
            vrefs = {"val": val}
            add(USER_TURN, "i would like @val", vrefs, tag="u_refine_add")
            add(USER_TURN, "i would prefer @val", vrefs, tag="u_refine_add")
            add(USER_TURN, "something @val would be good", vrefs, tag="u_refine_add")
            add(USER_TURN, "anything but @val", vrefs, tag="u_refine_add", sem=("op", "!="))
            add(USER_TURN, "how about @val instead", vrefs, tag="u_change_slot")
            add(USER_TURN, "let us try @val instead", vrefs, tag="u_change_slot")
            add(USER_TURN, "change it to @val", vrefs, tag="u_change_slot")
            add(USER_TURN, "@val", vrefs, tag="u_answer_slot")
            add(USER_TURN, "@val please", vrefs, tag="u_answer_slot")
            add(USER_TURN, "@val would be great", vrefs, tag="u_answer_slot")
            add(USER_TURN, "either @val or @val2", {"val": val, "val2": val},
                tag="u_answer_slot")
        for col in dom.table.columns:
            c = col.name
            if any("#" in p for p in col.phrases):
                vp = {"vp": Ref(f"vp__{d}__{c}")}
                add(USER_TURN, "i am looking for a @dom that @vp",
                    {"vp": Ref(f"vp__{d}__{c}"), "dom": Ref(dom_nt)}, tag="u_new_query")
                add(USER_TURN, "one that @vp", vp, tag="u_refine_add")
        add(USER_TURN, "i am looking for a @dom", {"dom": Ref(dom_nt)}, tag="u_new_query_bare")
        add(USER_TURN, "i need a @dom", {"dom": Ref(dom_nt)}, tag="u_new_query_bare")
        add(USER_TURN, "can you find me a @dom", {"dom": Ref(dom_nt)}, tag="u_new_query_bare")
        add(USER_TURN, "i am also looking for a @dom", {"dom": Ref(dom_nt)}, tag="u_switch")

        for col in dom.requestable_columns():
            c = col.name
            if not any("#" not in p for p in col.phrases):
                continue
            refs = {"noun": Ref(f"noun__{d}__{c}"), "name": name_slot}
            add(USER_TURN, "what is the @noun ?", refs, tag="u_ask_attr")
            add(USER_TURN, "can i get the @noun ?", refs, tag="u_ask_attr")
            add(USER_TURN, "what is their @noun ?", refs, tag="u_ask_attr")
            add(USER_TURN, "what is the @noun of @name ?", refs, tag="u_ask_attr")

        for action in dom.actions:
            a = action.name
            refs = {"actp": Ref(f"actp__{d}__{a}")}
            add(USER_TURN, "can you @actp for me ?", refs, tag="u_request_action")
            add(USER_TURN, "please @actp", refs, tag="u_request_action")
            add(USER_TURN, "could you @actp ?", refs, tag="u_request_action")
            add(USER_TURN, "sure , i like that , can i @actp", refs, tag="u_accept_action")
            add(USER_TURN, "yes , please @actp", refs, tag="u_accept_action")
            for p in action.params:
                val = Slot(d, p.name)
                vrefs = {"val": val}
                add(USER_TURN, "@val", vrefs, tag="u_answer_param")
                add(USER_TURN, "@val please", vrefs, tag="u_answer_param")
                if p.kind == "time_of_day":
                    add(USER_TURN, "at @val", vrefs, tag="u_answer_param")
                if p.kind == "day_of_week":
                    add(USER_TURN, "on @val", vrefs, tag="u_answer_param")
                if any("#" in ph for ph in p.phrases):
                    pv = {"pvp": Ref(f"pvp__{d}__{p.name}")}
                    add(USER_TURN, "@pvp", pv, tag="u_answer_param")
                    add(USER_TURN, "@pvp please", pv, tag="u_answer_param")
                    add(USER_TURN, "@pvp instead", pv, tag="u_change_param")
                add(USER_TURN, "make it @val", vrefs, tag="u_change_param")
                add(USER_TURN, "change it to @val", vrefs, tag="u_change_param")
                add(USER_TURN, "how about @val instead", vrefs, tag="u_change_param")
                if any("#" not in ph for ph in p.phrases):
                    nrefs = {"val": val, "noun": Ref(f"noun__{d}__{p.name}")}
                    add(USER_TURN, "change the @noun to @val", nrefs, tag="u_change_param")

        # ---- agent templates over this domain
        for col in dom.filterable_columns():
            c = col.name
            if not any("#" not in p for p in col.phrases):
                continue
            refs = {"noun": Ref(f"noun__{d}__{c}"), "val": Slot(d, c)}
            add(AGENT_TURN, "do you have a specific @noun in mind ?", refs,
                tag="a_search_question")
            add(AGENT_TURN, "is there a particular @noun you would prefer ?", refs,
                tag="a_search_question")
            add(AGENT_TURN, "there are quite a few options . how about @val for the @noun ?",
                refs, tag="a_propose_refined")
            add(AGENT_TURN, "i found several choices . shall i narrow it down to @val ?",
                refs, tag="a_propose_refined")
            add(AGENT_TURN,
                "i am sorry , i could not find anything like that . "
                "would you like to try a different @noun ?", refs, tag="a_empty_search")
            add(AGENT_TURN, "no results , i am afraid . maybe change the @noun ?", refs,
                tag="a_empty_search")
            add(AGENT_TURN, "no luck . shall i search with any @noun ?", refs,
                tag="a_propose_relax")
            add(AGENT_TURN, "nothing matches . want me to ignore the @noun ?", refs,
                tag="a_propose_relax")

        count_slot = Slot(d, COUNT_SLOT)
        for col in dom.table.columns:
            c = col.name
            if not any("#" in p for p in col.phrases):
                continue
            refs = {"name": name_slot, "vp": Ref(f"vp__{d}__{c}")}
            add(AGENT_TURN, "how about @name ? it @vp .", refs, tag="a_recommend_one")
            add(AGENT_TURN, "@name is a great choice . it @vp .", refs,
                tag="a_recommend_one")
            mrefs = {"name": name_slot, "vp": Ref(f"vp__{d}__{c}"), "count": count_slot}
            add(AGENT_TURN, "i found @count options . @name is a nice one , it @vp .",
                mrefs, tag="a_recommend_many")
            for action in dom.actions:
                arefs = dict(refs, actp=Ref(f"actp__{d}__{action.name}"))
                add(AGENT_TURN, "how about @name ? it @vp . would you like me to @actp ?",
                    arefs, tag="a_recommend_one")
        add(AGENT_TURN, "there are @count matches . @name is a popular one .",
            {"count": count_slot, "name": name_slot}, tag="a_recommend_many")

        for col in dom.requestable_columns():
            c = col.name
            if not any("#" not in p for p in col.phrases):
                continue
            refs = {"noun": Ref(f"noun__{d}__{c}"), "name": name_slot, "val": Slot(d, c)}
            add(AGENT_TURN, "the @noun of @name is @val .", refs, tag="a_answer_attr")
            add(AGENT_TURN, "@name 's @noun is @val .", refs, tag="a_answer_attr")

        for action in dom.actions:
            a = action.name
            refs = {"actp": Ref(f"actp__{d}__{a}"), "name": name_slot}
            add(AGENT_TURN, "just to confirm : shall i @actp for @name ?", refs,
                tag="a_confirm")
            add(AGENT_TURN, "so i should @actp for @name , correct ?", refs,
                tag="a_confirm")
            for p in action.params:
                if not any("#" not in ph for ph in p.phrases):
                    continue
                prefs = {"noun": Ref(f"noun__{d}__{p.name}")}
                add(AGENT_TURN, "what @noun would you like ?", prefs, tag="a_slot_fill")
                add(AGENT_TURN, "sure . what @noun should i use ?", prefs, tag="a_slot_fill")
                add(AGENT_TURN,
                    "i am sorry , that did not go through . "
                    "could you try a different @noun ?", prefs, tag="a_action_error")
                add(AGENT_TURN, "the booking failed . would another @noun work ?", prefs,
                    tag="a_action_error")

    g.validate()
    return g


# ---------------------------------------------------------------------------
# context helpers

def _fresh_query(ctx: Context) -> Statement | None:
    if ctx.active and (ctx.active, "query") in ctx.fresh:
        return ctx.query_of(ctx.active)
    return None


def _fresh_action(ctx: Context) -> Statement | None:
    if ctx.active and (ctx.active, "action") in ctx.fresh:
        return ctx.action_of(ctx.active)
    return None


def _incomplete_carryover(ctx: Context, engine: Engine) -> Statement | None:
    for s in ctx.carryover:
        if isinstance(s.body, ActionStatement) and not engine.complete(s.body):
            return s
    return None


def _complete_carryover(ctx: Context, engine: Engine) -> Statement | None:
    for s in ctx.carryover:
        if isinstance(s.body, ActionStatement) and engine.complete(s.body):
            return s
    return None


def _has_noun(dom: DomainSchema, slot: str) -> bool:
    col = dom.table.column(slot)
    if col is not None:
        return any("#" not in p for p in col.phrases)
    for action in dom.actions:
        p = action.param(slot)
        if p is not None:
            return any("#" not in ph for ph in p.phrases)
    return False


def _open_slots(dom: DomainSchema, q: QueryStatement) -> list[str]:
    """Filterable columns the query has not addressed (dontcare counts as
    addressed); the entity key never gets asked."""
    addressed = set(q.addressed_slots())
    return [c.name for c in dom.filterable_columns()
            if c.name not in addressed and c.name != dom.table.entity_key
            and any("#" not in p for p in c.phrases)]


def _entity_of(ctx: Context, dom: DomainSchema) -> Value | None:
    """The entity currently in focus: the proposal's, else the first result's."""
    key = dom.table.entity_key
    if ctx.proposed is not None and ctx.proposed.domain == dom.name:
        body = ctx.proposed.body
        if isinstance(body, ActionStatement):
            for p_name, v in body.params:
                spec = None
                for action in dom.actions:
                    spec = action.param(p_name) or spec
                if spec is not None and spec.links == key:
                    return v
    q = ctx.query_of(dom.name)
    if q is not None and q.result.first is not None:
        return q.result.first.get(key)
    a = ctx.action_of(dom.name)
    if a is not None and isinstance(a.body, ActionStatement):
        ent = a.body.param(_entity_param_name(dom))
        if ent is not None:
            return ent
    return None


def _entity_param_name(dom: DomainSchema) -> str:
    for action in dom.actions:
        p = action.entity_param()
        if p is not None:
            return p.name
    return dom.table.entity_key


def _vp_bindings(dom: DomainSchema, row) -> dict:
    """Bind every column mentionable through a '#' phrase to the row's value,
    so any recommend/answer template is expandable."""
    out = {}
    for col in dom.table.columns:
        v = row.get(col.name)
        if v is not None:
            out[(dom.name, col.name)] = v
    return out


# ---------------------------------------------------------------------------
# user followup semantics

def _group_atoms(b: Bindings, domain: str) -> list[FilterAtom]:
    grouped: dict[str, list[Value]] = {}
    for d, slot, v in b.values:
        if d == domain and slot != COUNT_SLOT:
            grouped.setdefault(slot, []).append(v)
    op = b.op or "="
    return [FilterAtom(slot, op, tuple(vs)) for slot, vs in sorted(grouped.items())]


class _Builtin:
    def __init__(self, schemas: list[DomainSchema], db: Database):
        self.schemas = schemas
        self.smap = schema_map(schemas)
        self.db = db
        self.engine = Engine(schemas, db)

    # -- semantics -----------------------------------------------------------

    def sem_query(self, ctx: Context, b: Bindings) -> UserState:
        d = b.main_domain or ctx.active
        if d is None:
            return UserState("Exec")
        dom = self.smap[d]
        atoms = _group_atoms(b, d)
        base = ctx.query_of(d)
        merged = merge_query(base.body if base else None,
                             QueryStatement(d, tuple(atoms)), dom.table.entity_key)
        return UserState("Exec", (Statement(merged, ACCEPTED),))

    def sem_dontcare(self, d: str, slot: str):
        def sem(ctx: Context, b: Bindings) -> UserState:
            dom = self.smap[d]
            if dom.table.column(slot) is not None:
                base = ctx.query_of(d)
                merged = merge_query(base.body if base else None,
                                     QueryStatement(d, (eq(slot, DONTCARE),)),
                                     dom.table.entity_key)
                return UserState("Exec", (Statement(merged, ACCEPTED),))
            # a dontcare on an action parameter keeps the action pending
            return self._merged_action(ctx, d, {slot: DONTCARE})
        return sem

    def _merged_action(self, ctx: Context, d: str, params: dict) -> UserState:
        dom = self.smap[d]
        action = dom.actions[0] if dom.actions else None
        base = ctx.carryover_of(d)
        base_body = None
        if base is not None and isinstance(base.body, ActionStatement):
            base_body = base.body
        else:
            prior = ctx.action_of(d)
            if prior is not None:
                base_body = prior.body
        name = base_body.action if base_body is not None else (action.name if action else None)
        if name is None:
            return UserState("Exec")
        merged = merge_action(base_body, ActionStatement(d, name, tuple(params.items())),
                              dom.table.entity_key)
        return UserState("Exec", (Statement(merged, ACCEPTED),))

    def sem_param(self, d: str):
        def sem(ctx: Context, b: Bindings) -> UserState:
            params = {slot: v for dd, slot, v in b.values if dd == d}
            if not params:
                return UserState("Exec")
            return self._merged_action(ctx, d, params)
        return sem

    def sem_accept(self, ctx: Context, b: Bindings) -> UserState:
        if ctx.proposed is None:
            return UserState("Exec")
        return UserState("Exec", (Statement(ctx.proposed.body, ACCEPTED),))

    def sem_reject(self, ctx: Context, b: Bindings) -> UserState:
        return UserState("Exec")

    def sem_ask_recommend(self, ctx: Context, b: Bindings) -> UserState:
        return UserState("AskRecommend")

    def sem_ask_attr(self, d: str):
        def sem(ctx: Context, b: Bindings) -> UserState:
            dom = self.smap[d]
            cols = [c for dd, c in b.columns if dd == d]
            requested = frozenset(cols[:1]) if cols else frozenset()
            key = dom.table.entity_key
            name = b.value_map().get((d, key)) or _entity_of(ctx, dom)
            if name is not None:
                body = QueryStatement(d, (eq(key, name),), requested)
            else:
                base = ctx.query_of(d)
                atoms = base.body.filter if base else ()
                body = QueryStatement(d, atoms, requested)
            return UserState("Exec", (Statement(body, ACCEPTED),))
        return sem

    def sem_request_action(self, d: str, action_name: str):
        def sem(ctx: Context, b: Bindings) -> UserState:
            dom = self.smap[d]
            action = dom.action(action_name)
            ent = action.entity_param()
            params = {}
            name = _entity_of(ctx, dom)
            if ent is not None and name is not None:
                params[ent.name] = name
            base = ctx.action_of(d)
            merged = merge_action(base.body if base else None,
                                  ActionStatement(d, action_name, tuple(params.items())),
                                  dom.table.entity_key)
            return UserState("Exec", (Statement(merged, ACCEPTED),))
        return sem

    def sem_insist(self, stmt_body):
        def sem(ctx: Context, b: Bindings) -> UserState:
            return UserState("Insist", (Statement(stmt_body, ACCEPTED),))
        return sem

    @staticmethod
    def sem_act(act: str):
        def sem(ctx: Context, b: Bindings) -> UserState:
            return UserState(act)
        return sem

    # -- followup enumeration --------------------------------------------------

    def followups(self, ctx: Context) -> list[Followup]:
        out: list[Followup] = []
        act = ctx.last_act
        if act == "Invalid":
            act = self._effective_act(ctx)

        def add(name, tag, domain=None, semantics=None, constraint=None,
                bindings=None, exclude=None):
            out.append(Followup(name=name, tag=tag, domain=domain,
                                semantics=semantics or self.sem_query,
                                constraint=constraint or {},
                                bindings=bindings or {}, exclude=exclude or {}))

        def add_new_queries(tag_switch=False):
            for dom in self.schemas:
                d = dom.name
                if tag_switch and d == ctx.active:
                    continue
                tag = "u_switch" if tag_switch else "u_new_query"
                add(f"{tag}:{d}", tag, d, self.sem_query, {"domain": d})
                if not tag_switch:
                    add(f"u_new_query_bare:{d}", "u_new_query_bare", d,
                        self.sem_query, {"domain": d})

        def add_refines(d: str):
            dom = self.smap[d]
            q = ctx.query_of(d)
            if q is None:
                return
            open_slots = _open_slots(dom, q.body)
            if open_slots:
                add(f"u_refine_add:{d}", "u_refine_add", d, self.sem_query,
                    {"domain": d})
            for c in q.body.constrained_slots():
                if c == dom.table.entity_key:
                    continue
                cur = q.body.atom_for(c)
                add(f"u_change_slot:{d}.{c}", "u_change_slot", d, self.sem_query,
                    {"domain": d, "slot": (d, c)},
                    exclude={(d, c): {v.key for v in cur.values}})

        def add_proposal_moves():
            if ctx.proposed is None:
                return
            d = ctx.proposed.domain
            add(f"u_accept:{d}", "u_accept", d, self.sem_accept, {"domain": d})
            if isinstance(ctx.proposed.body, ActionStatement):
                add(f"u_accept_action:{d}", "u_accept_action", d, self.sem_accept,
                    {"domain": d, "action": (d, ctx.proposed.body.action)})
            add(f"u_reject:{d}", "u_reject", d, self.sem_reject)

        def add_entity_moves(d: str):
            dom = self.smap[d]
            if _entity_of(ctx, dom) is None:
                return
            add(f"u_ask_attr:{d}", "u_ask_attr", d, self.sem_ask_attr(d),
                {"domain": d})
            for action in dom.actions:
                add(f"u_request_action:{d}.{action.name}", "u_request_action", d,
                    self.sem_request_action(d, action.name),
                    {"domain": d, "action": (d, action.name)})

        def add_param_answers(d: str, params: list[str], exclude_current=False):
            dom = self.smap[d]
            base = ctx.carryover_of(d) or ctx.action_of(d)
            for p in params:
                excl = {}
                if exclude_current and base is not None \
                        and isinstance(base.body, ActionStatement):
                    cur = base.body.param(p)
                    if cur is not None:
                        excl = {(d, p): {cur.key}}
                tag = "u_change_param" if exclude_current else "u_answer_param"
                gen = None
                if exclude_current and _has_noun(dom, p):
                    # several params may share a value kind; synthesized change
                    # requests always name the param so the turn stays unambiguous
                    gen = {"domain": d, "slot": (d, p), "column": (d, p)}
                out.append(Followup(
                    name=f"{tag}:{d}.{p}", tag=tag, domain=d,
                    semantics=self.sem_param(d),
                    constraint={"domain": d, "slot": (d, p)},
                    exclude=excl, gen_constraint=gen))

        def add_cancel():
            add("u_cancel", "u_cancel", None, self.sem_act("Cancel"))

        add("u_end", "u_end", None, self.sem_act("End"))

        if act == "Init":
            add("u_greet", "u_greet", None, self.sem_act("Greet"))
            add_new_queries()
        elif act in ("Greet", "AnythingElse"):
            add_new_queries()
            if ctx.active:
                add_refines(ctx.active)
        elif act == "SearchQuestion":
            for d, c in sorted(ctx.requested):
                dom = self.smap[d]
                if dom.table.column(c) is not None:
                    add(f"u_answer_slot:{d}.{c}", "u_answer_slot", d, self.sem_query,
                        {"domain": d, "slot": (d, c)})
                    add(f"u_answer_dontcare:{d}.{c}", "u_answer_dontcare", d,
                        self.sem_dontcare(d, c))
            if ctx.active:
                add_refines(ctx.active)
            add("u_ask_recommend", "u_ask_recommend", ctx.active, self.sem_ask_recommend)
            add_new_queries(tag_switch=True)
            add_cancel()
        elif act == "SlotFill":
            for d, p in sorted(ctx.requested):
                add_param_answers(d, [p])
                dom = self.smap[d]
                spec = None
                for action in dom.actions:
                    spec = action.param(p) or spec
                if spec is not None and not spec.required:
                    add(f"u_answer_dontcare:{d}.{p}", "u_answer_dontcare", d,
                        self.sem_dontcare(d, p))
            if ctx.active:
                add_refines(ctx.active)
            add_cancel()
        elif act in ("RecommendOne", "RecommendMany"):
            add_proposal_moves()
            d = ctx.active
            if d:
                add_entity_moves(d)
                add_refines(d)
            add("u_ask_recommend", "u_ask_recommend", d, self.sem_ask_recommend)
            add_new_queries(tag_switch=True)
        elif act in ("Propose", "ProposeRefinedQuery"):
            add_proposal_moves()
            if ctx.active:
                add_refines(ctx.active)
            add("u_ask_recommend", "u_ask_recommend", ctx.active, self.sem_ask_recommend)
            add_new_queries(tag_switch=True)
            add_cancel()
        elif act == "Confirm":
            add_proposal_moves()
            if ctx.proposed is not None and isinstance(ctx.proposed.body, ActionStatement):
                d = ctx.proposed.domain
                dom = self.smap[d]
                action = dom.action(ctx.proposed.body.action)
                params = [p.name for p in action.params if p.links is None]
                add_param_answers(d, params, exclude_current=True)
            add_cancel()
            add_new_queries(tag_switch=True)
        elif act == "EmptySearch":
            for d, c in sorted(ctx.suggest):
                dom = self.smap[d]
                if dom.table.column(c) is None:
                    continue
                q = ctx.query_of(d)
                excl = {}
                if q is not None:
                    cur = q.body.atom_for(c)
                    if cur is not None:
                        excl = {(d, c): {v.key for v in cur.values}}
                add(f"u_change_slot:{d}.{c}", "u_change_slot", d, self.sem_query,
                    {"domain": d, "slot": (d, c)}, exclude=excl)
                add(f"u_answer_dontcare:{d}.{c}", "u_answer_dontcare", d,
                    self.sem_dontcare(d, c))
            q = ctx.query_of(ctx.active) if ctx.active else None
            if q is not None:
                add(f"u_insist:{ctx.active}", "u_insist", ctx.active,
                    self.sem_insist(q.body))
            add_new_queries(tag_switch=True)
            add_cancel()
        elif act == "ActionError":
            for d, p in sorted(ctx.suggest):
                add_param_answers(d, [p], exclude_current=True)
            a = ctx.action_of(ctx.active) if ctx.active else None
            if a is not None:
                add(f"u_insist:{ctx.active}", "u_insist", ctx.active,
                    self.sem_insist(a.body))
            add_cancel()
            add_new_queries(tag_switch=True)
        elif act == "ActionSuccess":
            add("u_thanks", "u_thanks", None, self.sem_act("Greet"))
            if ctx.active:
                add_entity_moves(ctx.active)
            add_new_queries(tag_switch=True)
        elif act == "LearnMoreWhat":
            if ctx.active:
                add_entity_moves(ctx.active)
                add_refines(ctx.active)
            add_new_queries(tag_switch=True)
        else:
            add_new_queries()
        return out

    def _effective_act(self, ctx: Context) -> str:
        """Best reading of a context whose last turn was unparseable: the
        agent's standing question or proposal still governs the reply."""
        if ctx.requested:
            d, s = sorted(ctx.requested)[0]
            dom = self.smap.get(d)
            if dom is not None and dom.table.column(s) is None:
                return "SlotFill"
            return "SearchQuestion"
        if ctx.proposed is not None:
            if isinstance(ctx.proposed.body, ActionStatement):
                if self.engine.complete(ctx.proposed.body):
                    return "Confirm"
                return "RecommendOne"
            return "Propose"
        if ctx.suggest:
            d, s = sorted(ctx.suggest)[0]
            dom = self.smap.get(d)
            if dom is not None and dom.table.column(s) is None:
                return "ActionError"
            return "EmptySearch"
        return "AnythingElse"

    # -- agent rules -----------------------------------------------------------

    def rules(self) -> list[Rule]:
        R: list[Rule] = []
        smap = self.smap

        def rule(name, act, doc, applicable, agent, followups):
            R.append(Rule(name, act, doc, applicable, agent, tuple(followups)))

        rule(
            "init", "Init", "dialogue start (null context)",
            lambda ctx: ctx.is_start,
            lambda ctx, rng: AgentPlan(AgentState("Init"), "a_init"),
            ["u_greet", "u_new_query", "u_new_query_bare", "u_end"],
        )

        rule(
            "greet", "Greet", "user greeted and no transaction is underway",
            lambda ctx: ctx.last_act == "Greet" and not ctx.actions,
            lambda ctx, rng: AgentPlan(AgentState("Greet"), "a_greet"),
            ["u_new_query", "u_new_query_bare", "u_refine_add", "u_change_slot",
             "u_end"],
        )

        rule(
            "anything_else", "AnythingElse",
            "user closed out a finished task (thanks after a booking, or a no-op turn)",
            self._anything_else_applicable,
            lambda ctx, rng: AgentPlan(AgentState("AnythingElse"), "a_anything_else"),
            ["u_new_query", "u_new_query_bare", "u_switch", "u_refine_add",
             "u_change_slot", "u_end"],
        )

        rule(
            "cancel_ack", "AnythingElse", "user cancelled the pending task",
            lambda ctx: ctx.last_act == "Cancel",
            lambda ctx, rng: AgentPlan(AgentState("AnythingElse"), "a_cancel_ack"),
            ["u_new_query", "u_new_query_bare", "u_switch", "u_end"],
        )

        def action_error_applicable(ctx):
            a = _fresh_action(ctx)
            return a is not None and a.result.error is not None

        def action_error_agent(ctx, rng):
            a = _fresh_action(ctx)
            d = ctx.active
            dom = smap[d]
            p = a.result.error_param
            if p is None or dom.slot_kind(p) is None or not _has_noun(dom, p):
                choices = sorted(pp.name for act_ in dom.actions
                                 for pp in act_.params
                                 if pp.links is None and _has_noun(dom, pp.name))
                p = choices[0]
            return AgentPlan(AgentState("ActionError", suggest=frozenset({(d, p)})),
                             "a_action_error", constraint={"domain": d, "column": (d, p)})

        rule(
            "action_error", "ActionError", "the action just executed and failed",
            action_error_applicable, action_error_agent,
            ["u_change_param", "u_insist", "u_cancel", "u_switch", "u_end"],
        )

        rule(
            "action_success", "ActionSuccess", "the action just executed successfully",
            lambda ctx: (a := _fresh_action(ctx)) is not None and a.result.error is None,
            lambda ctx, rng: AgentPlan(AgentState("ActionSuccess"), "a_action_success"),
            ["u_thanks", "u_ask_attr", "u_request_action", "u_switch", "u_end"],
        )

        def confirm_applicable(ctx):
            return _complete_carryover(ctx, self.engine) is not None

        def confirm_agent(ctx, rng):
            stmt = _complete_carryover(ctx, self.engine)
            d = stmt.domain
            dom = smap[d]
            body = stmt.body
            key = dom.table.entity_key
            ent = None
            for action in dom.actions:
                p = action.entity_param()
                if p is not None:
                    ent = body.param(p.name)
            bindings = {(d, key): ent} if ent is not None else {}
            return AgentPlan(AgentState("Confirm", proposed=Statement(body, PROPOSED)),
                             "a_confirm", bindings=bindings,
                             constraint={"domain": d, "action": (d, body.action)})

        rule(
            "confirm", "Confirm", "a pending action has all required parameters",
            confirm_applicable, confirm_agent,
            ["u_accept", "u_accept_action", "u_reject", "u_change_param",
             "u_cancel", "u_switch", "u_end"],
        )

        def slot_fill_applicable(ctx):
            return _incomplete_carryover(ctx, self.engine) is not None

        def slot_fill_agent(ctx, rng):
            stmt = _incomplete_carryover(ctx, self.engine)
            d = stmt.domain
            dom = smap[d]
            action = dom.action(stmt.body.action)
            missing = sorted(
                p.name for p in action.required_params()
                if stmt.body.param(p.name) is None and p.links is None)
            if not missing:
                missing = sorted(p.name for p in action.required_params()
                                 if stmt.body.param(p.name) is None)
            p = missing[0]
            return AgentPlan(AgentState("SlotFill", requested=frozenset({(d, p)})),
                             "a_slot_fill", constraint={"domain": d, "column": (d, p)})

        rule(
            "slot_fill", "SlotFill", "a pending action is missing required parameters",
            slot_fill_applicable, slot_fill_agent,
            ["u_answer_param", "u_answer_dontcare", "u_refine_add", "u_change_slot",
             "u_cancel", "u_end"],
        )

        def answer_attr_applicable(ctx):
            q = _fresh_query(ctx)
            return q is not None and q.body.requested and q.result.count >= 1

        def answer_attr_agent(ctx, rng):
            q = _fresh_query(ctx)
            d = ctx.active
            dom = smap[d]
            col = sorted(q.body.requested)[0]
            row = q.result.first
            bindings = _vp_bindings(dom, row)
            proposed = self._proposal_for(dom, row)
            return AgentPlan(
                AgentState("RecommendOne", proposed=proposed), "a_answer_attr",
                bindings=bindings, constraint={"domain": d, "column": (d, col)})

        rule(
            "answer_attr", "RecommendOne", "the user asked for an attribute of a result",
            answer_attr_applicable, answer_attr_agent,
            ["u_ask_attr", "u_request_action", "u_accept", "u_accept_action",
             "u_reject", "u_refine_add", "u_switch", "u_end"],
        )

        def empty_search_applicable(ctx):
            q = _fresh_query(ctx)
            return (q is not None and q.result.count == 0
                    and bool(q.body.constrained_slots()))

        def _suggest_slot(ctx):
            q = _fresh_query(ctx)
            dom = smap[ctx.active]
            slots = [c for c in q.body.constrained_slots() if _has_noun(dom, c)]
            if slots:
                return slots[0]
            return _open_slots(dom, QueryStatement(ctx.active))[0]

        def empty_search_agent(ctx, rng):
            d = ctx.active
            c = _suggest_slot(ctx)
            return AgentPlan(AgentState("EmptySearch", suggest=frozenset({(d, c)})),
                             "a_empty_search", constraint={"domain": d, "column": (d, c)})

        rule(
            "empty_search", "EmptySearch", "the query just ran and found nothing",
            empty_search_applicable, empty_search_agent,
            ["u_change_slot", "u_answer_dontcare", "u_insist", "u_switch",
             "u_cancel", "u_end"],
        )

        def propose_relax_agent(ctx, rng):
            d = ctx.active
            dom = smap[d]
            c = _suggest_slot(ctx)
            q = _fresh_query(ctx)
            relaxed = merge_query(q.body, QueryStatement(d, (eq(c, DONTCARE),)),
                                  dom.table.entity_key)
            return AgentPlan(
                AgentState("Propose", proposed=Statement(relaxed, PROPOSED)),
                "a_propose_relax", constraint={"domain": d, "column": (d, c)})

        rule(
            "propose_relax", "Propose",
            "the query found nothing; offer to drop a constraint",
            empty_search_applicable, propose_relax_agent,
            ["u_accept", "u_reject", "u_change_slot", "u_refine_add",
             "u_ask_recommend", "u_switch", "u_cancel", "u_end"],
        )

        def recommend_one_applicable(ctx):
            q = _fresh_query(ctx)
            if q is not None and q.result.count == 1 and not q.body.requested:
                return True
            if ctx.last_act == "AskRecommend" and ctx.active:
                qq = ctx.query_of(ctx.active)
                return qq is not None and qq.result.count >= 1
            return False

        def recommend_one_agent(ctx, rng):
            d = ctx.active
            dom = smap[d]
            q = ctx.query_of(d)
            row = q.result.first
            proposed = self._proposal_for(dom, row)
            return AgentPlan(AgentState("RecommendOne", proposed=proposed),
                             "a_recommend_one", bindings=_vp_bindings(dom, row),
                             constraint={"domain": d})

        rule(
            "recommend_one", "RecommendOne",
            "exactly one match (or the user asked for a recommendation)",
            recommend_one_applicable, recommend_one_agent,
            ["u_accept", "u_accept_action", "u_reject", "u_ask_attr",
             "u_request_action", "u_ask_recommend", "u_refine_add", "u_change_slot",
             "u_switch", "u_end"],
        )

        def recommend_many_applicable(ctx):
            q = _fresh_query(ctx)
            return (q is not None and 2 <= q.result.count <= MANY
                    and not q.body.requested)

        def recommend_many_agent(ctx, rng):
            d = ctx.active
            dom = smap[d]
            q = ctx.query_of(d)
            row = q.result.first
            bindings = _vp_bindings(dom, row)
            bindings[(d, COUNT_SLOT)] = Int(q.result.count)
            proposed = self._proposal_for(dom, row)
            return AgentPlan(AgentState("RecommendMany", proposed=proposed),
                             "a_recommend_many", bindings=bindings,
                             constraint={"domain": d})

        rule(
            "recommend_many", "RecommendMany", f"a handful of matches (2..{MANY})",
            recommend_many_applicable, recommend_many_agent,
            ["u_accept", "u_accept_action", "u_reject", "u_ask_attr",
             "u_request_action", "u_ask_recommend", "u_refine_add", "u_change_slot",
             "u_switch", "u_end"],
        )

        def search_question_applicable(ctx):
            q = _fresh_query(ctx)
            if q is None or q.body.requested or q.result.count <= MANY:
                return False
            return bool(_open_slots(smap[ctx.active], q.body))

        def search_question_agent(ctx, rng):
            d = ctx.active
            q = _fresh_query(ctx)
            c = _open_slots(smap[d], q.body)[0]
            return AgentPlan(AgentState("SearchQuestion", requested=frozenset({(d, c)})),
                             "a_search_question", constraint={"domain": d, "column": (d, c)})

        rule(
            "search_question", "SearchQuestion",
            f"more than {MANY} matches and an unconstrained slot to ask about",
            search_question_applicable, search_question_agent,
            ["u_answer_slot", "u_answer_dontcare", "u_refine_add", "u_change_slot",
             "u_ask_recommend", "u_switch", "u_cancel", "u_end"],
        )

        def propose_refined_agent(ctx, rng):
            d = ctx.active
            dom = smap[d]
            q = _fresh_query(ctx)
            open_slots = _open_slots(dom, q.body)
            c = open_slots[rng.randrange(len(open_slots))]
            values = distinct_values(self.db, d, c)
            v = values[rng.randrange(len(values))]
            refined = merge_query(q.body, QueryStatement(d, (eq(c, v),)),
                                  dom.table.entity_key)
            return AgentPlan(
                AgentState("ProposeRefinedQuery", proposed=Statement(refined, PROPOSED)),
                "a_propose_refined", bindings={(d, c): v},
                constraint={"domain": d, "column": (d, c)})

        rule(
            "propose_refined_query", "ProposeRefinedQuery",
            f"more than {MANY} matches; propose a concrete extra filter",
            search_question_applicable, propose_refined_agent,
            ["u_accept", "u_reject", "u_change_slot", "u_refine_add",
             "u_ask_recommend", "u_switch", "u_cancel", "u_end"],
        )

        def learn_more_applicable(ctx):
            if ctx.last_act != "Exec" or ctx.fresh or ctx.carryover:
                return False
            if not ctx.active:
                return False
            q = ctx.query_of(ctx.active)
            return q is not None and q.result.count >= 1

        rule(
            "learn_more_what", "LearnMoreWhat",
            "the user declined the offer; invite attribute questions",
            learn_more_applicable,
            lambda ctx, rng: AgentPlan(AgentState("LearnMoreWhat"), "a_learn_more"),
            ["u_ask_attr", "u_request_action", "u_refine_add", "u_change_slot",
             "u_switch", "u_end"],
        )

        return R

    def _proposal_for(self, dom: DomainSchema, row) -> Statement | None:
        if not dom.actions:
            return None
        action = dom.actions[0]
        ent = action.entity_param()
        if ent is None:
            return None
        name = row.get(dom.table.entity_key)
        body = ActionStatement(dom.name, action.name, ((ent.name, name),))
        return Statement(body, PROPOSED)

    def _anything_else_applicable(self, ctx: Context) -> bool:
        if ctx.last_act == "Greet" and ctx.actions:
            return True
        if ctx.last_act == "Exec" and not ctx.fresh and not ctx.carryover:
            if not ctx.active:
                return True
            q = ctx.query_of(ctx.active)
            return q is None or q.result.count == 0
        return False


DEFAULT_POLICY = Policy((
    "init", "cancel_ack", "action_error", "action_success", "confirm", "slot_fill",
    "answer_attr", "empty_search", "propose_relax", "recommend_one", "recommend_many",
    "search_question", "propose_refined_query", "learn_more_what", "anything_else",
    "greet",
))


def builtin_transaction_machine(schemas: list[DomainSchema], db: Database,
                                grammar: Grammar | None = None) -> MachineSpec:
    """Instantiate the domain-independent transaction machine over a schema
    set.  Fails at build time if a domain cannot support the search flow."""
    if not schemas:
        raise ValueError("at least one domain schema is required")
    for dom in schemas:
        askable = [c for c in dom.filterable_columns()
                   if c.name != dom.table.entity_key
                   and any("#" not in p for p in c.phrases)]
        if not askable:
            raise ValueError(
                f"domain {dom.name!r} has no filterable slots to ask about")
    if grammar is None:
        grammar = build_grammar(schemas)
    b = _Builtin(schemas, db)
    return MachineSpec(b.rules(), grammar, b.engine, b.followups)
