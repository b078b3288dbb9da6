"""Template grammar shared by synthesis (expansion) and understanding
(inversion via chart parsing).

Productions mix literal token runs, references to other nonterminals, and
value slots.  Value slots are leaves: during expansion they are filled from
bindings or sampled from the database, and during parsing they are matched
against the value lexicon (longest match, case insensitive).
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .engine import Database, distinct_values
from .schema import DomainSchema, schema_map
from .states import DAYS, DAY_WORDS, Day, Int, Str, Time, Value

USER_TURN = "user_turn"
AGENT_TURN = "agent_turn"

_TOKEN_RE = re.compile(r"[a-z0-9:']+|[^\sa-z0-9:']", re.IGNORECASE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation; times like 18:00 stay
    one token."""
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Lit:
    tokens: tuple[str, ...]

    @staticmethod
    def of(text: str) -> "Lit":
        return Lit(tuple(_TOKEN_RE.findall(text)))

    @property
    def lower(self) -> tuple[str, ...]:
        return tuple(t.lower() for t in self.tokens)


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Slot:
    domain: str
    slot: str


Part = Lit | Ref | Slot


@dataclass(frozen=True)
class Production:
    lhs: str
    parts: tuple[Part, ...]
    tag: str | None = None
    # semantic marker recorded into bindings, e.g. ("column", dom, col),
    # ("action", dom, action), ("domain", dom)
    sem: tuple | None = None


@dataclass(frozen=True)
class Bindings:
    values: tuple[tuple[str, str, Value], ...] = ()
    columns: tuple[tuple[str, str], ...] = ()
    action: tuple[str, str] | None = None
    domain: str | None = None
    op: str | None = None

    def merge(self, other: "Bindings") -> "Bindings":
        return Bindings(
            values=self.values + other.values,
            columns=self.columns + other.columns,
            action=self.action or other.action,
            domain=self.domain or other.domain,
            op=self.op or other.op,
        )

    def value_map(self) -> dict[tuple[str, str], Value]:
        return {(d, s): v for d, s, v in self.values}

    @property
    def main_domain(self) -> str | None:
        if self.domain:
            return self.domain
        if self.values:
            return self.values[0][0]
        if self.action:
            return self.action[0]
        if self.columns:
            return self.columns[0][0]
        return None

    def sort_key(self):
        return (
            self.domain or "",
            tuple((d, s, v.key) for d, s, v in self.values),
            self.columns,
            self.action or ("", ""),
            self.op or "",
        )


@dataclass(frozen=True)
class Derivation:
    production: Production
    children: tuple = ()  # per part: Lit -> None, Slot -> Value, Ref -> Derivation

    def tokens(self) -> list[str]:
        out: list[str] = []
        for part, child in zip(self.production.parts, self.children):
            if isinstance(part, Lit):
                out.extend(part.tokens)
            elif isinstance(part, Slot):
                out.extend(child.tokens())
            else:
                out.extend(child.tokens())
        return out

    def bindings(self) -> Bindings:
        b = Bindings()
        if self.production.sem is not None:
            kind, *payload = self.production.sem
            if kind == "column":
                b = b.merge(Bindings(columns=(tuple(payload),)))
            elif kind == "action":
                b = b.merge(Bindings(action=tuple(payload)))
            elif kind == "domain":
                b = b.merge(Bindings(domain=payload[0]))
            elif kind == "op":
                b = b.merge(Bindings(op=payload[0]))
        for part, child in zip(self.production.parts, self.children):
            if isinstance(part, Slot):
                b = b.merge(Bindings(values=((part.domain, part.slot, child),)))
            elif isinstance(part, Ref):
                b = b.merge(child.bindings())
        return b

    @property
    def tag(self) -> str | None:
        return self.production.tag

    def size(self) -> int:
        n = 1
        for part, child in zip(self.production.parts, self.children):
            if isinstance(part, Ref):
                n += child.size()
        return n


class Grammar:
    def __init__(self):
        self.productions: dict[str, list[Production]] = {}
        self._by_tag: dict[str, list[Production]] = {}
        self._signature: dict[int, tuple] = {}

    def add(self, prod: Production) -> None:
        if prod in self.productions.get(prod.lhs, []):
            return
        self.productions.setdefault(prod.lhs, []).append(prod)
        if prod.tag is not None:
            self._by_tag.setdefault(prod.tag, []).append(prod)

    def by_tag(self, tag: str) -> list[Production]:
        return self._by_tag.get(tag, [])

    def tags(self) -> list[str]:
        return sorted(self._by_tag)

    def validate(self) -> None:
        for lhs, prods in self.productions.items():
            for p in prods:
                for part in p.parts:
                    if isinstance(part, Ref) and part.name not in self.productions:
                        raise GrammarError(f"{lhs}: undefined nonterminal {part.name!r}")
        # no recursion: expansion must terminate
        state: dict[str, int] = {}

        def visit(nt: str):
            if state.get(nt) == 1:
                raise GrammarError(f"grammar cycle through {nt!r}")
            if state.get(nt) == 2:
                return
            state[nt] = 1
            for p in self.productions.get(nt, []):
                for part in p.parts:
                    if isinstance(part, Ref):
                        visit(part.name)
            state[nt] = 2

        for nt in list(self.productions):
            visit(nt)

    def signature(self, prod: Production) -> tuple:
        """(domains, columns, slots, actions) referenced anywhere under prod."""
        key = id(prod)
        if key in self._signature:
            return self._signature[key]
        domains: set[str] = set()
        columns: set[tuple[str, str]] = set()
        slots: set[tuple[str, str]] = set()
        actions: set[tuple[str, str]] = set()

        def walk(p: Production):
            if p.sem is not None:
                kind, *payload = p.sem
                if kind == "column":
                    columns.add(tuple(payload))
                    domains.add(payload[0])
                elif kind == "action":
                    actions.add(tuple(payload))
                    domains.add(payload[0])
                elif kind == "domain":
                    domains.add(payload[0])
            for part in p.parts:
                if isinstance(part, Slot):
                    slots.add((part.domain, part.slot))
                    domains.add(part.domain)
                elif isinstance(part, Ref):
                    for sub in self.productions.get(part.name, []):
                        walk(sub)

        walk(prod)
        sig = (frozenset(domains), frozenset(columns), frozenset(slots), frozenset(actions))
        self._signature[key] = sig
        return sig


def load_templates(path: str | Path) -> list[Production]:
    """User-extensible template file: a JSON list of productions, each
    {"nonterminal": ..., "parts": [literal | {"nt": name} | {"val": "dom.slot"}],
     "tag": optional}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = [data]
    out = []
    for i, obj in enumerate(data):
        parts: list[Part] = []
        for part in obj.get("parts", []):
            if isinstance(part, str):
                parts.append(Lit.of(part))
            elif "nt" in part:
                parts.append(Ref(part["nt"]))
            elif "val" in part:
                dom, _, slot = part["val"].partition(".")
                parts.append(Slot(dom, slot))
            else:
                raise GrammarError(f"templates[{i}]: bad part {part!r}")
        out.append(Production(obj["nonterminal"], tuple(parts), tag=obj.get("tag")))
    return out


# ---------------------------------------------------------------------------
# value lexicon

_TIME_RE = re.compile(r"^([01]?\d|2[0-3]):([0-5]\d)$")
_INT_WORDS = {"one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
              "seven": 7, "eight": 8, "nine": 9, "ten": 10}


class ValueMatcher:
    """Maps token spans to values for a (domain, slot) pair: database values
    for columns, kind patterns for action parameters."""

    def __init__(self, schemas: list[DomainSchema], db: Database):
        self.smap = schema_map(schemas)
        self._index: dict[tuple[str, str], dict[tuple[str, ...], Value]] = {}
        self.max_span = 1
        for dom in schemas:
            for col in dom.table.columns:
                entries: dict[tuple[str, ...], Value] = {}
                for v in distinct_values(db, dom.name, col.name):
                    toks = tuple(t.lower() for t in v.tokens())
                    entries[toks] = v
                    self.max_span = max(self.max_span, len(toks))
                self._index[(dom.name, col.name)] = entries

    def match(self, domain: str, slot: str, tokens: tuple[str, ...]) -> Value | None:
        dom = self.smap.get(domain)
        if dom is None:
            return None
        if dom.table.column(slot) is not None:
            # column values come from the database index only
            return self._index.get((domain, slot), {}).get(tokens)
        spec = None
        for action in dom.actions:
            p = action.param(slot)
            if p is not None:
                spec = p
                break
        if spec is None:
            return None
        if spec.links is not None:
            return self._index.get((domain, spec.links), {}).get(tokens)
        if len(tokens) != 1:
            return None
        tok = tokens[0]
        if spec.kind == "time_of_day" and _TIME_RE.match(tok):
            h, _, m = tok.partition(":")
            return Time(int(h), int(m))
        if spec.kind == "integer":
            if tok.isdigit():
                return Int(int(tok))
            if tok in _INT_WORDS:
                return Int(_INT_WORDS[tok])
        if spec.kind == "day_of_week":
            for short, long in DAY_WORDS.items():
                if tok in (short, long):
                    return Day(short)
        return None


# ---------------------------------------------------------------------------
# expansion

class ExpandError(ValueError):
    pass


def constraint_ok(grammar: Grammar, prod: Production, constraint: dict | None) -> bool:
    """domain: every referenced domain must be the given one; slot: the
    production must bind exactly that value slot; action: any referenced
    action must be the given one."""
    if not constraint:
        return True
    domains, columns, slots, actions = grammar.signature(prod)
    if "domain" in constraint:
        if any(d != constraint["domain"] for d in domains):
            return False
    if "slot" in constraint:
        want = constraint["slot"]
        if not (columns | slots) <= {want} or want not in slots:
            return False
    if "column" in constraint:
        if columns != {constraint["column"]}:
            return False
    if "action" in constraint:
        if not actions <= {constraint["action"]}:
            return False
    return True


def candidates(grammar: Grammar, tag: str, constraint: dict | None = None) -> list[Production]:
    return [p for p in grammar.by_tag(tag) if constraint_ok(grammar, p, constraint)]


def expand(grammar: Grammar, start, rng: random.Random,
           bindings: dict[tuple[str, str], Value] | None = None,
           sampler=None, constraint: dict | None = None) -> tuple[str, Derivation]:
    """Expand a nonterminal (or, if start names a semantic tag, one of its
    tagged productions) into an utterance.  Value slots take their value from
    bindings when fixed by the caller, otherwise from sampler(domain, slot, rng).
    """
    bindings = bindings or {}

    def pick(prods: list[Production], what: str) -> Production:
        if sampler is None:
            # without a sampler only productions whose slots are all bound
            # can be phrased
            prods = [p for p in prods
                     if grammar.signature(p)[2] <= set(bindings)]
        if not prods:
            raise ExpandError(f"nothing to expand for {what!r}")
        return prods[rng.randrange(len(prods))] if len(prods) > 1 else prods[0]

    def expand_prod(prod: Production) -> Derivation:
        children = []
        for part in prod.parts:
            if isinstance(part, Lit):
                children.append(None)
            elif isinstance(part, Slot):
                v = bindings.get((part.domain, part.slot))
                if v is None:
                    if sampler is None:
                        raise ExpandError(f"no value for {part.domain}.{part.slot}")
                    v = sampler(part.domain, part.slot, rng)
                children.append(v)
            else:
                sub = pick(grammar.productions.get(part.name, []), part.name)
                children.append(expand_prod(sub))
        return Derivation(prod, tuple(children))

    if start in grammar.productions:
        prod = pick(grammar.productions[start], start)
    else:
        prod = pick(candidates(grammar, start, constraint), start)
    deriv = expand_prod(prod)
    return detokenize(deriv.tokens()), deriv


# ---------------------------------------------------------------------------
# chart parsing (inversion)

def parse_spans(grammar: Grammar, matcher: ValueMatcher, tokens: list[str],
                start: str = USER_TURN) -> list[Derivation]:
    """All derivations of start whose yield equals the token sequence.
    The grammar is finite and acyclic down to the lexicon, so memoized
    descent over spans enumerates every parse."""
    n = len(tokens)
    toks = tuple(tokens)
    memo: dict[tuple[str, int, int], list[Derivation]] = {}

    def derivs(nt: str, i: int, j: int) -> list[Derivation]:
        key = (nt, i, j)
        if key in memo:
            return memo[key]
        memo[key] = out = []
        for prod in grammar.productions.get(nt, []):
            for children in match_parts(prod.parts, 0, i, j):
                out.append(Derivation(prod, tuple(children)))
        return out

    def match_parts(parts: tuple[Part, ...], k: int, i: int, j: int):
        if k == len(parts):
            if i == j:
                yield []
            return
        part = parts[k]
        if isinstance(part, Lit):
            low = part.lower
            end = i + len(low)
            if end <= j and toks[i:end] == low:
                for rest in match_parts(parts, k + 1, end, j):
                    yield [None] + rest
            return
        if isinstance(part, Slot):
            limit = min(j, i + matcher.max_span)
            for end in range(i + 1, limit + 1):
                v = matcher.match(part.domain, part.slot, toks[i:end])
                if v is not None:
                    for rest in match_parts(parts, k + 1, end, j):
                        yield [v] + rest
            return
        for end in range(i, j + 1):
            subs = derivs(part.name, i, end)
            if not subs:
                continue
            for rest in match_parts(parts, k + 1, end, j):
                for sub in subs:
                    yield [sub] + rest

    return derivs(start, 0, n)


def rank(derivations: list[Derivation],
         admissible=None,
         active_domain: str | None = None) -> list[tuple[Derivation, tuple]]:
    """Deterministic ranking: context-admissible derivations first, then ones
    binding more values, then smaller trees, then tag and binding order.
    admissible is a predicate over derivations (None admits everything)."""
    scored = []
    for d in derivations:
        b = d.bindings()
        dom = b.main_domain
        tag = d.tag or ""
        adm = 0 if admissible is None or admissible(d) else 1
        on_active = 0 if (active_domain is not None and dom == active_domain) else 1
        score = (adm, on_active, -len(b.values), d.size(), tag, b.sort_key())
        scored.append((d, score))
    scored.sort(key=lambda pair: pair[1])
    return scored


def parse_utterance(grammar: Grammar, matcher: ValueMatcher, utterance: str,
                    admissible=None,
                    active_domain: str | None = None) -> list[tuple[Derivation, tuple]]:
    tokens = tokenize(utterance)
    if not tokens:
        return []
    return rank(parse_spans(grammar, matcher, tokens), admissible, active_domain)
