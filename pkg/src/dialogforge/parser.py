"""Parser handles: the built-in grammar parser and an external line-protocol
process, both mapping (context, utterance) to a linearized user state.

The grammar parser restricts derivations to the user transitions admissible
in the context and takes the top-ranked one; an empty parse maps to the
Invalid act."""

from __future__ import annotations

import json
import subprocess

from .linearize import delinearize_context, linearize_user
from .machine import MachineSpec, admissible_checker, match_followup
from .states import Context, UserState
from .templates import Grammar, ValueMatcher, parse_utterance


class GrammarParser:
    def __init__(self, machine: MachineSpec, grammar: Grammar, matcher: ValueMatcher,
                 schemas):
        self.machine = machine
        self.grammar = grammar
        self.matcher = matcher
        self.schemas = schemas

    def parse_state(self, ctx: Context, utterance: str) -> tuple[UserState, list]:
        followups = self.machine.followups(ctx)
        ranked = parse_utterance(self.grammar, self.matcher, utterance,
                                 admissible_checker(followups, self.grammar),
                                 ctx.active)
        if not ranked or not followups:
            return UserState("Invalid"), ranked
        top = ranked[0][0]
        fol = match_followup(followups, top, self.grammar)
        if fol is None:
            return UserState("Invalid"), ranked
        try:
            return fol.semantics(ctx, top.bindings()), ranked
        except Exception:
            return UserState("Invalid"), ranked

    def __call__(self, context_text: str, utterance: str) -> str:
        ctx = delinearize_context(context_text, self.schemas)
        us, _ = self.parse_state(ctx, utterance)
        return linearize_user(us)

    def predict_logged(self, context_text: str, utterance: str) -> tuple[str, dict | None]:
        """Like __call__, but also reports a derivation dump when the top two
        parses tie on every structural criterion yet mean different states."""
        ctx = delinearize_context(context_text, self.schemas)
        us, ranked = self.parse_state(ctx, utterance)
        target = linearize_user(us)
        if len(ranked) < 2 or ranked[0][1][:4] != ranked[1][1][:4]:
            return target, None
        followups = self.machine.followups(ctx)
        dumps = []
        for deriv, score in ranked[:4]:
            if score[:4] != ranked[0][1][:4]:
                break
            fol = match_followup(followups, deriv, self.grammar)
            try:
                state = linearize_user(fol.semantics(ctx, deriv.bindings())) if fol else None
            except Exception:
                state = None
            dumps.append({
                "tag": deriv.tag,
                "production": " ".join(
                    f"<{p.domain}.{p.slot}>" if hasattr(p, "slot") and hasattr(p, "domain")
                    else (f"[{p.name}]" if hasattr(p, "name") else " ".join(p.tokens))
                    for p in deriv.production.parts),
                "bindings": [[d, s, " ".join(v.tokens())]
                             for d, s, v in deriv.bindings().values],
                "state": state,
            })
        states = {d["state"] for d in dumps}
        if len(states) <= 1:
            return target, None
        return target, {"utterance": utterance, "context": context_text,
                        "candidates": dumps}


class ExternalParser:
    """Speaks one JSON request/response per line over a child process:
    {"context": ..., "utterance": ...} -> {"target": ...}."""

    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            command, shell=True, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)

    def __call__(self, context_text: str, utterance: str) -> str:
        req = json.dumps({"context": context_text, "utterance": utterance},
                         sort_keys=True)
        self.proc.stdin.write(req + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("external parser closed its output")
        return json.loads(line)["target"]

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)
