"""The forge command line: synthesize, filter, predict, evaluate, signature,
chat, serve, machine.

Exit codes: 0 success, 1 validation/data error, 2 usage error.  Randomized
subcommands take an explicit --seed; nothing is ever seeded from the clock.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .agent import Session, Stack, build_stack
from .engine import DatabaseError
from .evaluation import (EvalError, EvalRecord, build_signature, evaluate,
                         load_signature, save_signature)
from .linearize import DelinearizeError
from .parafilter import filter_file
from .parser import ExternalParser, GrammarParser
from .schema import SchemaError
from .synthesis import (SynthConfig, dump_line, read_jsonl, synthesize,
                        write_corpus)


class CliError(Exception):
    pass


def _add_stack_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schemas", required=True, help="domain schema JSON file")
    p.add_argument("--db", required=True, help="database fixture JSON file")
    p.add_argument("--templates", help="extra template productions (JSON)")


def _stack(args) -> Stack:
    return build_stack(args.schemas, args.db, getattr(args, "templates", None))


def _parser_handle(args, stack: Stack):
    if getattr(args, "parser_cmd", None):
        return ExternalParser(args.parser_cmd)
    return GrammarParser(stack.machine, stack.grammar, stack.matcher, stack.schemas)


def cmd_synthesize(args) -> int:
    stack = _stack(args)
    cfg = SynthConfig(
        num_dialogues=args.num, seed=args.seed,
        working_set_size=args.working_set, max_turns=args.max_turns,
        p_fail=args.p_fail, confirm_actions=not args.no_confirm,
        transition_temperature=args.temperature)
    counts = write_corpus(synthesize(stack.machine, stack.grammar, stack.db, cfg),
                          args.out, stack.schemas)
    print(f"wrote {counts['dialogues']} dialogues ({counts['turns']} turns) to {args.out}")
    return 0


def cmd_filter(args) -> int:
    stack = _stack(args)
    parser = _parser_handle(args, stack)
    try:
        report = filter_file(args.infile, args.out, args.report, parser, stack.schemas)
    finally:
        if isinstance(parser, ExternalParser):
            parser.close()
    print(f"kept {report.kept} / {report.total} "
          f"(discarded {report.discarded}, malformed {report.malformed})")
    return 0


def cmd_predict(args) -> int:
    stack = _stack(args)
    parser = _parser_handle(args, stack)
    grammar_mode = isinstance(parser, GrammarParser)
    amb_path = Path(str(args.out) + ".ambiguities.jsonl")
    n = n_amb = 0
    try:
        with open(args.out, "w", encoding="utf-8") as out, \
                open(amb_path, "w", encoding="utf-8") as amb:
            for rec in read_jsonl(args.gold):
                if grammar_mode:
                    target, dump = parser.predict_logged(rec["context"], rec["utterance"])
                    if dump is not None:
                        dump["id"], dump["turn"] = rec["id"], rec["turn"]
                        amb.write(dump_line(dump) + "\n")
                        n_amb += 1
                else:
                    target = parser(rec["context"], rec["utterance"])
                out.write(dump_line({"id": rec["id"], "turn": rec["turn"],
                                     "target": target}) + "\n")
                n += 1
    finally:
        if isinstance(parser, ExternalParser):
            parser.close()
    if n_amb == 0:
        amb_path.unlink(missing_ok=True)
    print(f"predicted {n} turns to {args.out}"
          + (f" ({n_amb} ambiguous, dumped to {amb_path})" if n_amb else ""))
    return 0


def cmd_evaluate(args) -> int:
    from .schema import load_schemas
    schemas = load_schemas(args.schemas)
    gold = list(read_jsonl(args.gold))
    pred = list(read_jsonl(args.pred))
    if len(gold) != len(pred):
        raise CliError(f"gold has {len(gold)} lines but pred has {len(pred)}")
    records = [EvalRecord.from_pair(g, p) for g, p in zip(gold, pred)]
    machine = signature = None
    if args.train_sig:
        if not args.db:
            raise CliError("--train-sig needs --db to build the machine")
        stack = build_stack(args.schemas, args.db)
        machine = stack.machine
        signature = load_signature(args.train_sig)
    report = evaluate(records, schemas, machine=machine, signature=signature,
                      search_depth=args.depth)
    out = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(out + "\n", encoding="utf-8")
    print(out)
    return 0


def cmd_signature(args) -> int:
    from .schema import load_schemas
    schemas = load_schemas(args.schemas)
    sig = build_signature(read_jsonl(args.user), schemas)
    save_signature(sig, args.out)
    print(f"{len(sig)} shapes -> {args.out}")
    return 0


def cmd_machine(args) -> int:
    stack = _stack(args)
    if args.describe:
        print(stack.machine.describe())
    else:
        print(json.dumps(stack.machine.counts(), indent=2, sort_keys=True))
    return 0


def cmd_chat(args) -> int:
    stack = _stack(args)
    external = ExternalParser(args.parser_cmd) if args.parser_cmd else None
    session = Session(stack, args.seed, confirm_actions=args.confirm,
                      external_parser=external)
    print(f"agent> {session.greeting}")
    try:
        while not session.ended:
            try:
                line = input("you> ").strip()
            except EOFError:
                break
            if not line:
                continue
            if line in ("/quit", "/exit"):
                break
            result = session.step(line)
            print(f"agent> {result.reply}")
            if args.debug:
                print(f"  [user state]  {result.user_state}")
                print(f"  [agent state] {result.agent_state}")
                print(f"  [context]     {result.context}")
    finally:
        if external is not None:
            external.close()
    return 0


def cmd_serve(args) -> int:
    from .server import serve
    stack = _stack(args)
    httpd = serve(stack, args.port, static_dir=args.static,
                  confirm_actions=args.confirm)
    print(f"serving on http://0.0.0.0:{args.port}/ "
          f"(static: {args.static or 'none'})")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def make_arg_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="forge", description=__doc__)
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="synthesize an annotated dialogue corpus")
    _add_stack_args(p)
    p.add_argument("--num", type=int, required=True, help="dialogues to emit")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--working-set", type=int, default=100)
    p.add_argument("--max-turns", type=int, default=8)
    p.add_argument("--p-fail", type=float, default=0.1)
    p.add_argument("--no-confirm", action="store_true",
                   help="do not synthesize confirmation turns")
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("filter", help="keep paraphrases the parser maps to the gold state")
    _add_stack_args(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--parser-cmd", help="external parser command (line protocol)")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("predict", help="parse a gold set's utterances")
    _add_stack_args(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parser", choices=["grammar", "cmd"], default="grammar")
    p.add_argument("--parser-cmd")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold targets")
    p.add_argument("--schemas", required=True)
    p.add_argument("--db")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report")
    p.add_argument("--train-sig", help="training signature for turn categorization")
    p.add_argument("--depth", type=int, default=2)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("signature", help="abstract shapes of a training set")
    p.add_argument("--schemas", required=True)
    p.add_argument("--user", required=True, help="user.jsonl from synthesize")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_signature)

    p = sub.add_parser("machine", help="inspect the transaction machine")
    _add_stack_args(p)
    p.add_argument("--describe", action="store_true")
    p.set_defaults(fn=cmd_machine)

    p = sub.add_parser("chat", help="interactive terminal chat")
    _add_stack_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--debug", action="store_true")
    p.add_argument("--confirm", action="store_true",
                   help="confirm actions before executing")
    p.add_argument("--parser-cmd")
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("serve", help="HTTP chat service")
    _add_stack_args(p)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--static", help="directory with the web chat build")
    p.add_argument("--confirm", action="store_true")
    p.set_defaults(fn=cmd_serve)

    return root


def main(argv=None) -> int:
    parser = make_arg_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SchemaError, DatabaseError, DelinearizeError, EvalError, CliError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
