#!/usr/bin/env python3
"""End-to-end corpus experiment: synthesize a training set, re-parse it with
the grammar parser, score it, and categorize a held-out slice against the
training signature.

Usage: python scripts/run_pipeline.py [--num 2000] [--seed 42] [--out out/pipeline]
"""

import argparse
import json
import pathlib
import sys
import time

ROOT = pathlib.Path(__file__).resolve().parent.parent

from dialogforge.cli import main as forge


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--num", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="out/pipeline")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    schemas = str(ROOT / "fixtures" / "schemas.json")
    db = str(ROOT / "fixtures" / "db.json")
    stack = ["--schemas", schemas, "--db", db]

    t0 = time.time()
    steps = [
        ["synthesize", *stack, "--num", str(args.num), "--seed", str(args.seed),
         "--out", str(out)],
        ["predict", *stack, "--gold", str(out / "user.jsonl"),
         "--out", str(out / "pred.jsonl")],
        ["signature", "--schemas", schemas, "--user", str(out / "user.jsonl"),
         "--out", str(out / "sig.json")],
        ["evaluate", *stack, "--gold", str(out / "user.jsonl"),
         "--pred", str(out / "pred.jsonl"), "--train-sig", str(out / "sig.json"),
         "--report", str(out / "report.json")],
    ]
    for step in steps:
        print(f"$ forge {' '.join(step)}")
        rc = forge(step)
        if rc != 0:
            return rc
    report = json.loads((out / "report.json").read_text())
    print(f"\ndone in {time.time() - t0:.1f}s: turn EM {report['turn_em']:.4f}, "
          f"dialogue EM {report['dialogue_em']:.4f} over {report['turns']} turns")
    return 0


if __name__ == "__main__":
    sys.exit(main())
