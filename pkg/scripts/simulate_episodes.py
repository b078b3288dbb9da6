#!/usr/bin/env python3
"""Liveness experiment: run scripted user episodes against the live agent and
report termination and booking-completion rates.

Usage: python scripts/simulate_episodes.py [--episodes 500] [--confirm]
"""

import argparse
import pathlib
import sys
import time
from collections import Counter

ROOT = pathlib.Path(__file__).resolve().parent.parent

from dialogforge.agent import build_stack, simulate_episode


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=500)
    ap.add_argument("--max-turns", type=int, default=16)
    ap.add_argument("--confirm", action="store_true",
                    help="require confirmation before executing actions")
    args = ap.parse_args()

    stack = build_stack(ROOT / "fixtures" / "schemas.json",
                        ROOT / "fixtures" / "db.json")
    t0 = time.time()
    stats = [simulate_episode(stack, seed=i, max_turns=args.max_turns,
                              confirm_actions=args.confirm)
             for i in range(args.episodes)]
    elapsed = time.time() - t0

    lengths = Counter(s.turns for s in stats)
    accepted = [s for s in stats if s.accepted_action]
    succeeded = sum(s.action_success for s in accepted)
    print(f"{len(stats)} episodes in {elapsed:.1f}s "
          f"({elapsed / len(stats) * 1000:.1f} ms each)")
    print(f"terminated: {sum(s.ended for s in stats)}/{len(stats)}")
    print(f"accepted a booking: {len(accepted)}")
    if accepted:
        print(f"accept -> success: {succeeded}/{len(accepted)} "
              f"= {succeeded / len(accepted):.3f}")
    print("episode lengths:", dict(sorted(lengths.items())))
    return 0


if __name__ == "__main__":
    sys.exit(main())
