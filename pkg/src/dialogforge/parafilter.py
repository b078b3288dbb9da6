"""Paraphrase filtering: keep a candidate only if the parser maps it back to
the original gold user state.  Malformed lines are counted and skipped, never
fatal, and output order follows input order."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .linearize import DelinearizeError, delinearize_user
from .states import states_equal

ParserHandle = Callable[[str, str], str]


@dataclass
class FilterReport:
    kept: int = 0
    discarded: int = 0
    malformed: int = 0
    per_tag: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.kept + self.discarded + self.malformed

    def bump(self, tag: str, kept: bool) -> None:
        row = self.per_tag.setdefault(tag, {"kept": 0, "discarded": 0})
        row["kept" if kept else "discarded"] += 1

    def to_dict(self) -> dict:
        return {"kept": self.kept, "discarded": self.discarded,
                "malformed": self.malformed, "total": self.total,
                "per_tag": self.per_tag}


def filter_paraphrases(candidates: Iterable[dict], parser: ParserHandle, schemas,
                       report: FilterReport | None = None) -> Iterator[dict]:
    """candidates are dicts with id, context, paraphrase and gold_target
    (an optional tag rides along into the report)."""
    report = report if report is not None else FilterReport()
    for cand in candidates:
        if not isinstance(cand, dict) or not all(
                isinstance(cand.get(k), str) for k in ("context", "paraphrase", "gold_target")):
            report.malformed += 1
            continue
        try:
            gold = delinearize_user(cand["gold_target"], schemas)
        except (DelinearizeError, ValueError):
            report.malformed += 1
            continue
        try:
            predicted = parser(cand["context"], cand["paraphrase"])
            pred = delinearize_user(predicted, schemas)
            keep = states_equal(pred, gold)
        except (DelinearizeError, ValueError, RuntimeError):
            keep = False
        tag = str(cand.get("tag", gold.act))
        report.bump(tag, keep)
        if keep:
            report.kept += 1
            yield cand
        else:
            report.discarded += 1


def filter_file(in_path, out_path, report_path, parser: ParserHandle, schemas) -> FilterReport:
    import json
    from pathlib import Path

    report = FilterReport()

    def lines():
        with open(in_path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    report.malformed += 1

    with open(out_path, "w", encoding="utf-8") as out:
        for kept in filter_paraphrases(lines(), parser, schemas, report):
            out.write(json.dumps(kept, sort_keys=True, ensure_ascii=False) + "\n")
    if report_path:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return report
