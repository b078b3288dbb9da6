import json

import pytest

from dialogforge.builtin import builtin_transaction_machine
from dialogforge.parafilter import FilterReport, filter_file, filter_paraphrases
from dialogforge.parser import GrammarParser
from dialogforge.synthesis import SynthConfig, synthesize, training_lines
from dialogforge.templates import ValueMatcher


@pytest.fixture(scope="module")
def machine(schemas, db):
    return builtin_transaction_machine(schemas, db)


@pytest.fixture(scope="module")
def gparser(schemas, db, machine):
    return GrammarParser(machine, machine.grammar, ValueMatcher(schemas, db), schemas)


@pytest.fixture(scope="module")
def candidates(schemas, db, machine):
    out = []
    for record in synthesize(machine, machine.grammar, db,
                             SynthConfig(num_dialogues=60, seed=17)):
        user_lines, _ = training_lines(record, schemas)
        for line in user_lines:
            out.append({"id": f"{line['id']}#{line['turn']}",
                        "context": line["context"],
                        "paraphrase": line["utterance"],
                        "gold_target": line["target"]})
    return out


def test_identity_paraphrases_are_kept(schemas, gparser, candidates):
    report = FilterReport()
    kept = list(filter_paraphrases(candidates, gparser, schemas, report))
    assert len(kept) == len(candidates)
    assert report.discarded == 0 and report.malformed == 0


def test_template_variant_paraphrase_kept(schemas, gparser):
    cand = {"id": "x", "context": "Init:",
            "paraphrase": "i want indian cuisine",
            "gold_target": 'Exec: restaurant ( food = " indian " ) ;'}
    kept = list(filter_paraphrases([cand], gparser, schemas))
    assert kept == [cand]


def test_value_dropping_paraphrase_discarded(schemas, gparser):
    cand = {"id": "x", "context": "Init:",
            "paraphrase": "i want food",
            "gold_target": 'Exec: restaurant ( food = " indian " ) ;'}
    report = FilterReport()
    assert list(filter_paraphrases([cand], gparser, schemas, report)) == []
    assert report.discarded == 1


def test_meaning_changing_paraphrase_discarded(schemas, gparser):
    cand = {"id": "x", "context": "Init:",
            "paraphrase": "i want a cheap restaurant",
            "gold_target": 'Exec: restaurant ( food = " indian " ) ;'}
    assert list(filter_paraphrases([cand], gparser, schemas)) == []


def test_malformed_candidates_counted_not_fatal(schemas, gparser):
    cands = [
        {"id": "a", "context": "Init:", "paraphrase": "hello",
         "gold_target": "Greet:"},
        {"context": "Init:"},  # missing fields
        {"id": "c", "context": "Init:", "paraphrase": "hello",
         "gold_target": "NotAnAct: ("},  # unparseable gold
        "not even a dict",
    ]
    report = FilterReport()
    kept = list(filter_paraphrases(cands, gparser, schemas, report))
    assert [c["id"] for c in kept] == ["a"]
    assert report.malformed == 3
    assert report.kept + report.discarded + report.malformed == 4


def test_conservation_and_idempotence(tmp_path, schemas, gparser, candidates):
    corrupted = candidates[:300] + [
        {"id": "bad1"}, {"id": "bad2", "context": 5}]
    infile = tmp_path / "cand.jsonl"
    with open(infile, "w") as f:
        for c in corrupted:
            f.write(json.dumps(c) + "\n")
        f.write("{not json}\n")
    total_lines = len(corrupted) + 1
    out1 = tmp_path / "kept1.jsonl"
    report1 = filter_file(infile, out1, tmp_path / "r1.json", gparser, schemas)
    assert report1.total == total_lines
    assert report1.kept + report1.discarded + report1.malformed == total_lines
    assert report1.malformed >= 3

    out2 = tmp_path / "kept2.jsonl"
    report2 = filter_file(out1, out2, tmp_path / "r2.json", gparser, schemas)
    assert report2.kept == report1.kept
    assert report2.discarded == 0 and report2.malformed == 0
    assert out1.read_text() == out2.read_text()

    report_obj = json.loads((tmp_path / "r1.json").read_text())
    assert report_obj["kept"] == report1.kept
    assert report_obj["per_tag"]


def test_output_order_follows_input_order(schemas, gparser, candidates):
    kept = list(filter_paraphrases(candidates[:50], gparser, schemas))
    ids = [c["id"] for c in kept]
    original = [c["id"] for c in candidates[:50] if c["id"] in set(ids)]
    assert ids == original
