import json
from collections import Counter
from functools import cmp_to_key
from importlib import resources

import pytest
from hypothesis import given, strategies as st

from episodic_bench.bookgen import Chapter, assemble_book
from episodic_bench.eventgen import Event
from episodic_bench.qagen import (BINS, NEGATIVE_ANSWER, AmbiguousLatest, GroundTruth, Question,
                                  bin_label, canonical_answer, compute_ground_truth, export_finetune_dataset,
                                  instantiate_questions, load_templates, make_qid, select_balanced)
from episodic_bench.prompts import ANSWER_SYSTEM
from episodic_bench.universe import parse_date

TEMPLATES = load_templates()


def book_of(events, secondary=None):
    secondary = secondary or {}
    chapters = [Chapter(e.index, f"(1) Chapter about {e.ent} {e.index}.", 1,
                        {f"$entity_{k + 1}": n for k, n in enumerate(secondary.get(e.index, []))}, 1)
                for e in events]
    return assemble_book(chapters)


def test_bin_label_exhaustive():
    expected = ["0", "1", "2", "3-5", "3-5", "3-5"] + ["6+"] * 50
    assert [bin_label(n) for n in range(56)] == expected
    with pytest.raises(ValueError):
        bin_label(-1)


def test_templates_roundtrip():
    raw = json.loads(resources.files("episodic_bench").joinpath("data/templates.json").read_text("utf-8"))
    assert [t.to_dict() for t in TEMPLATES] == raw
    assert len(TEMPLATES) == 36


def test_template_table_shape():
    masks = Counter(len(t.cue_mask) for t in TEMPLATES)
    assert masks == {1: 12 + 6, 2: 12, 3: 4, 4: 2}
    assert all(t.cue_mask == ("ent",) for t in TEMPLATES[30:])
    assert [t.get_mode for t in TEMPLATES[30:]] == ["latest"] * 3 + ["chrono"] * 3
    assert TEMPLATES[28].trace == "OtherEntities" and TEMPLATES[29].trace == "FullDetails"
    assert TEMPLATES[0].text.startswith("Recall all the events that occurred on {t}.")
    for t in TEMPLATES:
        for slot in t.cue_mask:
            assert "{" + slot + "}" in t.text


def test_real_example_entities_all():
    evs = [Event(0, "January 02, 2025", "Bethpage Black Course", "Chloe Castillo", "Parkour Workshop", "d"),
           Event(1, "March 02, 2025", "Bethpage Black Course", "Ezra Edwards", "Parkour Workshop", "d"),
           Event(2, "June 12, 2025", "Bethpage Black Course", "Levi Rodriguez", "Parkour Workshop", "d"),
           Event(3, "June 12, 2025", "High Line", "Levi Rodriguez", "Tech Hackathon", "d")]
    gt, idx = compute_ground_truth({"s": "Bethpage Black Course", "c": "Parkour Workshop"}, "Entities", "all",
                                   evs, book_of(evs))
    assert gt.kind == "set" and set(gt.items) == {"Chloe Castillo", "Ezra Edwards", "Levi Rodriguez"}
    assert idx == [0, 1, 2]


def test_no_match_is_empty():
    evs = [Event(0, "January 02, 2025", "A", "B C", "D", "d")]
    gt, idx = compute_ground_truth({"s": "Z"}, "Times", "all", evs, book_of(evs))
    assert gt == GroundTruth("empty") and idx == []


THREE = [Event(0, "March 03, 2025", "Late Spot", "Ann Ames", "Fair", "d"),
         Event(1, "January 01, 2024", "Early Spot", "Ann Ames", "Gala", "d"),
         Event(2, "February 10, 2025", "Mid Spot", "Ann Ames", "Fair", "d")]


def test_latest_is_max_date():
    gt, _ = compute_ground_truth({"ent": "Ann Ames"}, "Spaces", "latest", THREE, book_of(THREE))
    brute = max(THREE, key=lambda e: parse_date(e.t)).s
    assert gt == GroundTruth("latest", (brute,)) == GroundTruth("latest", ("Late Spot",))


def test_chrono_keeps_duplicates_and_orders_by_date():
    gt, _ = compute_ground_truth({"ent": "Ann Ames"}, "Contents", "chrono", THREE, book_of(THREE))
    assert gt.items == ("Gala", "Fair", "Fair")


def test_all_deduplicates():
    gt, _ = compute_ground_truth({"ent": "Ann Ames"}, "Contents", "all", THREE, book_of(THREE))
    assert gt.items == ("Fair", "Gala")


def test_ambiguous_latest():
    evs = [Event(0, "March 03, 2025", "X", "Ann Ames", "Fair", "d"),
           Event(1, "March 03, 2025", "Y", "Bob Bell", "Fair", "d")]
    with pytest.raises(AmbiguousLatest):
        compute_ground_truth({"c": "Fair"}, "Spaces", "latest", evs, book_of(evs))


def test_other_entities_and_full_details():
    evs = THREE
    book = book_of(evs, secondary={0: ["Zed Zane", "Yul York"], 2: ["Xia Xu"]})
    gt, _ = compute_ground_truth({"ent": "Ann Ames", "c": "Fair"}, "OtherEntities", "all", evs, book)
    assert set(gt.items) == {"Zed Zane", "Yul York", "Xia Xu"}
    cue = {"t": evs[0].t, "s": evs[0].s, "ent": evs[0].ent, "c": evs[0].c}
    gt, _ = compute_ground_truth(cue, "FullDetails", "all", evs, book)
    assert gt.kind == "chapter" and gt.items == (book.chapter_for_event(0).text,)


def test_discarded_events_do_not_count():
    book = book_of(THREE[:2])
    gt, idx = compute_ground_truth({"ent": "Ann Ames"}, "Spaces", "all", THREE, book)
    assert idx == [0, 1] and "Mid Spot" not in gt.items


def test_raw_count_before_dedup(world20):
    book = world20.book
    assert len(book.chapters) == 20
    chapters19 = assemble_book(book.chapters[:19])
    raw = instantiate_questions(world20.events, chapters19, TEMPLATES, dedup=False)
    assert len(raw) == 684 == 36 * 19
    deduped = instantiate_questions(world20.events, chapters19, TEMPLATES)
    assert len(deduped) == len({q.question_text for q in raw})


def test_shared_entity_collapses():
    evs = [Event(0, "March 03, 2025", "X", "Ann Ames", "Fair", "d"),
           Event(1, "April 03, 2025", "Y", "Ann Ames", "Gala", "d")]
    qs = instantiate_questions(evs, book_of(evs), TEMPLATES)
    assert sum(q.template_id == 6 for q in qs) == 1
    entity_only = [t for t in TEMPLATES if t.cue_mask == ("ent",)]
    assert len(entity_only) == 9
    assert len(qs) == 72 - len(entity_only)


def test_duplicates_share_ground_truth(world200):
    raw = instantiate_questions(world200.events, world200.book, TEMPLATES, dedup=False)
    seen = {}
    for q in raw:
        prev = seen.setdefault(q.question_text, q)
        assert prev.ground_truth == q.ground_truth
        assert prev.matching_event_indices == q.matching_event_indices


def _scan(cue, events, accepted):
    out = []
    for e in events:
        ok = True
        for k, v in cue.items():
            if getattr(e, k) != v:
                ok = False
        if ok and e.index in accepted:
            out.append(e.index)
    return out


def test_brute_force_matching(world200):
    accepted = {c.event_index for c in world200.book.chapters}
    for q in world200.questions:
        assert q.matching_event_indices == _scan(q.cue, world200.events, accepted)
        assert q.kind == "nonempty" and q.matching_event_indices
    for q in world200.empty_questions:
        assert _scan(q.cue, world200.events, accepted) == []
        assert q.ground_truth.kind == "empty" and q.bin == "0"


def test_chrono_matches_comparison_sort(world200):
    by_index = {e.index: e for e in world200.events}

    def cmp(a, b):
        da, db = parse_date(by_index[a].t), parse_date(by_index[b].t)
        return (da > db) - (da < db)

    field = {"Times": "t", "Spaces": "s", "Contents": "c"}
    for q in world200.questions:
        if q.get_mode != "chrono":
            continue
        ordered = sorted(q.matching_event_indices, key=cmp_to_key(cmp))
        assert list(q.ground_truth.items) == [getattr(by_index[i], field[q.trace]) for i in ordered]


def test_empty_questions_both_strategies(world200):
    kinds = Counter(q.kind for q in world200.empty_questions)
    assert kinds["empty_inner"] > 0 and kinds["empty_outer"] > 0
    texts = [q.question_text for q in world200.questions + world200.empty_questions]
    assert len(texts) == len(set(texts))


def test_outer_values_come_from_unused_universe(world200):
    used = {k: {getattr(e, k) for e in world200.events if e.index in
                {c.event_index for c in world200.book.chapters}} for k in ("t", "s", "ent", "c")}
    sources = {k: {getattr(e, k) for e in world200.events} for k in ("t", "s", "ent", "c")}
    for q in world200.empty_questions:
        for k, v in q.cue.items():
            assert v in world200.universe.slot_values(k)
            if q.kind == "empty_inner":
                assert v in sources[k]
    assert any(v not in used[k] for q in world200.empty_questions if q.kind == "empty_outer"
               for k, v in q.cue.items())


def test_selection_caps_and_structure(world200):
    allq = world200.questions + world200.empty_questions
    sel = select_balanced(allq, 5, seed=0)
    cells = Counter((q.template_id, q.bin) for q in sel)
    assert max(cells.values()) <= 5
    assert len(sel) <= 36 * 5 * 5
    for q in allq:
        if {"t", "s"} <= set(q.cue) or {"t", "ent"} <= set(q.cue):
            assert q.bin in ("0", "1")
    assert sel == select_balanced(allq, 5, seed=0)
    available = Counter((q.template_id, q.bin) for q in allq)
    for cell, n in available.items():
        assert cells[cell] == min(5, n)


def test_selection_small_cell_takes_everything():
    qs = [Question(make_qid(0, {"t": str(i)}, "nonempty"), 0, {"t": str(i)}, "nonempty", [i], f"q{i}",
                   GroundTruth("set", ("x",)), "Spaces", "all") for i in range(3)]
    assert select_balanced(qs, 5) == qs


def test_qid_stable():
    assert make_qid(3, {"s": "A", "t": "B"}, "nonempty") == make_qid(3, {"t": "B", "s": "A"}, "nonempty")
    assert make_qid(3, {"s": "A"}, "nonempty") != make_qid(3, {"s": "A"}, "empty_inner")


def test_question_roundtrip(world20):
    for q in world20.questions[:50] + world20.empty_questions[:50]:
        assert Question.from_dict(json.loads(json.dumps(q.to_dict()))) == q


def test_finetune_export(world200):
    allq = world200.questions + world200.empty_questions
    records = export_finetune_dataset(allq)
    bin1 = [q for q in allq if q.bin == "1" and q.kind == "nonempty"]
    assert len(records) == len(bin1) > 0
    for q, r in zip(bin1, records):
        roles = [m["role"] for m in r["messages"]]
        assert roles == ["system", "user", "assistant"]
        assert r["messages"][0]["content"] == ANSWER_SYSTEM
        assert q.question_text in r["messages"][1]["content"]
        for item in q.ground_truth.items:
            assert item in r["messages"][2]["content"]


@given(st.lists(st.text(alphabet="abcdefghij XYZ-'", min_size=1, max_size=20).map(str.strip).filter(bool),
                min_size=1, max_size=6, unique=True))
def test_canonical_answer_roundtrip(items):
    text = canonical_answer(GroundTruth("set", tuple(items)))
    assert text.startswith("The answer is: ") and text.endswith(".")
    assert text[len("The answer is: "):-1].split("; ") == items


def test_canonical_answer_special_kinds():
    assert canonical_answer(GroundTruth("empty")) == NEGATIVE_ANSWER
    assert canonical_answer(GroundTruth("set", ())) == NEGATIVE_ANSWER
    assert canonical_answer(GroundTruth("chapter", ("(1) text",))) == "(1) text"


def test_bins_are_ordered():
    assert BINS == ("0", "1", "2", "3-5", "6+")
