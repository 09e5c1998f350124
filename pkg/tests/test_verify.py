import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from episodic_bench.bookgen import render_chapter_prompt
from episodic_bench.eventgen import Event, EventMeta
from episodic_bench.gateway import Gateway
from episodic_bench.mocks import ScriptedProvider, parse_chapter_prompt, write_compliant_chapter
from episodic_bench.verify import (RULE_ELSEWHERE, RULE_MISSING, RULE_NUMBERING, RULE_PARAGRAPH_COUNT,
                                   RULE_PLACEHOLDER, MalformedNumbering, VerdictUnparseable,
                                   content_feature, parse_paragraphs, parse_semantic_verdict,
                                   verify_semantics, verify_structure)

EVENT = Event(0, "May 07, 2024", "Bethpage Black Course", "Ezra Edwards", "Parkour Workshop",
              "Demonstrated cat leaps")


def meta(nb, date=1, location=1, entity=1, content=1):
    return EventMeta(nb, {"date": date, "location": location, "entity": entity, "content": content},
                     "thriller")


def chapter(event, m, catalog={"thriller": ("suspense", "tension", "danger")}):
    _, user = render_chapter_prompt(event, m, catalog)
    return write_compliant_chapter(parse_chapter_prompt(user))


def test_parse_simple():
    assert parse_paragraphs("(1) a\n\n(2) b") == [(1, "a"), (2, "b")]


def test_parse_gap():
    with pytest.raises(MalformedNumbering) as exc:
        parse_paragraphs("(1) a\n\n(3) b")
    assert exc.value.expected == 2 and exc.value.found == 3


@pytest.mark.parametrize("text", ["", "no markers", "intro\n(1) a", "(2) a", "(1) a\n(1) b", "(one) a"])
def test_parse_malformed(text):
    with pytest.raises(MalformedNumbering):
        parse_paragraphs(text)


def test_parenthetical_inside_paragraph_is_not_a_marker():
    assert parse_paragraphs("(1) she said (2) things\n\n(2) b") == [(1, "she said (2) things"), (2, "b")]


@given(st.text(max_size=300))
def test_parser_is_total(text):
    try:
        out = parse_paragraphs(text)
    except MalformedNumbering:
        return
    assert [n for n, _ in out] == list(range(1, len(out) + 1))


@given(st.lists(st.text(alphabet=st.characters(blacklist_characters="\n()", blacklist_categories=("Cs",)),
                        min_size=1, max_size=40).map(str.strip).filter(bool), min_size=1, max_size=10))
def test_parser_roundtrip(bodies):
    text = "\n\n".join(f"({i}) {b}" for i, b in enumerate(bodies, 1))
    assert parse_paragraphs(text) == list(enumerate(bodies, 1))


def test_content_feature_uses_first_name_and_lowercased_detail():
    assert content_feature(EVENT) == "Ezra demonstrated cat leaps"


def test_mock_seven_paragraphs_roundtrip():
    m = meta(7, 7, 2, 2, 2)
    text = chapter(EVENT, m)
    assert len(parse_paragraphs(text)) == 7
    assert verify_structure(text, EVENT, m).passed


def test_mock_chapters_pass_for_random_pairs(world200):
    rng = np.random.default_rng(0)
    events = world200.events
    for i in rng.choice(len(events), size=100, replace=False):
        ev, m = events[i], world200.metas[i]
        assert verify_structure(chapter(ev, m, world200.corpus.style_catalog), ev, m).passed


def _move_date_later(text, ev, m):
    paras = parse_paragraphs(text)
    i = m.idx_paragraph["date"] - 1
    bodies = [b for _, b in paras]
    sentence = f"It was {ev.t}, and the day had only just begun."
    bodies[i] = bodies[i].replace(sentence, "")
    bodies[i + 1] = bodies[i + 1] + " " + sentence
    return "\n\n".join(f"({n}) {b}" for n, b in enumerate(bodies, 1))


def test_date_moved_one_paragraph_later():
    m = meta(4, date=2, location=1, entity=3, content=4)
    text = _move_date_later(chapter(EVENT, m), EVENT, m)
    report = verify_structure(text, EVENT, m)
    assert report.rule_ids == {RULE_MISSING, RULE_ELSEWHERE}
    assert {(v.rule_id, v.paragraph_number) for v in report.violations} == {(RULE_MISSING, 2), (RULE_ELSEWHERE, 3)}


def test_location_duplicated():
    m = meta(3, 1, 1, 2, 3)
    text = chapter(EVENT, m) + f" Later they returned to {EVENT.s}."
    assert verify_structure(text, EVENT, m).rule_ids == {RULE_ELSEWHERE}


def test_entity_missing():
    m = meta(3, 1, 2, 3, 1)
    text = chapter(EVENT, m).replace(EVENT.ent, "Someone")
    report = verify_structure(text, EVENT, m)
    assert report.rule_ids == {RULE_MISSING}
    assert report.violations[0].feature == "entity"


def test_detail_altered_by_one_character():
    m = meta(2, 1, 1, 2, 2)
    text = chapter(EVENT, m).replace("cat leaps", "cat leapt")
    report = verify_structure(text, EVENT, m)
    assert report.rule_ids == {RULE_MISSING}
    assert report.violations[0].feature == "content"


def test_paragraph_count_off_by_one():
    m = meta(3, 1, 2, 3, 1)
    text = chapter(EVENT, m) + "\n\n(4) One more paragraph."
    assert verify_structure(text, EVENT, m).rule_ids == {RULE_PARAGRAPH_COUNT}


def test_numbering_gap():
    m = meta(3, 1, 2, 3, 1)
    text = chapter(EVENT, m).replace("(2) ", "(5) ", 1)
    assert verify_structure(text, EVENT, m).rule_ids == {RULE_NUMBERING}


@pytest.mark.parametrize("token", ["$entity_x", "$Entity_1", "entity_3", "$entity_", "$person_1"])
def test_placeholder_grammar(token):
    m = meta(1)
    text = chapter(EVENT, m) + f" {token} waved."
    assert RULE_PLACEHOLDER in verify_structure(text, EVENT, m).rule_ids


def test_valid_placeholders_accepted():
    m = meta(1)
    assert verify_structure(chapter(EVENT, m) + " $entity_12 waved.", EVENT, m).passed


def test_case_sensitive_match():
    m = meta(1)
    text = chapter(EVENT, m).replace(EVENT.s, EVENT.s.lower())
    assert RULE_MISSING in verify_structure(text, EVENT, m).rule_ids


def test_placement_beyond_paragraph_count():
    m = meta(3, 3, 3, 3, 3)
    text = "(1) A quiet start.\n\n(2) Nothing else happened."
    report = verify_structure(text, EVENT, m)
    assert not report.passed
    assert RULE_PARAGRAPH_COUNT in report.rule_ids and RULE_MISSING in report.rule_ids


def test_semantic_all_true():
    assert parse_semantic_verdict('{"1": true, "2": true, "3": true, "4": true}').valid


def test_semantic_question_three_false():
    v = parse_semantic_verdict('{"1":true,"2":true,"3":false,"4":true}')
    assert not v.valid and v.failed_questions == [3]


def test_semantic_wrapped_in_prose():
    raw = 'Sure, here you go:\n```json\n{"1": true, "2": [true], "3": "true", "4": true}\n```\nDone.'
    assert parse_semantic_verdict(raw).valid


@pytest.mark.parametrize("raw", ["", "true true true true", '{"1": true, "2": true, "3": true}',
                                 '{"1": "yes", "2": true, "3": true, "4": true}'])
def test_semantic_unparseable(raw):
    with pytest.raises(VerdictUnparseable):
        parse_semantic_verdict(raw)


def test_verify_semantics_uses_checker_prompt():
    sp = ScriptedProvider(['{"1": true, "2": true, "3": true, "4": false}'])
    gw = Gateway({"j": sp})
    v = verify_semantics(gw, "(1) text", "j", "m")
    assert v.failed_questions == [4] and sp.calls == 1
