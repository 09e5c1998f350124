import datetime as dt
import json

import pytest
from hypothesis import given, settings, strategies as st

from episodic_bench.universe import (BUNDLED_CORPORA, CorpusInvalid, InsufficientCorpus, build_universe,
                                     load_corpus, parse_date, render_date, validate_corpus)


def _raw(corpus):
    return {
        "first_names": list(corpus.first_names), "last_names": list(corpus.last_names),
        "locations": list(corpus.locations), "contents": list(corpus.contents),
        "content_details": {k: list(v) for k, v in corpus.content_details.items()},
        "style_catalog": {k: list(v) for k, v in corpus.style_catalog.items()},
        "secondary_first_names": list(corpus.secondary_first_names),
        "secondary_last_names": list(corpus.secondary_last_names),
        "date_range": list(corpus.date_range),
    }


@pytest.mark.parametrize("name", BUNDLED_CORPORA)
def test_bundled_corpora_load(name):
    c = load_corpus(name)
    assert len(c.locations) >= 100
    assert len(c.contents) >= 100
    assert len(c.secondary_first_names) >= 500
    assert len(c.secondary_last_names) >= 1000
    assert c.start_date < c.end_date
    assert all(c.content_details[x] for x in c.contents)
    assert len(c.style_catalog) == 8
    for key in ("locations", "contents", "first_names", "last_names"):
        items = getattr(c, key)
        assert not any(a != b and a in b for a in items for b in items), key


def test_city_life_has_eight_styles_of_three_adjectives(corpus):
    assert len(corpus.style_catalog) == 8
    assert all(len(v) == 3 for v in corpus.style_catalog.values())
    assert corpus.style_catalog["detective"][:2] == ("suspense", "deduction")


def test_no_item_is_a_substring_of_another(corpus):
    # Verbatim placement checks would be ambiguous otherwise.
    for key in ("locations", "contents"):
        items = getattr(corpus, key)
        for a in items:
            assert not any(a != b and a in b for b in items), (key, a)


def test_duplicate_location_rejected(corpus):
    raw = _raw(corpus)
    raw["locations"].append(raw["locations"][0])
    with pytest.raises(CorpusInvalid, match="locations"):
        validate_corpus(raw)


def test_content_without_details_rejected(corpus):
    raw = _raw(corpus)
    raw["content_details"][raw["contents"][3]] = []
    with pytest.raises(CorpusInvalid, match="content_details"):
        validate_corpus(raw)


def test_reversed_date_range_rejected(corpus):
    raw = _raw(corpus)
    raw["date_range"] = ["2026-01-01", "2025-01-01"]
    with pytest.raises(CorpusInvalid, match="date_range"):
        validate_corpus(raw)


def test_load_from_path(tmp_path, corpus):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(_raw(corpus)))
    assert load_corpus(p).locations == corpus.locations
    p.write_text("[1, 2]")
    with pytest.raises(CorpusInvalid):
        load_corpus(p)


def test_universe_deterministic(corpus):
    a = build_universe(corpus, 100, 5)
    b = build_universe(corpus, 100, 5)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert a.to_dict() != build_universe(corpus, 100, 6).to_dict()


def test_universe_singleton(corpus):
    u = build_universe(corpus, 1, 3)
    assert [len(u.temporal), len(u.spatial), len(u.entities), len(u.contents)] == [1, 1, 1, 1]


def test_universe_too_large(corpus):
    with pytest.raises(InsufficientCorpus):
        build_universe(corpus, len(corpus.locations) + 1, 0)


def test_universe_roundtrip(universe):
    from episodic_bench.universe import Universe
    assert Universe.from_dict(json.loads(json.dumps(universe.to_dict()))) == universe


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_universe_invariants(corpus, seed):
    u = build_universe(corpus, 100, seed)
    for seq in (u.temporal, u.spatial, u.entities, u.contents):
        assert len(seq) == 100 == len(set(seq))
    firsts, lasts = set(corpus.first_names), set(corpus.last_names)
    for name in u.entities:
        first, last = name.split(" ", 1)
        assert first in firsts and last in lasts
    for t in u.temporal:
        assert corpus.start_date <= parse_date(t) <= corpus.end_date
        assert render_date(parse_date(t)) == t


def test_render_date_zero_pads():
    assert render_date(dt.date(2024, 5, 7)) == "May 07, 2024"


@given(st.dates(min_value=dt.date(1000, 1, 1), max_value=dt.date(9999, 12, 31)))
def test_date_roundtrip(d):
    assert parse_date(render_date(d)) == d


@pytest.mark.parametrize("bad", ["", "Mai 07, 2024", "May 7 2024", "2024-05-07", "May 32, 2024"])
def test_parse_date_rejects(bad):
    with pytest.raises(ValueError):
        parse_date(bad)
