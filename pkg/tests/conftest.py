from __future__ import annotations

from dataclasses import dataclass

import pytest

from episodic_bench.bookgen import NamePool, generate_book
from episodic_bench.eventgen import GeometricParams, generate_events, generate_meta
from episodic_bench.gateway import Gateway, ModelRef
from episodic_bench.mocks import HashingEmbedder, MockAuthor, MockJudge
from episodic_bench.qagen import generate_empty_questions, instantiate_questions, load_templates
from episodic_bench.universe import build_universe, load_corpus

AUTHOR = ModelRef("mock-author", "mock", temperature=1.0)
JUDGE = ModelRef("mock-judge", "mock")
ANSWERER = ModelRef("mock-answerer", "mock")
EMBEDDER = ModelRef("mock-embed", "mock")


@dataclass
class MockWorld:
    corpus: object
    universe: object
    events: list
    metas: list
    book: object
    questions: list
    empty_questions: list
    gateway: object


def mock_gateway(**author_kw):
    gw = Gateway(sleep=lambda s: None)
    gw.register("mock-author", MockAuthor(**author_kw))
    gw.register("mock-judge", MockJudge())
    gw.register("mock-embed", HashingEmbedder())
    return gw


def build_world(n_events, seed=0, corpus_name="city_life", **author_kw):
    corpus = load_corpus(corpus_name)
    uni = build_universe(corpus, 100, seed)
    events = generate_events(uni, n_events, GeometricParams(0.1, 100), seed=seed)
    metas = generate_meta(events, corpus.style_catalog, seed=seed)
    gw = mock_gateway(**author_kw)
    book = generate_book(gw, events, metas, corpus.style_catalog, NamePool.for_universe(corpus, uni, seed),
                         AUTHOR, JUDGE, itermax=10, book_seed=seed, workers=4)
    templates = load_templates()
    questions = instantiate_questions(events, book, templates)
    empty = generate_empty_questions(events, uni, book, templates, seed=seed,
                                     exclude_texts={q.question_text for q in questions})
    return MockWorld(corpus, uni, events, metas, book, questions, empty, gw)


@pytest.fixture(scope="session")
def corpus():
    return load_corpus("city_life")


@pytest.fixture(scope="session")
def universe(corpus):
    return build_universe(corpus, 100, 0)


@pytest.fixture(scope="session")
def world20():
    return build_world(20)


@pytest.fixture(scope="session")
def world200():
    return build_world(200)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        status, elapsed = RESULTS[n]
        took = "" if elapsed is None else f" ({elapsed:.2f}s)"
        terminalreporter.write_line(f"criterion {n}: {status}{took}")
