"""Chapter prompting, the generate/verify/retry loop, secondary names and book assembly."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from ._util import derive_seed
from .gateway import EmptyCompletion, ModelRef
from .universe import parse_date
from .verify import (PLACEHOLDER_RE, VerdictUnparseable, detail_phrase, parse_paragraphs,
                     verify_semantics, verify_structure)

log = logging.getLogger(__name__)

POOL_CAP = 100_000


class PoolExhausted(RuntimeError):
    pass


class EmptyBook(ValueError):
    pass


def render_chapter_prompt(event, meta, style_catalog):
    idx = meta.idx_paragraph
    user = prompts.fill(
        prompts.CHAPTER_USER,
        style=meta.style,
        entity=event.ent,
        content=event.c,
        date=event.t,
        location=event.s,
        content_single_detail=detail_phrase(event.d),
        nb_paragraphs=meta.nb_paragraphs,
        idx_loc=idx["location"],
        idx_date=idx["date"],
        idx_entity=idx["entity"],
        idx_content=idx["content"],
        first_name=event.first_name,
        style_description=", ".join(style_catalog[meta.style]),
    )
    return prompts.CHAPTER_SYSTEM, user


@dataclass
class ChapterDraft:
    event_index: int
    iteration: int
    raw_text: str
    paragraphs: list = field(default_factory=list)


@dataclass
class Discarded:
    event_index: int
    attempts: list

    def to_dict(self):
        return {"event_index": self.event_index, "attempts": self.attempts}


def generate_chapter(gateway, event, meta, style_catalog, author: ModelRef, judge: ModelRef,
                     itermax=10, book_seed=0):
    """Ask the author model for a chapter until one passes both checks or itermax is hit."""
    if itermax < 1:
        raise ValueError("itermax must be >= 1")
    system, user = render_chapter_prompt(event, meta, style_catalog)
    attempts = []
    for iteration in range(itermax):
        seed = derive_seed(book_seed, event.index, iteration)
        try:
            text = gateway.chat(author.request(system, user, seed=seed))
        except EmptyCompletion as exc:
            attempts.append({"iteration": iteration, "stage": "generation", "causes": [str(exc)]})
            continue
        report = verify_structure(text, event, meta)
        if not report.passed:
            attempts.append({"iteration": iteration, "stage": "structure",
                             "causes": [v.to_dict() for v in report.violations]})
            continue
        try:
            verdict = verify_semantics(gateway, text, judge.provider_id, judge.model, seed=seed,
                                       temperature=judge.temperature)
        except (VerdictUnparseable, EmptyCompletion) as exc:
            attempts.append({"iteration": iteration, "stage": "semantics", "causes": [str(exc)]})
            continue
        if not verdict.valid:
            attempts.append({"iteration": iteration, "stage": "semantics",
                             "causes": [f"question {q} answered false" for q in verdict.failed_questions]})
            continue
        return ChapterDraft(event.index, iteration, text, parse_paragraphs(text))
    return Discarded(event.index, attempts)


class NamePool:
    """Seeded stream of unique secondary full names.

    Candidates are drawn lazily from up to ``cap`` distinct first x last
    combinations; names clashing with the universe are skipped on the way out.
    """

    def __init__(self, first_names, last_names, seed=0, cap=POOL_CAP, forbidden=()):
        self.first_names = list(first_names)
        self.last_names = list(last_names)
        total = len(self.first_names) * len(self.last_names)
        rng = np.random.default_rng(derive_seed(seed, "names"))
        self._order = rng.permutation(total)[:min(cap, total)]
        self._pos = 0
        self._forbidden = [f for f in forbidden if f]

    @classmethod
    def for_universe(cls, corpus, universe, seed=0, cap=POOL_CAP):
        forbidden = [*universe.temporal, *universe.spatial, *universe.entities, *universe.contents]
        return cls(corpus.secondary_first_names, corpus.secondary_last_names, seed, cap, forbidden)

    def __len__(self):
        return len(self._order) - self._pos

    def take(self, used_names):
        nl = len(self.last_names)
        while self._pos < len(self._order):
            k = int(self._order[self._pos])
            self._pos += 1
            name = f"{self.first_names[k // nl]} {self.last_names[k % nl]}"
            if name in used_names or any(f in name for f in self._forbidden):
                continue
            return name
        raise PoolExhausted("secondary name pool is empty")


def placeholders_in(text):
    seen = []
    for m in PLACEHOLDER_RE.finditer(text):
        if m.group(0) not in seen:
            seen.append(m.group(0))
    return seen


def fill_secondary_entities(text, name_pool, used_names):
    """Replace each distinct ``$entity_X`` by a fresh name; returns (text, mapping).

    ``used_names`` is updated in place so names stay unique across a book.
    """
    mapping = {}
    for ph in placeholders_in(text):
        name = name_pool.take(used_names)
        used_names.add(name)
        mapping[ph] = name
    if not mapping:
        return text, mapping
    # Greedy digits keep $entity_1 from matching inside $entity_12.
    out = re.sub(r"\$entity_\d+", lambda m: mapping[m.group(0)], text)
    return out, mapping


@dataclass
class Chapter:
    event_index: int
    text: str
    paragraph_count: int
    secondary_assignments: dict
    iterations_used: int
    chapter_number: int = 0

    @property
    def secondary_names(self):
        return list(self.secondary_assignments.values())

    def to_dict(self):
        return {"chapter_number": self.chapter_number, "event_index": self.event_index,
                "text": self.text, "paragraph_count": self.paragraph_count,
                "secondary_names": self.secondary_names,
                "secondary_assignments": self.secondary_assignments,
                "iterations_used": self.iterations_used}

    @classmethod
    def from_dict(cls, d):
        return cls(d["event_index"], d["text"], d["paragraph_count"],
                   dict(d.get("secondary_assignments") or {}), d["iterations_used"],
                   d["chapter_number"])


@dataclass
class Book:
    chapters: list
    assembled_text: str
    discarded_events: list = field(default_factory=list)
    discards: list = field(default_factory=list)

    @property
    def secondary_assignments(self):
        return {ch.chapter_number: dict(ch.secondary_assignments) for ch in self.chapters}

    def chapter_for_event(self, event_index):
        for ch in self.chapters:
            if ch.event_index == event_index:
                return ch
        return None

    def to_dict(self):
        return {"chapters": [c.to_dict() for c in self.chapters],
                "discarded_events": list(self.discarded_events)}

    @classmethod
    def from_dict(cls, d, assembled_text=None, discards=()):
        chapters = [Chapter.from_dict(c) for c in d["chapters"]]
        text = assembled_text if assembled_text is not None else format_book(chapters)
        return cls(chapters, text, list(d.get("discarded_events", [])), list(discards))


def format_book(chapters):
    return "".join(f"Chapter {i}\n\n{ch.text}\n\n\n" for i, ch in enumerate(chapters, 1))


def assemble_book(chapters, discarded_events=(), ordered=False, events=None):
    """Number accepted chapters 1..K and concatenate them.

    With ``ordered`` the chapters are first sorted by their event date
    (stable, so same-day chapters keep event order).
    """
    chapters = list(chapters)
    if not chapters:
        raise EmptyBook("no accepted chapters to assemble")
    chapters.sort(key=lambda c: c.event_index)
    if ordered:
        if events is None:
            raise ValueError("ordered assembly needs the events")
        by_index = {e.index: e for e in events}
        chapters.sort(key=lambda c: parse_date(by_index[c.event_index].t))
    for i, ch in enumerate(chapters, 1):
        ch.chapter_number = i
    return Book(chapters, format_book(chapters), sorted(discarded_events))


def generate_book(gateway, events, metas, style_catalog, name_pool, author, judge, itermax=10,
                  book_seed=0, workers=8, ordered=False):
    """Generate chapters concurrently, then assign secondary names serially."""
    if len(events) != len(metas):
        raise ValueError("events and metas must align")

    def one(pair):
        ev, meta = pair
        return generate_chapter(gateway, ev, meta, style_catalog, author, judge, itermax, book_seed)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, zip(events, metas)))
    else:
        results = [one(p) for p in zip(events, metas)]

    used = set()
    chapters, discards = [], []
    for res in results:
        if isinstance(res, Discarded):
            log.info("event %d discarded after %d attempts", res.event_index, len(res.attempts))
            discards.append(res)
            continue
        text, mapping = fill_secondary_entities(res.raw_text, name_pool, used)
        chapters.append(Chapter(res.event_index, text, len(res.paragraphs), mapping, res.iteration + 1))
    book = assemble_book(chapters, [d.event_index for d in discards], ordered=ordered, events=events)
    book.discards = [d.to_dict() for d in discards]
    return book
