"""Question generation with controlled ground truth, empty-answer questions and selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import prompts
from ._util import derive_seed, sha256_hex
from .universe import parse_date

SLOTS = ("t", "s", "ent", "c")
TRACES = ("Times", "Spaces", "Entities", "Contents", "OtherEntities", "FullDetails")
GET_MODES = ("all", "latest", "chrono")
BINS = ("0", "1", "2", "3-5", "6+")
TRACE_FIELD = {"Times": "t", "Spaces": "s", "Entities": "ent", "Contents": "c"}
NEGATIVE_ANSWER = "There is no information about this in the book."


class AmbiguousLatest(ValueError):
    pass


@dataclass(frozen=True)
class QuestionTemplate:
    template_id: int
    cue_mask: tuple
    trace: str
    get_mode: str
    text: str

    def render(self, cue):
        return prompts.fill(self.text, **{k: cue[k] for k in self.cue_mask})

    def to_dict(self):
        return {"id": self.template_id, "cue": list(self.cue_mask), "trace": self.trace,
                "get": self.get_mode, "text": self.text}


def load_templates(path=None):
    if path is None:
        raw = resources.files("episodic_bench").joinpath("data/templates.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    rows = json.loads(raw)
    out = []
    for r in rows:
        if r["trace"] not in TRACES or r["get"] not in GET_MODES or not set(r["cue"]) <= set(SLOTS):
            raise ValueError(f"bad template row {r!r}")
        out.append(QuestionTemplate(int(r["id"]), tuple(r["cue"]), r["trace"], r["get"], r["text"]))
    if [t.template_id for t in out] != list(range(len(out))):
        raise ValueError("template ids must be 0..n-1 in order")
    return out


def bin_label(n):
    if n < 0:
        raise ValueError("negative count")
    if n <= 2:
        return str(n)
    return "3-5" if n <= 5 else "6+"


@dataclass(frozen=True)
class GroundTruth:
    # kind: set | latest | chrono | chapter | empty
    kind: str
    items: tuple = ()

    def to_dict(self):
        return {"kind": self.kind, "items": list(self.items)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["items"]))


@dataclass
class Question:
    qid: str
    template_id: int
    cue: dict
    kind: str
    matching_event_indices: list
    question_text: str
    ground_truth: GroundTruth
    trace: str
    get_mode: str
    bin: str = field(init=False)

    def __post_init__(self):
        self.bin = bin_label(len(self.matching_event_indices))

    def to_dict(self):
        return {"qid": self.qid, "template_id": self.template_id, "cue": self.cue, "kind": self.kind,
                "matching_event_indices": list(self.matching_event_indices), "bin": self.bin,
                "question_text": self.question_text, "trace": self.trace,
                "get_mode": self.get_mode, "ground_truth": self.ground_truth.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["qid"], d["template_id"], dict(d["cue"]), d["kind"],
                   list(d["matching_event_indices"]), d["question_text"],
                   GroundTruth.from_dict(d["ground_truth"]), d["trace"], d["get_mode"])


def make_qid(template_id, cue, kind):
    return sha256_hex(json.dumps([template_id, sorted(cue.items()), kind]))[:16]


def _chapter_index(book):
    return {ch.event_index: ch for ch in book.chapters}


def matching_events(cue, events):
    return [e for e in events if all(getattr(e, k) == v for k, v in cue.items())]


def _trace_values(trace, event, chapters):
    if trace in TRACE_FIELD:
        return [getattr(event, TRACE_FIELD[trace])]
    ch = chapters[event.index]
    if trace == "OtherEntities":
        return list(ch.secondary_names)
    return [ch.text]


def compute_ground_truth(cue, trace, get_mode, events, book, _chapters=None):
    """Ground truth over the accepted events of ``book``.

    ``events`` may contain discarded events; only those with a chapter count.
    """
    chapters = _chapters if _chapters is not None else _chapter_index(book)
    matched = [e for e in matching_events(cue, events) if e.index in chapters]
    if not matched:
        return GroundTruth("empty"), []
    indices = [e.index for e in matched]
    if trace == "FullDetails":
        return GroundTruth("chapter", tuple(chapters[e.index].text for e in matched)), indices
    if get_mode == "all":
        seen = []
        for e in matched:
            for v in _trace_values(trace, e, chapters):
                if v not in seen:
                    seen.append(v)
        return GroundTruth("set", tuple(seen)), indices
    dated = sorted(matched, key=lambda e: parse_date(e.t))
    if get_mode == "latest":
        last = dated[-1]
        if len(dated) > 1 and parse_date(dated[-2].t) == parse_date(last.t):
            raise AmbiguousLatest(f"two matching events on {last.t}")
        return GroundTruth("latest", tuple(_trace_values(trace, last, chapters))), indices
    values = []
    for e in dated:
        values.extend(_trace_values(trace, e, chapters))
    return GroundTruth("chrono", tuple(values)), indices


def _instantiate(template, cue_full, kind, events, book, chapters):
    cue = {k: cue_full[k] for k in template.cue_mask}
    gt, idx = compute_ground_truth(cue, template.trace, template.get_mode, events, book, chapters)
    return Question(make_qid(template.template_id, cue, kind), template.template_id, cue, kind, idx,
                    template.render(cue), gt, template.trace, template.get_mode)


def accepted_events(events, book):
    chapters = _chapter_index(book)
    return [e for e in events if e.index in chapters]


def instantiate_questions(events, book, templates, dedup=True):
    chapters = _chapter_index(book)
    by_index = {e.index: e for e in events}
    out, seen = [], set()
    for ch in book.chapters:
        ev = by_index[ch.event_index]
        full = {k: getattr(ev, k) for k in SLOTS}
        for tpl in templates:
            q = _instantiate(tpl, full, "nonempty", events, book, chapters)
            if dedup and q.question_text in seen:
                continue
            seen.add(q.question_text)
            out.append(q)
    return out


def generate_empty_questions(events, universe, book, templates, seed=0, exclude_texts=()):
    """Questions whose cue matches no accepted event, built by corrupting real tuples."""
    chapters = _chapter_index(book)
    live = accepted_events(events, book)
    used = {k: {getattr(e, k) for e in live} for k in SLOTS}
    unused = {k: [v for v in universe.slot_values(k) if v not in used[k]] for k in SLOTS}
    seen = set(exclude_texts)
    out = []
    for src in live:
        for strategy in ("inner", "outer"):
            rng = np.random.default_rng(derive_seed(seed, "empty", src.index, strategy))
            mask = rng.random(4) < 0.5
            cue = {k: getattr(src, k) for k in SLOTS}
            for slot, flip in zip(SLOTS, mask):
                if not flip:
                    continue
                if strategy == "inner":
                    pool = sorted({getattr(e, slot) for e in live if e.index != src.index} - {cue[slot]})
                else:
                    pool = unused[slot]
                if pool:
                    cue[slot] = pool[int(rng.integers(len(pool)))]
            kind = f"empty_{strategy}"
            for tpl in templates:
                q = _instantiate(tpl, cue, kind, events, book, chapters)
                if q.matching_event_indices or q.question_text in seen:
                    continue
                seen.add(q.question_text)
                out.append(q)
    return out


def select_balanced(questions, n_target=5, seed=0):
    """Up to ``n_target`` questions per (template_id, bin) cell, seeded per cell."""
    cells = {}
    for pos, q in enumerate(questions):
        cells.setdefault((q.template_id, q.bin), []).append(pos)
    picked = []
    for (tid, b), positions in cells.items():
        k = min(n_target, len(positions))
        rng = np.random.default_rng(derive_seed(seed, "select", tid, b))
        chosen = rng.choice(len(positions), size=k, replace=False)
        picked.extend(positions[int(i)] for i in chosen)
    picked.sort(key=lambda p: (questions[p].template_id, BINS.index(questions[p].bin), p))
    return [questions[p] for p in picked]


def canonical_answer(gt: GroundTruth):
    """Reference answer text used for fine-tuning and for replaying ground truth."""
    if gt.kind == "chapter":
        return "\n\n".join(gt.items)
    if not gt.items:
        return NEGATIVE_ANSWER
    return "The answer is: " + "; ".join(gt.items) + "."


def export_finetune_dataset(questions):
    records = []
    for q in questions:
        if q.bin != "1" or q.kind != "nonempty":
            continue
        records.append({"messages": [
            {"role": "system", "content": prompts.ANSWER_SYSTEM},
            {"role": "user", "content": prompts.fill(prompts.ANSWER_FINETUNED, question=q.question_text)},
            {"role": "assistant", "content": canonical_answer(q.ground_truth)},
        ]})
    return records
