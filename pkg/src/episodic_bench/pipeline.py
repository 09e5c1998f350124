"""Stage runners with persisted artifacts and a content-hash manifest.

Each stage reads its upstream files, writes its outputs atomically and records
``{config_hash, inputs, outputs}`` in ``manifest.json``.  A stage whose
manifest entry still matches both its config slice and the current bytes of
its inputs and outputs is skipped.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ._util import atomic_write, dump_json, dump_jsonl, read_jsonl, sha256_hex
from .bookgen import Book, NamePool, generate_book
from .config import model_ref, stage_config_hash
from .eventgen import Event, EventMeta, GeometricParams, generate_events, generate_meta
from .evaluator import score_answer
from .gateway import Gateway, OpenAICompatibleProvider
from .harness import AnswerRecord, ChunkRetriever, Rag, answer_question, chunk_book, mode_from_dict
from .qagen import (BINS, Question, export_finetune_dataset, generate_empty_questions,
                    instantiate_questions, load_templates, select_balanced)
from .report import build_report
from .universe import Universe, build_universe, load_corpus

log = logging.getLogger(__name__)

STAGES = ("universe", "events", "book", "questions", "answer", "judge", "report")

STAGE_IO = {
    "universe": ((), ("universe.json",)),
    "events": (("universe.json",), ("events.json", "metaevents.json")),
    "book": (("universe.json", "events.json", "metaevents.json"), ("book.json", "book.txt", "discards.json")),
    "questions": (("universe.json", "events.json", "book.json"),
                  ("questions.jsonl", "selected.jsonl", "finetune.jsonl")),
    "answer": (("book.json", "book.txt", "questions.jsonl", "selected.jsonl"), ("answers.jsonl",)),
    "judge": (("questions.jsonl", "answers.jsonl"), ("scores.jsonl",)),
    "report": (("questions.jsonl", "scores.jsonl"), ("report.csv", "report.md", "tracking.csv")),
}


class MissingUpstream(RuntimeError):
    pass


def _sha_file(path):
    return sha256_hex(Path(path).read_bytes())


class Workspace:
    """Output directory plus its manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"

    def path(self, name):
        return self.root / name

    def manifest(self):
        if not self.manifest_path.exists():
            return {}
        try:
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except ValueError:
            return {}

    def require(self, names, stage):
        missing = [n for n in names if not self.path(n).exists()]
        if missing:
            raise MissingUpstream(f"stage {stage!r} needs {', '.join(missing)}; run the upstream stage first")
        return {n: _sha_file(self.path(n)) for n in names}

    def is_fresh(self, stage, config_hash, inputs, outputs):
        entry = self.manifest().get(stage)
        if not entry or entry.get("config_hash") != config_hash or entry.get("inputs") != inputs:
            return False
        for name in outputs:
            p = self.path(name)
            if not p.exists() or entry.get("outputs", {}).get(name) != _sha_file(p):
                return False
        return True

    def commit(self, stage, config_hash, inputs, files):
        for name, data in files.items():
            atomic_write(self.path(name), data)
        manifest = self.manifest()
        manifest[stage] = {"config_hash": config_hash, "inputs": inputs,
                           "outputs": {n: sha256_hex(d if isinstance(d, bytes) else d.encode("utf-8"))
                                       for n, d in files.items()}}
        atomic_write(self.manifest_path, dump_json(manifest))


# -- loading artifacts -------------------------------------------------------

def load_universe(ws):
    return Universe.from_dict(json.loads(ws.path("universe.json").read_text(encoding="utf-8")))


def load_events(ws):
    return [Event.from_dict(d) for d in json.loads(ws.path("events.json").read_text(encoding="utf-8"))]


def load_metas(ws):
    return [EventMeta.from_dict(d) for d in json.loads(ws.path("metaevents.json").read_text(encoding="utf-8"))]


def load_book(ws):
    d = json.loads(ws.path("book.json").read_text(encoding="utf-8"))
    discards = json.loads(ws.path("discards.json").read_text(encoding="utf-8")) \
        if ws.path("discards.json").exists() else []
    return Book.from_dict(d, ws.path("book.txt").read_text(encoding="utf-8"), discards)


def load_questions(ws, name="questions.jsonl"):
    return [Question.from_dict(d) for d in read_jsonl(ws.path(name))]


# -- providers ---------------------------------------------------------------

def make_gateway(cfg, events=None, questions=None):
    """Gateway with configured HTTP providers, plus the offline mocks under --mock."""
    use_cache = cfg.get("cache_dir") and not cfg.get("use_mock")
    gw = Gateway(cache_dir=cfg["cache_dir"] if use_cache else None)
    for pid, spec in cfg["providers"].items():
        gw.register(pid, OpenAICompatibleProvider(spec["base_url"], spec["api_key_env"],
                                                  timeout=float(spec.get("timeout", 120.0)),
                                                  send_seed=bool(spec.get("send_seed", False))),
                    rate_per_sec=spec.get("rate_per_sec"))
    from . import mocks

    mock = cfg["mock"]
    by_index = {e.index: e for e in (events or [])}
    fail_keys = [(by_index[i].t, by_index[i].s) for i in mock["fail_event_indices"] if i in by_index]
    gw.register("mock-author", mocks.MockAuthor(fail_keys=fail_keys, fail_all=mock["author_fail_all"]))
    gw.register("mock-judge", mocks.MockJudge())
    gw.register("mock-answerer", mocks.MockAnswerer(questions or (), policy=mock["answer_policy"]))
    gw.register("mock-embed", mocks.HashingEmbedder())
    return gw


# -- stages --------------------------------------------------------------------

def _stage_universe(cfg, ws):
    corpus = load_corpus(cfg["corpus"])
    uni = build_universe(corpus, cfg["n_universe"], cfg["seed"])
    return {"universe.json": dump_json(uni.to_dict())}


def _stage_events(cfg, ws):
    corpus = load_corpus(cfg["corpus"])
    uni = load_universe(ws)
    events = generate_events(uni, cfg["n_events"], GeometricParams(cfg["geometric_p"], uni.n_universe),
                             seed=cfg["seed"])
    metas = generate_meta(events, corpus.style_catalog, seed=cfg["seed"])
    return {"events.json": dump_json([e.to_dict() for e in events]),
            "metaevents.json": dump_json([m.to_dict() for m in metas])}


def _stage_book(cfg, ws):
    corpus = load_corpus(cfg["corpus"])
    uni = load_universe(ws)
    events, metas = load_events(ws), load_metas(ws)
    gw = make_gateway(cfg, events=events)
    pool = NamePool.for_universe(corpus, uni, seed=cfg["seed"])
    book = generate_book(gw, events, metas, corpus.style_catalog, pool, model_ref(cfg, "author"),
                         model_ref(cfg, "verifier"), itermax=cfg["itermax"], book_seed=cfg["seed"],
                         workers=cfg["workers"], ordered=cfg["ordered_book"])
    return {"book.json": dump_json(book.to_dict()), "book.txt": book.assembled_text,
            "discards.json": dump_json(book.discards)}


def _stage_questions(cfg, ws):
    uni, events, book = load_universe(ws), load_events(ws), load_book(ws)
    templates = load_templates()
    nonempty = instantiate_questions(events, book, templates)
    empty = generate_empty_questions(events, uni, book, templates, seed=cfg["seed"],
                                     exclude_texts={q.question_text for q in nonempty})
    questions = nonempty + empty
    selected = select_balanced(questions, cfg["n_target"], seed=cfg["seed"])
    return {"questions.jsonl": dump_jsonl(q.to_dict() for q in questions),
            "selected.jsonl": dump_jsonl(q.to_dict() for q in selected),
            "finetune.jsonl": dump_jsonl(export_finetune_dataset(questions))}


def _pmap(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _stage_answer(cfg, ws):
    book = load_book(ws)
    questions = load_questions(ws, "selected.jsonl" if cfg["answer_set"] == "selected" else "questions.jsonl")
    gw = make_gateway(cfg, questions=questions)
    answerer, embedder = model_ref(cfg, "answerer"), model_ref(cfg, "embedder")
    records = []
    for mode_cfg in cfg["memory_modes"]:
        mode = mode_from_dict(mode_cfg)
        retriever = None
        if isinstance(mode, Rag):
            retriever = ChunkRetriever(gw, embedder, mode.top_k).fit(chunk_book(book, mode.granularity))
        records.extend(_pmap(lambda q: answer_question(gw, mode, q, book, answerer, retriever),
                             questions, cfg["workers"]))
    return {"answers.jsonl": dump_jsonl(r.to_dict() for r in records)}


def _stage_judge(cfg, ws):
    by_qid = {q.qid: q for q in load_questions(ws)}
    answers = [AnswerRecord.from_dict(d) for d in read_jsonl(ws.path("answers.jsonl"))]
    gw = make_gateway(cfg)
    judge = model_ref(cfg, "eval_judge")
    scored = _pmap(lambda a: score_answer(gw, judge, by_qid[a.qid], a), answers, cfg["workers"])
    return {"scores.jsonl": dump_jsonl(s.to_dict() for s in scored)}


def _stage_report(cfg, ws):
    by_qid = {q.qid: q for q in load_questions(ws)}
    report_csv, report_md, tracking_csv = build_report(read_jsonl(ws.path("scores.jsonl")), by_qid)
    return {"report.csv": report_csv, "report.md": report_md, "tracking.csv": tracking_csv}


RUNNERS = {"universe": _stage_universe, "events": _stage_events, "book": _stage_book,
           "questions": _stage_questions, "answer": _stage_answer, "judge": _stage_judge,
           "report": _stage_report}


def run_stage(stage, cfg, force=False):
    """Run one stage; returns True if it ran, False if it was skipped as fresh."""
    if stage not in RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    ws = Workspace(cfg["output_dir"])
    inputs_names, outputs = STAGE_IO[stage]
    inputs = ws.require(inputs_names, stage)
    chash = stage_config_hash(cfg, stage)
    if not force and ws.is_fresh(stage, chash, inputs, outputs):
        log.info("stage %s is up to date", stage)
        return False
    log.info("running stage %s", stage)
    files = RUNNERS[stage](cfg, ws)
    ws.commit(stage, chash, inputs, files)
    return True


def summarize(cfg):
    """Counts derived from the artifacts on disk, so reruns print the same summary."""
    ws = Workspace(cfg["output_dir"])
    out = {}
    if ws.path("book.json").exists():
        book = load_book(ws)
        out["accepted"] = len(book.chapters)
        out["discarded"] = len(book.discarded_events)
    if ws.path("selected.jsonl").exists():
        allq = load_questions(ws)
        sel = load_questions(ws, "selected.jsonl")
        out["questions"] = len(allq)
        out["selected"] = len(sel)
        counts = Counter(q.bin for q in sel)
        out["selected_per_bin"] = {b: counts.get(b, 0) for b in BINS}
    if ws.path("scores.jsonl").exists():
        scores = read_jsonl(ws.path("scores.jsonl"))
        tally = Counter(s["status"] for s in scores)
        out["scored"] = tally.get("scored", 0)
        out["unevaluated"] = tally.get("unevaluated", 0)
        out["unanswered"] = tally.get("unanswered", 0)
        f1s = [s["f1"] for s in scores if s["status"] == "scored"]
        out["mean_f1"] = sum(f1s) / len(f1s) if f1s else None
    return out


def format_summary(summary):
    lines = []
    if "accepted" in summary:
        lines.append(f"chapters: {summary['accepted']} accepted, {summary['discarded']} discarded")
    if "selected" in summary:
        bins = ", ".join(f"{b}: {n}" for b, n in summary["selected_per_bin"].items())
        lines.append(f"questions: {summary['questions']} generated, {summary['selected']} selected ({bins})")
    if "scored" in summary:
        lines.append(f"answers: {summary['scored']} scored, {summary['unevaluated']} unevaluated, "
                     f"{summary['unanswered']} unanswered")
        if summary["mean_f1"] is not None:
            lines.append(f"mean F1: {summary['mean_f1']:.4f}")
    return "\n".join(lines)


def run_pipeline(cfg, force=False):
    for stage in STAGES:
        run_stage(stage, cfg, force=force)
    return summarize(cfg)
