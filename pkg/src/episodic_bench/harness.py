"""Answering questions with in-context, retrieval-augmented or fine-tuned memory."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import prompts
from .gateway import DimensionMismatch, EmbedRequest, GatewayError, ModelRef
from .verify import MalformedNumbering, parse_paragraphs

log = logging.getLogger(__name__)

PARAGRAPH_TOP_K = 30
CHAPTER_TOP_K = 17


@dataclass(frozen=True)
class InContext:
    name = "in_context"


@dataclass(frozen=True)
class Rag:
    granularity: str = "paragraph"
    top_k: int = PARAGRAPH_TOP_K

    def __post_init__(self):
        if self.granularity not in ("paragraph", "chapter"):
            raise ValueError("granularity must be 'paragraph' or 'chapter'")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    @property
    def name(self):
        return f"rag_{self.granularity}_k{self.top_k}"


@dataclass(frozen=True)
class FineTuned:
    model_id: str

    @property
    def name(self):
        return "fine_tuned"


def mode_from_dict(d):
    kind = d.get("kind", "in_context")
    if kind == "in_context":
        return InContext()
    if kind == "rag":
        gran = d.get("granularity", "paragraph")
        default_k = PARAGRAPH_TOP_K if gran == "paragraph" else CHAPTER_TOP_K
        return Rag(gran, int(d.get("top_k", default_k)))
    if kind == "fine_tuned":
        return FineTuned(d["model_id"])
    raise ValueError(f"unknown memory mode {kind!r}")


@dataclass
class Chunk:
    label: str
    text: str
    position: int
    embedding: list | None = field(default=None, repr=False)


def chunk_book(book, granularity="paragraph"):
    """One chunk per numbered paragraph (markers stripped) or per chapter."""
    chunks = []
    for ch in book.chapters:
        if granularity == "chapter":
            chunks.append(Chunk(f"Chapter {ch.chapter_number}", ch.text, len(chunks)))
            continue
        try:
            paragraphs = parse_paragraphs(ch.text)
        except MalformedNumbering:
            paragraphs = [(1, ch.text.strip())]
        for num, body in paragraphs:
            chunks.append(Chunk(f"Chapter {ch.chapter_number}, Paragraph {num}", body, len(chunks)))
    if granularity not in ("paragraph", "chapter"):
        raise ValueError(f"unknown granularity {granularity!r}")
    return chunks


def rank_by_cosine(query, matrix, top_k):
    """Indices of the top_k rows by cosine similarity, ties by ascending row index."""
    q = np.asarray(query, dtype=float)
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[1] != q.shape[0]:
        raise DimensionMismatch(f"query dim {q.shape} vs chunk matrix {m.shape}")
    norms = np.linalg.norm(m, axis=1) * np.linalg.norm(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms > 0, m @ q / np.where(norms > 0, norms, 1.0), 0.0)
    # Rounding absorbs float noise so that mathematically equal cosines tie.
    cos = np.round(cos, 12)
    order = np.lexsort((np.arange(len(cos)), -cos))
    return [int(i) for i in order[:top_k]]


def embed_texts(gateway, embedder: ModelRef, texts, batch_size=64):
    vectors = []
    for i in range(0, len(texts), batch_size):
        vectors.extend(gateway.embed(EmbedRequest(embedder.provider_id, embedder.model,
                                                  tuple(texts[i:i + batch_size]))))
    return vectors


def retrieve_context(gateway, question_text, chunks, top_k, embedder: ModelRef):
    missing = [c for c in chunks if c.embedding is None]
    if missing:
        for c, v in zip(missing, embed_texts(gateway, embedder, [f"{c.label}: {c.text}" for c in missing])):
            c.embedding = v
    if not chunks:
        return []
    (qvec,) = gateway.embed(EmbedRequest(embedder.provider_id, embedder.model, (question_text,)))
    idx = rank_by_cosine(qvec, [c.embedding for c in chunks], top_k)
    return [chunks[i] for i in idx]


class ChunkRetriever(BaseEstimator):
    """Cosine top-k retriever with a fit/predict surface.

    ``fit`` embeds the chunks; ``predict`` returns, for each question text,
    the list of retrieved chunks in rank order.
    """

    def __init__(self, gateway=None, embedder=None, top_k=PARAGRAPH_TOP_K):
        self.gateway = gateway
        self.embedder = embedder
        self.top_k = top_k

    def fit(self, chunks, y=None):
        self.chunks_ = list(chunks)
        missing = [c for c in self.chunks_ if c.embedding is None]
        if missing:
            vecs = embed_texts(self.gateway, self.embedder, [f"{c.label}: {c.text}" for c in missing])
            for c, v in zip(missing, vecs):
                c.embedding = v
        self.matrix_ = np.asarray([c.embedding for c in self.chunks_], dtype=float)
        return self

    def predict(self, questions):
        out = []
        for q in questions:
            (qvec,) = self.gateway.embed(EmbedRequest(self.embedder.provider_id, self.embedder.model, (q,)))
            out.append([self.chunks_[i] for i in rank_by_cosine(qvec, self.matrix_, self.top_k)])
        return out


def format_chunks(chunks):
    return "\n\n".join(f"{c.label}: {c.text}" for c in chunks)


def render_answer_prompt(mode, question_text, book=None, chunks=None):
    if isinstance(mode, InContext):
        user = prompts.fill(prompts.ANSWER_IN_CONTEXT, book_content=book.assembled_text,
                            question=question_text)
    elif isinstance(mode, Rag):
        user = prompts.fill(prompts.ANSWER_RAG, book_chunks=format_chunks(chunks or []),
                            question=question_text)
    elif isinstance(mode, FineTuned):
        user = prompts.fill(prompts.ANSWER_FINETUNED, question=question_text)
    else:
        raise TypeError(f"unknown memory mode {mode!r}")
    return prompts.ANSWER_SYSTEM, user


@dataclass
class AnswerRecord:
    qid: str
    mode: str
    model: str
    answer_text: str | None
    status: str = "answered"
    request_meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"qid": self.qid, "mode": self.mode, "model": self.model,
                "answer_text": self.answer_text, "status": self.status,
                "request_meta": self.request_meta}

    @classmethod
    def from_dict(cls, d):
        return cls(d["qid"], d["mode"], d["model"], d.get("answer_text"), d.get("status", "answered"),
                   dict(d.get("request_meta") or {}))


def answer_question(gateway, mode, question, book, answerer: ModelRef, retriever=None):
    """Answer one question; provider failures become an Unanswered record."""
    model_ref = answerer
    meta = {}
    if isinstance(mode, FineTuned):
        model_ref = ModelRef(answerer.provider_id, mode.model_id, answerer.temperature,
                             answerer.max_output_tokens)
    try:
        chunks = None
        if isinstance(mode, Rag):
            if retriever is None:
                raise ValueError("RAG mode needs a fitted ChunkRetriever")
            chunks = retriever.predict([question.question_text])[0]
            meta["chunk_labels"] = [c.label for c in chunks]
        system, user = render_answer_prompt(mode, question.question_text, book, chunks)
        text = gateway.chat(model_ref.request(system, user))
    except GatewayError as exc:
        log.warning("question %s unanswered: %s", question.qid, exc)
        meta["error"] = f"{type(exc).__name__}: {exc}"
        return AnswerRecord(question.qid, mode.name, model_ref.model, None, "unanswered", meta)
    return AnswerRecord(question.qid, mode.name, model_ref.model, text, "answered", meta)
