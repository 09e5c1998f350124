"""Synthetic episodic-memory benchmark: universe, events, book, questions, answering and scoring."""

from .bookgen import Book, Chapter, assemble_book, generate_book
from .eventgen import Event, EventMeta, GeometricParams, generate_events, generate_meta
from .evaluator import compute_f1, kendall_tau, score_answer
from .gateway import ChatRequest, EmbedRequest, Gateway, ModelRef
from .qagen import Question, instantiate_questions, select_balanced
from .universe import Universe, build_universe, load_corpus

__version__ = "0.1.0"

__all__ = [
    "Book", "Chapter", "ChatRequest", "EmbedRequest", "Event", "EventMeta", "Gateway",
    "GeometricParams", "ModelRef", "Question", "Universe", "assemble_book", "build_universe",
    "compute_f1", "generate_book", "generate_events", "generate_meta", "instantiate_questions",
    "kendall_tau", "load_corpus", "score_answer", "select_balanced",
]
