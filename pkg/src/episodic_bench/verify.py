"""Exact structural checks and judge-based semantic checks for chapter candidates."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import prompts
from ._util import extract_json_object
from .gateway import ChatRequest

MARKER_RE = re.compile(r"(?m)^\(([^()\n]*)\)[ \t]")
PLACEHOLDER_RE = re.compile(r"\$entity_\d+")
# Anything that looks like an attempt at a placeholder; each hit must match
# PLACEHOLDER_RE in full.
PLACEHOLDER_CANDIDATE_RE = re.compile(r"\$?\b[Ee]ntity_\w*|\$[A-Za-z_]\w*")

RULE_NUMBERING = "numbering"
RULE_PARAGRAPH_COUNT = "paragraph_count"
RULE_PLACEHOLDER = "placeholder_grammar"
RULE_MISSING = "feature_missing"
RULE_ELSEWHERE = "feature_elsewhere"


class MalformedNumbering(ValueError):
    def __init__(self, message, expected=None, found=None):
        super().__init__(message)
        self.expected = expected
        self.found = found


class VerdictUnparseable(ValueError):
    pass


def detail_phrase(detail):
    """Detail as it follows a name in running text: 'Demonstrated x' -> 'demonstrated x'."""
    return detail[:1].lower() + detail[1:]


def content_feature(event):
    return f"{event.first_name} {detail_phrase(event.d)}"


def event_features(event):
    return {"date": event.t, "location": event.s, "entity": event.ent,
            "content": content_feature(event)}


def parse_paragraphs(text):
    """Split ``(1) ...`` style text into [(number, body)].

    Numbering must start at 1 and step by one. Never raises anything other
    than MalformedNumbering.
    """
    if not isinstance(text, str):
        raise MalformedNumbering("text must be a string")
    marks = list(MARKER_RE.finditer(text))
    if not marks:
        raise MalformedNumbering("no paragraph markers found", expected=1)
    if text[:marks[0].start()].strip():
        raise MalformedNumbering("text before the first paragraph marker", expected=1)
    out = []
    for i, m in enumerate(marks):
        label = m.group(1)
        expected = i + 1
        if not (label.isascii() and label.isdigit()):
            raise MalformedNumbering(f"non-numeric marker ({label})", expected, label)
        if int(label) != expected:
            raise MalformedNumbering(f"expected paragraph {expected}, found ({label})",
                                     expected, int(label))
        end = marks[i + 1].start() if i + 1 < len(marks) else len(text)
        out.append((expected, text[m.end():end].strip()))
    return out


@dataclass(frozen=True)
class Violation:
    rule_id: str
    message: str
    paragraph_number: int | None = None
    feature: str | None = None

    def to_dict(self):
        return {"rule_id": self.rule_id, "paragraph_number": self.paragraph_number,
                "feature": self.feature, "message": self.message}


@dataclass
class StructuralReport:
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    @property
    def rule_ids(self):
        return {v.rule_id for v in self.violations}


def verify_structure(text, event, meta) -> StructuralReport:
    report = StructuralReport()
    try:
        paragraphs = parse_paragraphs(text)
    except MalformedNumbering as exc:
        report.violations.append(Violation(RULE_NUMBERING, str(exc), exc.expected))
        return report

    if len(paragraphs) != meta.nb_paragraphs:
        report.violations.append(Violation(
            RULE_PARAGRAPH_COUNT, f"expected {meta.nb_paragraphs} paragraphs, found {len(paragraphs)}"))

    for num, body in paragraphs:
        for m in PLACEHOLDER_CANDIDATE_RE.finditer(body):
            if not PLACEHOLDER_RE.fullmatch(m.group(0)):
                report.violations.append(Violation(
                    RULE_PLACEHOLDER, f"malformed character reference {m.group(0)!r}", num))

    for feature, value in event_features(event).items():
        target = meta.idx_paragraph[feature]
        for num, body in paragraphs:
            present = value in body
            if num == target and not present:
                report.violations.append(Violation(
                    RULE_MISSING, f"{feature} {value!r} not found in paragraph {num}", num, feature))
            elif num != target and present:
                report.violations.append(Violation(
                    RULE_ELSEWHERE, f"{feature} {value!r} also appears in paragraph {num}", num, feature))
        if target > len(paragraphs):
            report.violations.append(Violation(
                RULE_MISSING, f"{feature} paragraph {target} does not exist", target, feature))
    return report


@dataclass(frozen=True)
class SemanticVerdict:
    answers: dict
    raw_payload: str

    @property
    def valid(self):
        return all(self.answers.values())

    @property
    def failed_questions(self):
        return [k for k, v in sorted(self.answers.items()) if not v]


def render_judge_prompt(text):
    return prompts.CHECKER_SYSTEM, prompts.fill(prompts.CHECKER_USER, generated_chapter_candidate=text)


def _as_bool(v):
    # The prompt shows "[boolean]", so single-element lists are accepted too.
    if isinstance(v, list) and len(v) == 1:
        v = v[0]
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.strip().lower() in ("true", "false"):
        return v.strip().lower() == "true"
    raise VerdictUnparseable(f"not a boolean: {v!r}")


def parse_semantic_verdict(raw) -> SemanticVerdict:
    obj = extract_json_object(raw or "")
    if obj is None:
        raise VerdictUnparseable("no JSON object in judge response")
    try:
        answers = {q: _as_bool(obj[str(q)]) for q in (1, 2, 3, 4)}
    except KeyError as exc:
        raise VerdictUnparseable(f"missing answer for question {exc}") from exc
    return SemanticVerdict(answers, raw)


def verify_semantics(gateway, text, provider_id, model, *, seed=None, temperature=0.0,
                     max_output_tokens=256) -> SemanticVerdict:
    system, user = render_judge_prompt(text)
    raw = gateway.chat(ChatRequest(provider_id, model, system, user, max_output_tokens,
                                   temperature, seed))
    return parse_semantic_verdict(raw)
