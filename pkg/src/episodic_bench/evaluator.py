"""Judge-assisted scoring: lenient F1 and Kendall's tau for chronological answers."""

from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field

from . import prompts
from ._util import extract_json_object
from .gateway import GatewayError, ModelRef
from .verify import VerdictUnparseable

JUDGE_SYSTEM = "You are an expert judge."


class TooShort(ValueError):
    pass


@dataclass
class JudgeVerdict:
    identified_items: list
    matching_scores: list  # [(gt_item, score)] in ground-truth order
    explanation: str = ""
    raw_payload: str = ""

    @property
    def scores(self):
        return [s for _, s in self.matching_scores]

    def to_dict(self):
        return {"identified_items": self.identified_items,
                "matching_scores": [[g, s] for g, s in self.matching_scores],
                "explanation": self.explanation}


@dataclass
class ScoreRecord:
    n_gt: int
    n_iditems: int
    n_pred: int
    sum_scores: float
    precision: float
    recall: float
    f1: float
    kendall_tau: float | None = None

    def to_dict(self):
        return {"n_gt": self.n_gt, "n_iditems": self.n_iditems, "n_pred": self.n_pred,
                "S": self.sum_scores, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "kendall_tau": self.kendall_tau}


def render_ground_truth(items):
    return json.dumps(list(items), ensure_ascii=False)


def render_judge_prompt(retrieval_type, ground_truth_items, answer_text):
    return JUDGE_SYSTEM, prompts.fill(prompts.EVAL_JUDGE, retrieval_type=retrieval_type,
                                      correct_answer=render_ground_truth(ground_truth_items),
                                      llm_answer=answer_text)


def _coerce_score(v):
    if isinstance(v, bool):
        v = float(v)
    if isinstance(v, str):
        v = float(v.strip())
    v = float(v)
    if math.isnan(v):
        raise ValueError("NaN score")
    return min(1.0, max(0.0, v))


def parse_judge_verdict(raw, ground_truth_items) -> JudgeVerdict:
    """Parse a judge reply and align its scores to the ground-truth items.

    Scores are matched to items by text (exact, then case-insensitive),
    each reply entry used at most once; unmatched items score 0.
    """
    obj = extract_json_object(raw or "")
    if obj is None:
        raise VerdictUnparseable("no JSON object in judge response")
    items = obj.get("identified_items_in_AI_answer")
    if not isinstance(items, list):
        raise VerdictUnparseable("identified_items_in_AI_answer missing or not a list")
    entries = obj.get("matching_score", [])
    if isinstance(entries, dict):
        entries = [{k: v} for k, v in entries.items()]
    if not isinstance(entries, list):
        raise VerdictUnparseable("matching_score is not a list")
    pairs = []
    for e in entries:
        if isinstance(e, dict):
            for k, v in e.items():
                try:
                    pairs.append((str(k), _coerce_score(v)))
                except (TypeError, ValueError):
                    pairs.append((str(k), 0.0))
    used = [False] * len(pairs)

    def take(pred):
        for i, (k, s) in enumerate(pairs):
            if not used[i] and pred(k):
                used[i] = True
                return s
        return None

    aligned = []
    for g in ground_truth_items:
        s = take(lambda k: k == g)
        if s is None:
            s = take(lambda k: k.casefold() == g.casefold())
        aligned.append((g, 0.0 if s is None else s))
    return JudgeVerdict([str(x) for x in items], aligned, str(obj.get("explanation", "")), raw)


def judge_answer(gateway, judge: ModelRef, retrieval_type, ground_truth_items, answer_text):
    system, user = render_judge_prompt(retrieval_type, ground_truth_items, answer_text)
    raw = gateway.chat(judge.request(system, user))
    return parse_judge_verdict(raw, ground_truth_items)


def compute_f1(verdict: JudgeVerdict, n_gt) -> ScoreRecord:
    n_id = len(verdict.identified_items)
    S = float(sum(verdict.scores))
    if n_gt == 0:
        f1 = 1.0 if n_id == 0 else 0.0
        return ScoreRecord(0, n_id, n_id, S, f1, f1, f1)
    n_pred = min(n_id, n_gt)
    # A judge may score more ground-truth items than it identified; cap at 1.
    precision = min(1.0, S / n_pred) if n_pred else 0.0
    recall = S / n_gt
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ScoreRecord(n_gt, n_id, n_pred, S, precision, recall, f1)


def is_full_match(record: ScoreRecord):
    return record.n_gt > 0 and record.sum_scores == record.n_gt and record.n_iditems == record.n_gt


def render_chrono_prompt(ground_truth_items, predicted_items):
    gt_idx = list(range(len(ground_truth_items)))
    return JUDGE_SYSTEM, prompts.fill(prompts.CHRONO_JUDGE, groundtruth_items=repr(list(ground_truth_items)),
                                      groundtruth_indexes=repr(gt_idx),
                                      predicted_items=repr(list(predicted_items)))


def parse_chrono_verdict(raw, n_gt, n_pred):
    obj = extract_json_object(raw or "")
    if obj is None:
        raise VerdictUnparseable("no JSON object in chrono judge response")
    pred = obj.get("predicted_indexes")
    if not isinstance(pred, list) or len(pred) != n_pred:
        raise VerdictUnparseable("predicted_indexes missing or wrong length")
    try:
        pred = [int(x) for x in pred]
    except (TypeError, ValueError) as exc:
        raise VerdictUnparseable(f"non-integer index: {exc}") from exc
    if any(x < -1 or x >= n_gt for x in pred):
        raise VerdictUnparseable("index out of range")
    return list(range(n_gt)), pred


def match_chrono(gateway, judge: ModelRef, ground_truth_items, predicted_items):
    system, user = render_chrono_prompt(ground_truth_items, predicted_items)
    raw = gateway.chat(judge.request(system, user))
    return parse_chrono_verdict(raw, len(ground_truth_items), len(predicted_items))


def kendall_tau(reference, candidate):
    """Tau-a between two equally long sequences of distinct ranks."""
    n = len(reference)
    if n != len(candidate):
        raise ValueError("sequences must have equal length")
    if n < 2:
        raise TooShort("need at least two elements")
    conc = disc = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = (reference[i] - reference[j]) * (candidate[i] - candidate[j])
            if a > 0:
                conc += 1
            elif a < 0:
                disc += 1
    return (conc - disc) / (n * (n - 1) / 2)


def tau_from_indexes(predicted_indexes):
    """Tau between answer order and ground-truth order over matched predictions."""
    kept = [x for x in predicted_indexes if x != -1]
    return kendall_tau(list(range(len(kept))), kept)


@dataclass
class ScoredAnswer:
    qid: str
    mode: str
    model: str
    status: str
    verdict: dict | None = None
    score: ScoreRecord | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"qid": self.qid, "mode": self.mode, "model": self.model, "status": self.status,
             "verdict": self.verdict}
        if self.score is not None:
            d.update(self.score.to_dict())
        else:
            d.update({k: None for k in ("n_gt", "n_iditems", "n_pred", "S", "precision", "recall",
                                        "f1", "kendall_tau")})
        if self.diagnostics:
            d["diagnostics"] = self.diagnostics
        return d


def score_answer(gateway, judge: ModelRef, question, answer):
    """Full scoring path for one answer record."""
    if answer.status != "answered" or answer.answer_text is None:
        return ScoredAnswer(question.qid, answer.mode, answer.model, "unanswered")
    gt = list(question.ground_truth.items)
    try:
        verdict = judge_answer(gateway, judge, question.trace, gt, answer.answer_text)
    except (VerdictUnparseable, GatewayError) as exc:
        return ScoredAnswer(question.qid, answer.mode, answer.model, "unevaluated",
                            diagnostics={"error": f"{type(exc).__name__}: {exc}"})
    record = compute_f1(verdict, len(gt))
    out = ScoredAnswer(question.qid, answer.mode, answer.model, "scored", verdict.to_dict(), record)
    if question.get_mode == "chrono" and len(gt) >= 2 and is_full_match(record):
        try:
            _, pred = match_chrono(gateway, judge, gt, verdict.identified_items)
            record.kendall_tau = tau_from_indexes(pred)
        except (VerdictUnparseable, GatewayError, TooShort) as exc:
            out.diagnostics["kendall"] = f"{type(exc).__name__}: {exc}"
    return out


def parse_python_list(text):
    """Read a list literal as printed in the chrono prompt."""
    val = ast.literal_eval(text)
    if not isinstance(val, list):
        raise ValueError("not a list")
    return val
