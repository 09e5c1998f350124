"""Deterministic offline stand-ins for the author, judges, answerer and embedder.

The mock author reads the chapter prompt back and writes a chapter that meets
every placement constraint, so the whole pipeline runs without network access.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading

import numpy as np

from . import prompts
from .evaluator import parse_python_list
from .gateway import ProviderError
from .qagen import NEGATIVE_ANSWER, canonical_answer

_PROMPT_RE = re.compile(
    r"Write a detailed novel excerpt in a (?P<style>.+?) style about (?P<entity>.+?) attending a (?P<content>.+?)\.\n"
    r"The story takes place on (?P<date>.+?), at (?P<location>.+?), where (?P=entity) (?P<detail>.+?)\.\n")
_NB_RE = re.compile(r"Divide the text into (\d+) paragraph\(s\)")
_IDX_RE = {
    "location": re.compile(r"- Full location '.*?': must appear verbatim in paragraph (\d+) only"),
    "date": re.compile(r"- Full date '.*?': must appear verbatim in paragraph (\d+) only"),
    "entity": re.compile(r"- Full name '.*?': must appear verbatim in paragraph (\d+) only"),
    "content": re.compile(r"- Full detail that '.*?': must appear verbatim in paragraph (\d+) and"),
}
_FIRST_RE = re.compile(r"1\. Focus on (.+?)'s experiences")

FILLER = (
    "The air was thick with anticipation as the {content} unfolded.",
    "Every sound seemed sharper than usual, and {first} took it all in.",
    "Light shifted slowly across the scene while the hours passed.",
    "A quiet murmur ran through the crowd gathered for the {content}.",
    "{first} paused, letting the moment settle before moving on.",
    "Small details stood out, each one adding to the texture of the day.",
)


def parse_chapter_prompt(user_prompt):
    m = _PROMPT_RE.search(user_prompt)
    nb = _NB_RE.search(user_prompt)
    first = _FIRST_RE.search(user_prompt)
    if not (m and nb and first):
        raise ProviderError("mock author could not parse the chapter prompt")
    out = m.groupdict()
    out["nb_paragraphs"] = int(nb.group(1))
    out["first_name"] = first.group(1)
    out["idx"] = {k: int(r.search(user_prompt).group(1)) for k, r in _IDX_RE.items()}
    return out


def _digest(*parts):
    return int.from_bytes(hashlib.sha256(json.dumps(parts).encode()).digest()[:8], "big")


def write_compliant_chapter(spec, salt=0):
    """Chapter text meeting the placement rules encoded in ``spec``."""
    nb, idx, first, content = spec["nb_paragraphs"], spec["idx"], spec["first_name"], spec["content"]
    h = _digest(spec["entity"], spec["date"], salt)
    n_side = h % 4
    paragraphs = []
    for p in range(1, nb + 1):
        sent = [FILLER[(h + p) % len(FILLER)].format(content=content, first=first)]
        if idx["date"] == p:
            sent.append(f"It was {spec['date']}, and the day had only just begun.")
        if idx["location"] == p:
            sent.append(f"Everything happened at {spec['location']}.")
        if idx["entity"] == p:
            sent.append(f"{spec['entity']} had come for the {content}.")
        if idx["content"] == p:
            sent.append(f"Before long, {first} {spec['detail']}.")
        if n_side and p == 1 + (h // 7) % nb:
            names = [f"$entity_{i + 1}" for i in range(n_side)]
            sent.append(f"{', '.join(names)} stood nearby, watching closely.")
        if n_side >= 2 and p == nb:
            sent.append(f"Later, $entity_1 exchanged a glance with {first}.")
        sent.append(FILLER[(h + 3 * p + 1) % len(FILLER)].format(content=content, first=first))
        paragraphs.append(f"({p}) " + " ".join(sent))
    return "\n\n".join(paragraphs)


class MockAuthor:
    """Chapter writer.

    ``fail_keys`` holds (date, location) pairs whose chapters always violate the
    date placement; ``fail_all`` makes every chapter non-compliant;
    ``fail_first`` makes the first n calls per prompt non-compliant.
    """

    def __init__(self, fail_keys=(), fail_all=False, fail_first=0):
        self.fail_keys = {tuple(k) for k in fail_keys}
        self.fail_all = fail_all
        self.fail_first = fail_first
        self.calls = 0
        self._per_prompt = {}
        self._lock = threading.Lock()

    def chat(self, request):
        spec = parse_chapter_prompt(request.user_prompt)
        with self._lock:
            self.calls += 1
            n = self._per_prompt.get(request.user_prompt, 0)
            self._per_prompt[request.user_prompt] = n + 1
        text = write_compliant_chapter(spec)
        broken = (self.fail_all or (spec["date"], spec["location"]) in self.fail_keys
                  or n < self.fail_first)
        if broken:
            # Dropping the date breaks the placement rule for that paragraph.
            text = text.replace(spec["date"], "that day")
        return text

    def embed(self, request):
        raise ProviderError("mock author has no embeddings")


def _between(text, start, end):
    i = text.find(start)
    if i < 0:
        return None
    i += len(start)
    j = text.find(end, i)
    return text[i:j] if j >= 0 else text[i:]


NEGATIVE_PREFIXES = ("there is no", "i cannot", "i can't", "i don't", "i do not", "no information",
                     "the text does not", "i'm not sure", "i am not sure")


class MockJudge:
    """Chapter checker, answer judge and chrono matcher in one provider.

    The answer judge reads canonical "The answer is: a; b." replies exactly;
    anything else falls back to substring search for ground-truth items.
    """

    def __init__(self, checker_answers=None):
        self.checker_answers = checker_answers or {"1": True, "2": True, "3": True, "4": True}
        self.calls = 0
        self._lock = threading.Lock()

    def chat(self, request):
        with self._lock:
            self.calls += 1
        user = request.user_prompt
        if request.system_prompt == prompts.CHECKER_SYSTEM:
            return json.dumps(self.checker_answers)
        if user.startswith("You are an expert judge evaluating the accuracy"):
            return self._judge(user)
        if user.startswith("You are an expert judge evaluating the alignment"):
            return self._chrono(user)
        raise ProviderError("mock judge received an unknown prompt")

    def embed(self, request):
        raise ProviderError("mock judge has no embeddings")

    @staticmethod
    def _judge(user):
        gt = json.loads(_between(user, "\nGroundtruth: ", "\nAI-generated answer: "))
        answer = _between(user, "\nAI-generated answer: ", "\n\n\nYour task:").strip()
        low = answer.lower()
        if any(low.startswith(p) for p in NEGATIVE_PREFIXES):
            items = []
        elif answer.startswith("The answer is: "):
            body = answer[len("The answer is: "):]
            body = body[:-1] if body.endswith(".") else body
            items = [x for x in body.split("; ") if x]
        else:
            items = [g for g in gt if g in answer]
        folded = {x.casefold() for x in items}
        scores = [{g: 1 if (g.casefold() in folded or (len(g) > 200 and g in answer)) else 0} for g in gt]
        return json.dumps({"identified_items_in_AI_answer": items, "matching_score": scores,
                           "explanation": "mock judge: exact item matching"})

    @staticmethod
    def _chrono(user):
        gt = parse_python_list(_between(user, "Groundtruth list: ", "\n").strip())
        pred = parse_python_list(_between(user, "Predicted list: ", "\n").strip())
        used = set()
        out = []
        for p in pred:
            hit = -1
            for i, g in enumerate(gt):
                if i not in used and g.casefold() == p.casefold():
                    hit = i
                    break
            if hit >= 0:
                used.add(hit)
            out.append(hit)
        return json.dumps({"groundtruth_indexes": list(range(len(gt))), "predicted_indexes": out,
                           "explanation": "mock chrono matcher: earliest unused exact match"})


def question_from_prompt(user_prompt):
    q = _between(user_prompt, "## Question:\n\n", "\n\nPlease answer the question")
    if q is None:
        q = _between(user_prompt, "\n\nQuestion: ", "\0")
    return q.strip() if q is not None else None


class MockAnswerer:
    """Answers by policy: ``replay`` ground truth, ``abstain``, or ``fabricate``."""

    FABRICATED = "The answer is: Zephyr Quill; Gala of Lanterns; Obsidian Pier."

    def __init__(self, questions=(), policy="replay"):
        if policy not in ("replay", "abstain", "fabricate"):
            raise ValueError(f"unknown policy {policy!r}")
        self.policy = policy
        self.answers = {q.question_text: canonical_answer(q.ground_truth) for q in questions}

    def chat(self, request):
        if self.policy == "abstain":
            return NEGATIVE_ANSWER
        if self.policy == "fabricate":
            return self.FABRICATED
        q = question_from_prompt(request.user_prompt)
        return self.answers.get(q, NEGATIVE_ANSWER)

    def embed(self, request):
        raise ProviderError("mock answerer has no embeddings")


class HashingEmbedder:
    """Bag-of-words vectors hashed into ``dim`` buckets, L2-normalised."""

    def __init__(self, dim=256):
        self.dim = dim

    def vector(self, text):
        v = np.zeros(self.dim)
        for tok in re.findall(r"\w+", text.lower()):
            v[int.from_bytes(hashlib.md5(tok.encode()).digest()[:4], "big") % self.dim] += 1.0
        n = np.linalg.norm(v)
        if n == 0:
            v[0] = 1.0
            return v.tolist()
        return (v / n).tolist()

    def chat(self, request):
        raise ProviderError("embedder cannot chat")

    def embed(self, request):
        return [self.vector(t) for t in request.texts]


class ScriptedProvider:
    """Replays recorded replies in order (or by user prompt) and counts calls."""

    def __init__(self, replies=None, by_prompt=None):
        self.replies = list(replies or [])
        self.by_prompt = dict(by_prompt or {})
        self.calls = 0
        self._lock = threading.Lock()

    def chat(self, request):
        with self._lock:
            self.calls += 1
            if request.user_prompt in self.by_prompt:
                return self.by_prompt[request.user_prompt]
            if not self.replies:
                raise ProviderError("scripted provider ran out of replies")
            return self.replies.pop(0)

    def embed(self, request):
        raise ProviderError("scripted provider has no embeddings")
