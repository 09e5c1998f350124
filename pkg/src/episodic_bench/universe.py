"""Seed corpora and the static universe of dates, locations, entities and contents."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

MONTHS = ("January", "February", "March", "April", "May", "June", "July",
          "August", "September", "October", "November", "December")
BUNDLED_CORPORA = ("city_life", "world_news", "sci_fi")


class CorpusInvalid(ValueError):
    pass


class InsufficientCorpus(ValueError):
    pass


def render_date(d: dt.date) -> str:
    # Locale-independent "Month DD, YYYY" with a zero-padded day.
    return f"{MONTHS[d.month - 1]} {d.day:02d}, {d.year:04d}"


def parse_date(text: str) -> dt.date:
    try:
        month, rest = text.split(" ", 1)
        day, year = rest.split(", ")
        return dt.date(int(year), MONTHS.index(month) + 1, int(day))
    except ValueError as exc:
        raise ValueError(f"not a 'Month DD, YYYY' date: {text!r}") from exc


@dataclass(frozen=True)
class SeedCorpus:
    first_names: tuple
    last_names: tuple
    locations: tuple
    contents: tuple
    content_details: dict
    style_catalog: dict
    secondary_first_names: tuple
    secondary_last_names: tuple
    date_range: tuple
    name: str = "custom"

    @property
    def start_date(self):
        return dt.date.fromisoformat(self.date_range[0])

    @property
    def end_date(self):
        return dt.date.fromisoformat(self.date_range[1])


_MINIMUMS = {"first_names": 100, "last_names": 100, "locations": 100, "contents": 100,
             "secondary_first_names": 500, "secondary_last_names": 1000}


def validate_corpus(raw: dict, minimums=None) -> SeedCorpus:
    """Build a SeedCorpus from a dict, raising CorpusInvalid on the first problem."""
    mins = _MINIMUMS if minimums is None else minimums
    for key in (*_MINIMUMS, "content_details", "style_catalog", "date_range"):
        if key not in raw:
            raise CorpusInvalid(f"missing field: {key}")
    for key, lo in mins.items():
        seq = raw[key]
        if not isinstance(seq, list) or not all(isinstance(x, str) and x for x in seq):
            raise CorpusInvalid(f"{key}: must be a list of non-empty strings")
        if len(seq) < lo:
            raise CorpusInvalid(f"{key}: needs at least {lo} entries, has {len(seq)}")
        seen = set()
        for x in seq:
            if x in seen:
                raise CorpusInvalid(f"{key}: duplicate entry {x!r}")
            seen.add(x)
    details = raw["content_details"]
    for c in raw["contents"]:
        lst = details.get(c)
        if not lst:
            raise CorpusInvalid(f"content_details: content {c!r} has no details")
    styles = raw["style_catalog"]
    if not styles:
        raise CorpusInvalid("style_catalog: empty")
    for s, adjs in styles.items():
        if not adjs:
            raise CorpusInvalid(f"style_catalog: style {s!r} has no adjectives")
    try:
        start, end = (dt.date.fromisoformat(x) for x in raw["date_range"])
    except (TypeError, ValueError) as exc:
        raise CorpusInvalid(f"date_range: {exc}") from exc
    if not start < end:
        raise CorpusInvalid("date_range: start_date must precede end_date")
    return SeedCorpus(
        first_names=tuple(raw["first_names"]),
        last_names=tuple(raw["last_names"]),
        locations=tuple(raw["locations"]),
        contents=tuple(raw["contents"]),
        content_details={c: tuple(raw["content_details"][c]) for c in raw["contents"]},
        style_catalog={s: tuple(a) for s, a in styles.items()},
        secondary_first_names=tuple(raw["secondary_first_names"]),
        secondary_last_names=tuple(raw["secondary_last_names"]),
        date_range=(start.isoformat(), end.isoformat()),
        name=raw.get("name", "custom"),
    )


def load_corpus(path="city_life") -> SeedCorpus:
    """Load a corpus from a JSON path, or a bundled corpus by name."""
    if str(path) in BUNDLED_CORPORA:
        text = resources.files("episodic_bench").joinpath(f"data/corpora/{path}.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusInvalid(f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CorpusInvalid("top-level JSON value must be an object")
    return validate_corpus(raw)


@dataclass
class Universe:
    seed: int
    n_universe: int
    temporal: list
    spatial: list
    entities: list
    contents: list
    content_details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(seed=d["seed"], n_universe=d["n_universe"], temporal=list(d["temporal"]),
                   spatial=list(d["spatial"]), entities=list(d["entities"]),
                   contents=list(d["contents"]),
                   content_details={k: list(v) for k, v in d["content_details"].items()})

    def slot_values(self, slot):
        return {"t": self.temporal, "s": self.spatial, "ent": self.entities, "c": self.contents}[slot]


def build_universe(corpus: SeedCorpus, n_universe=100, seed=0) -> Universe:
    if n_universe < 1:
        raise InsufficientCorpus("n_universe must be positive")
    n_days = (corpus.end_date - corpus.start_date).days + 1
    limits = {"locations": len(corpus.locations), "contents": len(corpus.contents),
              "days": n_days, "names": len(corpus.first_names) * len(corpus.last_names)}
    for what, have in limits.items():
        if n_universe > have:
            raise InsufficientCorpus(f"n_universe={n_universe} exceeds available {what} ({have})")

    rng = np.random.default_rng(seed)
    offsets = rng.choice(n_days, size=n_universe, replace=False)
    temporal = [render_date(corpus.start_date + dt.timedelta(days=int(o))) for o in offsets]

    entities, seen = [], set()
    attempts = 0
    while len(entities) < n_universe:
        attempts += 1
        if attempts > 10 * n_universe:
            raise InsufficientCorpus("could not draw enough distinct full names")
        first = corpus.first_names[rng.integers(len(corpus.first_names))]
        last = corpus.last_names[rng.integers(len(corpus.last_names))]
        full = f"{first} {last}"
        if full not in seen:
            seen.add(full)
            entities.append(full)

    spatial = [corpus.locations[i] for i in rng.permutation(len(corpus.locations))[:n_universe]]
    contents = [corpus.contents[i] for i in rng.permutation(len(corpus.contents))[:n_universe]]
    details = {c: list(corpus.content_details[c]) for c in contents}
    return Universe(seed=int(seed), n_universe=n_universe, temporal=temporal, spatial=spatial,
                    entities=entities, contents=contents, content_details=details)
