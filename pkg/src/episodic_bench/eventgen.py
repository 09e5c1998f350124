"""Event sampling under a truncated geometric law, plus per-event chapter metadata."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._util import derive_seed

FEATURES = ("date", "location", "entity", "content")
TABLE_BINS = (("1", 1, 1), ("2", 2, 2), ("3-5", 3, 5), ("6+", 6, None))


class OutOfSupport(ValueError):
    pass


class ExhaustedAttempts(RuntimeError):
    pass


@dataclass(frozen=True)
class GeometricParams:
    p: float = 0.1
    support_size: int = 100

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.support_size < 1:
            raise ValueError("support_size must be positive")


def truncated_geometric_pmf(i, params: GeometricParams) -> float:
    if not 0 <= i < params.support_size:
        raise OutOfSupport(f"index {i} outside [0, {params.support_size})")
    q = 1.0 - params.p
    return q**i * params.p / (1.0 - q**params.support_size)


def pmf_vector(params: GeometricParams) -> np.ndarray:
    q = 1.0 - params.p
    i = np.arange(params.support_size)
    return q**i * params.p / (1.0 - q**params.support_size)


def _sampler(probs):
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    last = len(cdf) - 1

    def draw(u):
        return np.minimum(np.searchsorted(cdf, u, side="right"), last)

    return draw


@dataclass(frozen=True)
class Event:
    index: int
    t: str
    s: str
    ent: str
    c: str
    d: str

    @property
    def first_name(self):
        return self.ent.split(" ", 1)[0]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("index", "t", "s", "ent", "c", "d")})


def generate_events(universe, n_events, params: GeometricParams | None = None, seed=0,
                    max_candidates=None):
    """Draw events from one forward RNG stream, rejecting (t,ent)/(t,s) clashes.

    Each candidate consumes the same number of draws whether accepted or not,
    so a longer run always extends a shorter one with the same seed.
    """
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    params = params or GeometricParams(0.1, universe.n_universe)
    if params.support_size != universe.n_universe:
        raise ValueError("support_size must equal the universe size")
    draw = _sampler(pmf_vector(params))
    rng = np.random.default_rng(seed)
    cap = max_candidates if max_candidates is not None else 100 * n_events
    events, used_te, used_ts = [], set(), set()
    for _ in range(cap):
        it, is_, ie, ic = (int(x) for x in draw(rng.random(4)))
        t, s, ent, c = universe.temporal[it], universe.spatial[is_], universe.entities[ie], universe.contents[ic]
        details = universe.content_details[c]
        d = details[int(rng.integers(len(details)))]
        if (t, ent) in used_te or (t, s) in used_ts:
            continue
        used_te.add((t, ent))
        used_ts.add((t, s))
        events.append(Event(len(events), t, s, ent, c, d))
        if len(events) == n_events:
            return events
    raise ExhaustedAttempts(f"only {len(events)} of {n_events} events after {cap} candidates")


@dataclass(frozen=True)
class EventMeta:
    nb_paragraphs: int
    idx_paragraph: dict
    style: str

    def __post_init__(self):
        if not 1 <= self.nb_paragraphs <= 10:
            raise ValueError("nb_paragraphs must lie in [1, 10]")
        if set(self.idx_paragraph) != set(FEATURES):
            raise ValueError(f"idx_paragraph keys must be {FEATURES}")
        for k, v in self.idx_paragraph.items():
            if not 1 <= v <= self.nb_paragraphs:
                raise ValueError(f"placement {k}={v} outside [1, {self.nb_paragraphs}]")

    def to_dict(self):
        return {"nb_paragraphs": self.nb_paragraphs, "idx_paragraph": dict(self.idx_paragraph),
                "style": self.style}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["nb_paragraphs"]), {k: int(v) for k, v in d["idx_paragraph"].items()},
                   d["style"])


def generate_meta(events, style_catalog, seed=0):
    if not events:
        raise ValueError("events must be non-empty")
    styles = list(style_catalog)
    metas = []
    for ev in events:
        rng = np.random.default_rng(derive_seed(seed, "meta", ev.index))
        nb = int(rng.integers(1, 11))
        idx = {f: int(rng.integers(1, nb + 1)) for f in FEATURES}
        style = styles[int(rng.integers(len(styles)))]
        metas.append(EventMeta(nb, idx, style))
    return metas


def expected_bin_counts(n_events, params: GeometricParams, bins=TABLE_BINS, reps=10000, seed=0,
                        distribution="geometric"):
    """Monte Carlo mean and std of how many items are drawn k times, per bin of k.

    Returns ``{label: (mean, std)}`` with the population standard deviation.
    """
    n = params.support_size
    if n_events == 0:
        return {label: (0.0, 0.0) for label, _, _ in bins}
    if distribution == "geometric":
        probs = pmf_vector(params)
    elif distribution == "uniform":
        probs = np.full(n, 1.0 / n)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    rng = np.random.default_rng(seed)
    draw = _sampler(probs)
    out = {label: np.empty(reps) for label, _, _ in bins}
    chunk = max(1, 2_000_000 // max(n_events, 1))
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        idx = draw(rng.random((m, n_events)))
        flat = idx + (np.arange(m)[:, None] * n)
        counts = np.bincount(flat.ravel(), minlength=m * n).reshape(m, n)
        for label, lo, hi in bins:
            mask = counts >= lo if hi is None else (counts >= lo) & (counts <= hi)
            out[label][done:done + m] = mask.sum(axis=1)
        done += m
    return {label: (float(v.mean()), float(v.std())) for label, v in out.items()}
