"""Aggregate per-question scores into bin / cue / trace tables and entity tracking."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .qagen import BINS, TRACES

# Cue families in template order.
CUE_ORDER = ("t", "s", "ent", "c", "t,s", "t,ent", "t,c", "s,ent", "s,c", "ent,c",
             "t,s,ent", "t,s,c", "t,ent,c", "s,ent,c", "t,s,ent,c")
GROUPINGS = ("bin", "cue", "trace", "cue_bin")
STD_NOTE = "std is the population standard deviation"


@dataclass(frozen=True)
class AggregateCell:
    model: str
    mode: str
    group: str
    key: str
    n: int
    mean_f1: float
    std_f1: float


def cue_label(question):
    return ",".join(k for k in ("t", "s", "ent", "c") if k in question.cue)


def _group_key(group_by, q):
    if group_by == "bin":
        return q.bin
    if group_by == "cue":
        return cue_label(q)
    if group_by == "trace":
        return q.trace
    if group_by == "cue_bin":
        return f"{cue_label(q)}|{q.bin}"
    raise ValueError(f"unknown grouping {group_by!r}")


def _order(group_by, key):
    if group_by == "bin":
        return (BINS.index(key),)
    if group_by == "cue":
        return (CUE_ORDER.index(key),)
    if group_by == "trace":
        return (TRACES.index(key),)
    cue, b = key.split("|")
    return (CUE_ORDER.index(cue), BINS.index(b))


def _mean_std(values):
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def aggregate(scores, questions, group_by="bin"):
    """Mean and population std of F1 per (model, mode, group key).

    ``scores`` are dicts as written to scores.jsonl; only status ``scored``
    counts. ``questions`` maps qid to Question.
    """
    buckets = {}
    for s in scores:
        if s["status"] != "scored":
            continue
        q = questions[s["qid"]]
        k = (s["model"], s["mode"], _group_key(group_by, q))
        buckets.setdefault(k, []).append(float(s["f1"]))
    cells = []
    for (model, mode, key), vals in buckets.items():
        vals.sort()  # makes fsum order-independent of input order
        mean, std = _mean_std(vals)
        cells.append(AggregateCell(model, mode, group_by, key, len(vals), mean, std))
    cells.sort(key=lambda c: (c.model, c.mode, _order(group_by, c.key)))
    return cells


@dataclass(frozen=True)
class TrackingSummary:
    model: str
    mode: str
    n_latest: int
    latest_pct: float | None
    n_chrono: int
    all_pct: float | None
    mean_kendall: float | None

    def kendall_text(self):
        return "n.a." if self.mean_kendall is None else f"{self.mean_kendall:.2f}"


def summarize_entity_tracking(scores, questions):
    """Latest / chronological-set / ordering summary for entity cues with >= 2 events."""
    groups = {}
    for s in scores:
        if s["status"] != "scored":
            continue
        q = questions[s["qid"]]
        if tuple(q.cue) != ("ent",) or q.get_mode == "all" or len(q.matching_event_indices) < 2:
            continue
        groups.setdefault((s["model"], s["mode"]), []).append((q, s))
    out = []
    for (model, mode), rows in sorted(groups.items()):
        latest = [s for q, s in rows if q.get_mode == "latest"]
        chrono = [s for q, s in rows if q.get_mode == "chrono"]
        full = [s for s in chrono if s["n_gt"] and s["S"] == s["n_gt"] and s["n_iditems"] == s["n_gt"]]
        taus = sorted(s["kendall_tau"] for s in full if s.get("kendall_tau") is not None)
        out.append(TrackingSummary(
            model, mode, len(latest),
            sum(1 for s in latest if s["f1"] == 1.0) / len(latest) if latest else None,
            len(chrono),
            len(full) / len(chrono) if chrono else None,
            math.fsum(taus) / len(taus) if taus else None,
        ))
    return out


def cells_to_csv(cells):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mode", "group", "key", "n", "mean_f1", "std_f1"])
    for c in cells:
        w.writerow([c.model, c.mode, c.group, c.key, c.n, f"{c.mean_f1:.6f}", f"{c.std_f1:.6f}"])
    return buf.getvalue()


def tracking_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mode", "n_latest", "latest_pct", "n_chrono", "all_pct", "mean_kendall"])
    fmt = lambda v: "n.a." if v is None else f"{v:.6f}"
    for r in rows:
        w.writerow([r.model, r.mode, r.n_latest, fmt(r.latest_pct), r.n_chrono, fmt(r.all_pct),
                    fmt(r.mean_kendall)])
    return buf.getvalue()


def render_markdown(tables, tracking):
    lines = ["# Episodic memory report", "", f"F1 shown as mean ± std ({STD_NOTE}).", ""]
    for group_by, cells in tables.items():
        lines += [f"## F1 by {group_by.replace('_', ' x ')}", "",
                  "| model | mode | key | n | F1 |", "|---|---|---|---|---|"]
        for c in cells:
            lines.append(f"| {c.model} | {c.mode} | {c.key} | {c.n} | {c.mean_f1:.2f}±{c.std_f1:.2f} |")
        lines.append("")
    lines += ["## Entity tracking (entity cue, at least two events)", "",
              "| model | mode | latest | chronological (all) | Kendall tau |", "|---|---|---|---|---|"]
    pct = lambda v: "n.a." if v is None else f"{100 * v:.0f}%"
    for r in tracking:
        lines.append(f"| {r.model} | {r.mode} | {pct(r.latest_pct)} | {pct(r.all_pct)} | {r.kendall_text()} |")
    return "\n".join(lines) + "\n"


def build_report(scores, questions):
    tables = {g: aggregate(scores, questions, g) for g in GROUPINGS}
    tracking = summarize_entity_tracking(scores, questions)
    report_csv = "".join(cells_to_csv(c) if i == 0 else cells_to_csv(c).split("\n", 1)[1]
                         for i, c in enumerate(tables.values()))
    return report_csv, render_markdown(tables, tracking), tracking_to_csv(tracking)
