"""Pipeline configuration: a single JSON file, secrets only via environment variables."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from ._util import sha256_hex
from .gateway import ModelRef
from .harness import mode_from_dict
from .universe import BUNDLED_CORPORA


class ConfigInvalid(ValueError):
    pass


ROLES = ("author", "verifier", "eval_judge", "answerer", "embedder")

DEFAULTS = {
    "seed": 0,
    "corpus": "city_life",
    "n_universe": 100,
    "n_events": 200,
    "geometric_p": 0.1,
    "itermax": 10,
    "n_target": 5,
    "ordered_book": False,
    "workers": 8,
    "answer_set": "selected",
    "providers": {},
    # Chapter writing samples at 1.0, checks and judging run at 0.0.
    "author": {"provider_id": "mock-author", "model": "mock", "temperature": 1.0,
               "max_output_tokens": 4096},
    "verifier": {"provider_id": "mock-judge", "model": "mock", "temperature": 0.0,
                 "max_output_tokens": 256},
    "eval_judge": {"provider_id": "mock-judge", "model": "mock", "temperature": 0.0,
                   "max_output_tokens": 1024},
    "answerer": {"provider_id": "mock-answerer", "model": "mock", "temperature": 0.0,
                 "max_output_tokens": 2048},
    "embedder": {"provider_id": "mock-embed", "model": "mock"},
    "memory_modes": [{"kind": "in_context"}],
    "cache_dir": None,
    "output_dir": "out",
    "mock": {"answer_policy": "replay", "fail_event_indices": [], "author_fail_all": False},
}

MOCK_ROLES = {
    "author": {"provider_id": "mock-author", "model": "mock"},
    "verifier": {"provider_id": "mock-judge", "model": "mock"},
    "eval_judge": {"provider_id": "mock-judge", "model": "mock"},
    "answerer": {"provider_id": "mock-answerer", "model": "mock"},
    "embedder": {"provider_id": "mock-embed", "model": "mock"},
}

# Which config keys each stage depends on; used for the skip-if-unchanged check.
STAGE_KEYS = {
    "universe": ("seed", "corpus", "n_universe"),
    "events": ("seed", "n_events", "geometric_p", "corpus"),
    "book": ("seed", "itermax", "ordered_book", "author", "verifier", "mock_book"),
    "questions": ("seed", "n_target"),
    "answer": ("answerer", "embedder", "memory_modes", "answer_set", "mock_answer"),
    "judge": ("eval_judge",),
    "report": (),
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("providers",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None, mock=False):
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigInvalid("config must be a JSON object")
    cfg = _merge(DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    if mock:
        for role, ref in MOCK_ROLES.items():
            cfg[role] = {**cfg[role], **ref}
    cfg["use_mock"] = bool(mock)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    def need(cond, msg):
        if not cond:
            raise ConfigInvalid(msg)

    for key in ("seed", "n_universe", "n_events", "itermax", "n_target", "workers"):
        need(isinstance(cfg[key], int) and not isinstance(cfg[key], bool), f"{key} must be an integer")
    need(cfg["n_universe"] >= 1, "n_universe must be >= 1")
    need(cfg["n_events"] >= 1, "n_events must be >= 1")
    need(cfg["itermax"] >= 1, "itermax must be >= 1")
    need(cfg["n_target"] >= 1, "n_target must be >= 1")
    need(isinstance(cfg["geometric_p"], (int, float)) and 0 < cfg["geometric_p"] < 1,
         "geometric_p must lie in (0, 1)")
    need(cfg["answer_set"] in ("selected", "all"), "answer_set must be 'selected' or 'all'")
    need(cfg["corpus"] in BUNDLED_CORPORA or Path(cfg["corpus"]).is_file(),
         f"corpus {cfg['corpus']!r} is neither bundled nor an existing file")
    mock_ids = {r["provider_id"] for r in MOCK_ROLES.values()}
    for role in ROLES:
        ref = cfg[role]
        need(isinstance(ref, dict) and ref.get("provider_id") and ref.get("model"),
             f"{role} needs provider_id and model")
        pid = ref["provider_id"]
        need(pid in cfg["providers"] or (cfg.get("use_mock") and pid in mock_ids) or pid in mock_ids,
             f"{role}: provider {pid!r} is not configured")
        t = ref.get("temperature", 0.0)
        need(isinstance(t, (int, float)) and 0 <= t <= 2, f"{role}: temperature must lie in [0, 2]")
    for pid, spec in cfg["providers"].items():
        need(isinstance(spec, dict) and spec.get("base_url"), f"provider {pid}: base_url required")
        need(spec.get("api_key_env"), f"provider {pid}: api_key_env required")
    try:
        for m in cfg["memory_modes"]:
            mode_from_dict(m)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigInvalid(f"memory_modes: {exc}") from exc
    need(cfg["mock"]["answer_policy"] in ("replay", "abstain", "fabricate"),
         "mock.answer_policy must be replay, abstain or fabricate")


def model_ref(cfg, role):
    ref = cfg[role]
    return ModelRef(ref["provider_id"], ref["model"], float(ref.get("temperature", 0.0)),
                    int(ref.get("max_output_tokens", 4096)))


def stage_config_hash(cfg, stage):
    view = {}
    for k in STAGE_KEYS[stage]:
        if k == "mock_book":
            view[k] = [cfg["use_mock"], cfg["mock"]["fail_event_indices"], cfg["mock"]["author_fail_all"]]
        elif k == "mock_answer":
            view[k] = [cfg["use_mock"], cfg["mock"]["answer_policy"]]
        else:
            view[k] = cfg[k]
    return sha256_hex(json.dumps(view, sort_keys=True))
