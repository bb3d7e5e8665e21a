"""JSON run configuration: defaults, profiles, dotted overrides and validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .loop import PROFILES, EvolveConfig
from .preference import Prior
from .scheduler import SchedulerConfig

MODES = ("evolve", "bestofn", "bench")
BACKENDS = ("oracle", "llm")
GEN_TEMPERATURE = {"math": 0.7, "code": 1.2}

DEFAULTS: dict[str, Any] = {
    "mode": "evolve",
    "backend": "oracle",
    "profile": "math",
    "seed": 0,
    "out": "runs/latest",
    "evolve": {
        "n0": None,
        "batch_b": None,
        "parents_m": None,
        "duels_per_gen": None,
        "pool_cap": None,
        "budget_generations": 30,
        "sigma0": 1.0,
        "max_workers": 8,
    },
    "scheduler": {"beta": 2.0, "mc_samples": 10000, "mix_ratio": 0.5, "pairing": "dts"},
    "bestofn": {"n": None, "duel_budget": None, "batch": None},
    "task": {
        "dimension": 60,
        "mutation_rate": 0.05,
        "penalty": 1.5,
        "scale": 1.0,
        "seed": None,
        "beta_judge": 1.0,
        "tie_rate": 0.05,
    },
    "llm": {
        "base_url": "http://localhost:8000/v1",
        "model": "default",
        "api_key_env": "OPENAI_API_KEY",
        "timeout": 120.0,
        "retries": 2,
        "concurrency": 8,
        "judge_temperature": 0.0,
        "temperature": None,
        "templates": {"initial": None, "evolve": None, "parent": None, "judge": None},
    },
    "query": {"question": None, "context": "", "starter_code": "", "file": None},
}

# fields filled from the profile when left unset
PROFILE_FIELDS = ("n0", "batch_b", "parents_m", "pool_cap")


class ConfigError(ValueError):
    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


@dataclass
class RunConfig:
    raw: dict[str, Any]
    evolve: EvolveConfig
    notices: list[str] = field(default_factory=list)

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def backend(self) -> str:
        return self.raw["backend"]

    @property
    def profile(self) -> str:
        return self.raw["profile"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])


def _merge(base: dict, update: dict, path: str, problems: list) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            problems.append((where, "unknown field"))
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                problems.append((where, "expected an object"))
            else:
                out[key] = _merge(base[key], value, where, problems)
        else:
            out[key] = value
    return out


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError([(item, "override must look like key=value")])
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except ValueError:
        value = text
    return key.strip(), value


def apply_override(cfg: dict, dotted: str, value: Any) -> None:
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([(dotted, "cannot override inside a scalar field")])
    node[parts[-1]] = value


def _int(raw: dict, path: str, problems: list, minimum: int = 0, optional: bool = False) -> None:
    node, key = _locate(raw, path)
    v = node.get(key)
    if v is None and optional:
        return
    if isinstance(v, bool) or not isinstance(v, int):
        problems.append((path, f"expected an integer, got {v!r}"))
    elif v < minimum:
        problems.append((path, f"must be >= {minimum}, got {v}"))


def _num(raw: dict, path: str, problems: list, lo: float | None = None, hi: float | None = None,
         optional: bool = False, strict_lo: bool = False) -> None:
    node, key = _locate(raw, path)
    v = node.get(key)
    if v is None and optional:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append((path, f"expected a number, got {v!r}"))
        return
    if lo is not None and (v <= lo if strict_lo else v < lo):
        problems.append((path, f"must be {'>' if strict_lo else '>='} {lo}, got {v}"))
    if hi is not None and v > hi:
        problems.append((path, f"must be <= {hi}, got {v}"))


def _locate(raw: dict, path: str) -> tuple[dict, str]:
    node = raw
    parts = path.split(".")
    for p in parts[:-1]:
        node = node[p]
    return node, parts[-1]


def resolve(user: dict[str, Any], overrides: list[tuple[str, Any]] = ()) -> RunConfig:
    """Merge ``user`` and ``overrides`` over the defaults and validate.

    Raises :class:`ConfigError` listing every problem with its field path.
    """
    problems: list[tuple[str, str]] = []
    user = copy.deepcopy(user)
    for key, value in overrides:
        apply_override(user, key, value)
    raw = _merge(DEFAULTS, user, "", problems)
    notices: list[str] = []

    if raw["mode"] not in MODES:
        problems.append(("mode", f"must be one of {', '.join(MODES)}"))
    if raw["backend"] not in BACKENDS:
        problems.append(("backend", f"must be one of {', '.join(BACKENDS)}"))
    if raw["profile"] not in PROFILES:
        problems.append(("profile", f"must be one of {', '.join(PROFILES)}"))
    _int(raw, "seed", problems, minimum=0)
    if problems:
        raise ConfigError(problems)

    ev = raw["evolve"]
    for name in PROFILE_FIELDS:
        if ev[name] is None:
            ev[name] = PROFILES[raw["profile"]][name]
            notices.append(f"evolve.{name} defaulted to {ev[name]} (profile {raw['profile']})")
    for name in ("batch_b", "parents_m", "pool_cap", "max_workers"):
        _int(raw, f"evolve.{name}", problems, minimum=1)
    _int(raw, "evolve.n0", problems, minimum=2)
    _int(raw, "evolve.duels_per_gen", problems, minimum=1, optional=True)
    _int(raw, "evolve.budget_generations", problems, minimum=0)
    _num(raw, "evolve.sigma0", problems, lo=0, strict_lo=True)
    if not problems and ev["pool_cap"] < ev["n0"]:
        problems.append(("evolve.pool_cap", f"evolve.pool_cap ({ev['pool_cap']}) must be >= evolve.n0 ({ev['n0']})"))

    sc = raw["scheduler"]
    _num(raw, "scheduler.beta", problems, lo=0)
    _int(raw, "scheduler.mc_samples", problems, minimum=1)
    _num(raw, "scheduler.mix_ratio", problems, lo=0, hi=1)
    if sc["pairing"] not in ("dts", "ranked"):
        problems.append(("scheduler.pairing", "must be 'dts' or 'ranked'"))

    for name in ("n", "duel_budget", "batch"):
        _int(raw, f"bestofn.{name}", problems, minimum=2 if name == "n" else (1 if name == "batch" else 0), optional=True)

    if raw["backend"] == "oracle":
        _int(raw, "task.dimension", problems, minimum=2)
        _num(raw, "task.mutation_rate", problems, lo=0, hi=1)
        _num(raw, "task.penalty", problems)
        _num(raw, "task.scale", problems, lo=0, strict_lo=True)
        _num(raw, "task.beta_judge", problems, lo=0)
        _num(raw, "task.tie_rate", problems, lo=0, hi=1)
        _int(raw, "task.seed", problems, minimum=0, optional=True)
    else:
        llm = raw["llm"]
        for name in ("base_url", "model", "api_key_env"):
            if not isinstance(llm[name], str) or not llm[name]:
                problems.append((f"llm.{name}", "expected a non-empty string"))
        _num(raw, "llm.timeout", problems, lo=0, strict_lo=True)
        _int(raw, "llm.retries", problems, minimum=0)
        _int(raw, "llm.concurrency", problems, minimum=1)
        _num(raw, "llm.judge_temperature", problems, lo=0)
        _num(raw, "llm.temperature", problems, lo=0, optional=True)
        if llm["temperature"] is None:
            llm["temperature"] = GEN_TEMPERATURE[raw["profile"]]
            notices.append(f"llm.temperature defaulted to {llm['temperature']} (profile {raw['profile']})")
        q = raw["query"]
        if not q["file"] and not (isinstance(q["question"], str) and q["question"].strip()):
            problems.append(("query.question", "llm backend needs query.question or query.file"))
    if raw["mode"] == "bench" and raw["backend"] != "oracle":
        problems.append(("mode", "bench mode requires the oracle backend"))

    if problems:
        raise ConfigError(problems)

    evolve = EvolveConfig(
        n0=ev["n0"],
        batch_b=ev["batch_b"],
        parents_m=ev["parents_m"],
        duels_per_gen=ev["duels_per_gen"],
        pool_cap=ev["pool_cap"],
        prior=Prior(float(ev["sigma0"])),
        scheduler=SchedulerConfig(
            beta=float(sc["beta"]),
            mc_samples=sc["mc_samples"],
            mix_ratio=float(sc["mix_ratio"]),
            pairing=sc["pairing"],
        ),
        budget_generations=ev["budget_generations"],
        seed=raw["seed"],
        max_workers=ev["max_workers"],
    )
    return RunConfig(raw, evolve, notices)


def load(path: str | Path | None, overrides: list[tuple[str, Any]] = ()) -> RunConfig:
    user: dict[str, Any] = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError([("--config", f"cannot read {path}: {exc.strerror}")]) from exc
        except ValueError as exc:
            raise ConfigError([("--config", f"invalid JSON in {path}: {exc}")]) from exc
        if not isinstance(user, dict):
            raise ConfigError([("--config", "top level must be a JSON object")])
    return resolve(user, overrides)
