"""JSON-lines run logs: writing, reading, replay and per-generation reports.

Every line is one JSON object with a ``type`` tag, a sequence number ``seq``
and a wall-clock timestamp ``t``. Key reference: ``runlog_schema.json``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .preference import ComparisonRecord, Prior, fit_posterior

log = logging.getLogger(__name__)

SERIES_COLUMNS = ["generation", "best_mu", "true_utility", "pool_size", "survivors", "decisive", "discordant"]
VOLATILE_KEYS = ("t", "wall_time")


class RunLog:
    """Append-only JSONL writer; safe to call from several threads."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")
        self._lock = threading.Lock()
        self._seq = 0
        self._last_t = 0.0

    def __call__(self, event: dict[str, Any]) -> None:
        self.write(event)

    def write(self, event: dict[str, Any]) -> None:
        with self._lock:
            self._last_t = max(self._last_t, time.time())  # monotone timestamps
            line = {"seq": self._seq, "t": round(self._last_t, 6), **event}
            self._fh.write(json.dumps(line, sort_keys=False, ensure_ascii=False) + "\n")
            self._fh.flush()
            self._seq += 1

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self) -> "RunLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_events(path: str | Path) -> tuple[list[dict[str, Any]], int]:
    """Parse a run log, skipping corrupt lines. Returns (events, skipped)."""
    events, skipped = [], 0
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                ev = json.loads(line)
            except ValueError:
                ev = None
            if not isinstance(ev, dict) or "type" not in ev:
                log.warning("%s:%d: skipping corrupt log line", path, lineno)
                skipped += 1
                continue
            events.append(ev)
    return events, skipped


def strip_volatile(events: Iterable[dict[str, Any]]) -> list[dict[str, Any]]:
    return [{k: v for k, v in ev.items() if k not in VOLATILE_KEYS} for ev in events]


def decisive_records(events: Iterable[dict[str, Any]]) -> list[ComparisonRecord]:
    return [ComparisonRecord(*ev["record"]) for ev in events if ev["type"] == "duel" and ev.get("record")]


def replay(events: list[dict[str, Any]]) -> float:
    """Refit every logged posterior snapshot from the logged decisive records.

    Returns the largest absolute deviation in (mu, sigma) over all snapshots.
    """
    config = next((ev for ev in events if ev["type"] == "config"), None)
    sigma0 = config["config"]["evolve"]["sigma0"] if config else 1.0
    prior = Prior(float(sigma0))
    records = decisive_records(events)
    worst = 0.0
    for ev in events:
        if ev["type"] != "posterior":
            continue
        summary = fit_posterior(records[: ev["log_length"]], prior, ev["n"])
        worst = max(
            worst,
            float(np.max(np.abs(summary.mu - np.asarray(ev["mu"])), initial=0.0)),
            float(np.max(np.abs(summary.sigma - np.asarray(ev["sigma"])), initial=0.0)),
        )
    return worst


@dataclass
class RunSeries:
    name: str
    rows: list[dict[str, Any]]

    @property
    def up_move_fraction(self) -> float | None:
        """Share of generation-to-generation changes in true utility that were increases."""
        vals = [r["true_utility"] for r in self.rows if r["true_utility"] is not None]
        moves = [b - a for a, b in zip(vals, vals[1:]) if b != a]
        if not moves:
            return None
        return sum(m > 0 for m in moves) / len(moves)


def series(events: list[dict[str, Any]], name: str, annotations: dict[str, float] | None = None) -> RunSeries:
    signatures = {ev["id"]: ev.get("signature") for ev in events if ev["type"] == "candidate"}
    rows = []
    for ev in events:
        if ev["type"] != "generation":
            continue
        truth = ev.get("true_utility")
        if truth is None and annotations:
            truth = annotations.get(signatures.get(ev["best_id"], ""))
        rows.append(
            {
                "generation": ev["generation"],
                "best_mu": ev["best_mu"],
                "true_utility": truth,
                "pool_size": ev["pool_size"],
                "survivors": ev["survivors"],
                "decisive": ev["decisive"],
                "discordant": ev["discordant"],
            }
        )
    return RunSeries(name, rows)


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.6g}"
    return str(value)


def write_series_csv(path: str | Path, rows: list[dict[str, Any]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[c]) for c in SERIES_COLUMNS])


AGGREGATE_COLUMNS = ["generation", "runs"] + [
    f"{c}_{stat}" for c in SERIES_COLUMNS[1:] for stat in ("mean", "std")
]


def aggregate(runs: list[RunSeries]) -> list[dict[str, Any]]:
    """Mean and (population) std of each series column across runs, per generation."""
    depth = max((len(r.rows) for r in runs), default=0)
    out = []
    for g in range(depth):
        present = [r.rows[g] for r in runs if g < len(r.rows)]
        row: dict[str, Any] = {"generation": present[0]["generation"], "runs": len(present)}
        for c in SERIES_COLUMNS[1:]:
            vals = [float(p[c]) for p in present if p[c] is not None]
            row[f"{c}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{c}_std"] = float(np.std(vals)) if vals else None
        out.append(row)
    return out


def write_aggregate_csv(path: str | Path, rows: list[dict[str, Any]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[c]) for c in AGGREGATE_COLUMNS])


def find_logs(path: str | Path) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    return sorted(p for p in path.rglob("*.jsonl"))
