"""Command-line driver: ``duel-evolve run | report | validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import config as cfgmod
from .adapters.llm import ChatClient, EndpointConfig, LLMGenerator, LLMJudge
from .adapters.oracle import OracleGenerator, OracleJudge, SyntheticTask
from .adapters.templates import ALLOWED, Template, TemplateError, default_template, dummy_values, load_template
from .candidates import Query
from .loop import InitializationError, best_of_n, run
from .runlog import (
    RunLog,
    aggregate,
    find_logs,
    read_events,
    series,
    write_aggregate_csv,
    write_series_csv,
)

log = logging.getLogger("duel_evolve")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
ORACLE_QUESTION = "Find the bit string with the highest hidden utility."


class _WarningCounter(logging.Handler):
    def __init__(self) -> None:
        super().__init__(logging.WARNING)
        self.count = 0

    def emit(self, record: logging.LogRecord) -> None:
        self.count += 1


def _report_config_error(exc: cfgmod.ConfigError) -> int:
    for path, msg in exc.problems:
        print(f"config error: {path}: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _overrides(args: argparse.Namespace) -> list[tuple[str, Any]]:
    items = [cfgmod.parse_override(s) for s in args.set or []]
    if getattr(args, "seed", None) is not None:
        items.append(("seed", args.seed))
    if getattr(args, "out", None) is not None:
        items.append(("out", args.out))
    return items


def load_templates(rc: cfgmod.RunConfig) -> dict[str, Template]:
    """Configured or shipped templates, each checked and dry-rendered."""
    paths = rc.raw["llm"]["templates"]
    out = {}
    for kind in ALLOWED:
        try:
            tpl = load_template(paths[kind]) if paths.get(kind) else default_template(kind, rc.profile)
        except OSError as exc:
            raise cfgmod.ConfigError([(f"llm.templates.{kind}", f"cannot read template: {exc.strerror}")]) from exc
        try:
            tpl.check(kind)
            tpl.render(dummy_values(kind))
        except TemplateError as exc:
            raise cfgmod.ConfigError([(f"llm.templates.{kind}", str(exc))]) from exc
        out[kind] = tpl
    return out


def load_query(rc: cfgmod.RunConfig) -> Query:
    q = dict(rc.raw["query"])
    if q.get("file"):
        try:
            data = json.loads(Path(q["file"]).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise cfgmod.ConfigError([("query.file", f"cannot load query: {exc}")]) from exc
        q.update({k: data[k] for k in ("question", "context", "starter_code") if k in data})
    question = q.get("question") or (ORACLE_QUESTION if rc.backend == "oracle" else "")
    try:
        return Query(question, q.get("context") or "", q.get("starter_code") or "")
    except ValueError as exc:
        raise cfgmod.ConfigError([("query.question", str(exc))]) from exc


def build_backends(rc: cfgmod.RunConfig):
    """Returns (judge, generator, task-or-None)."""
    if rc.backend == "oracle":
        t = rc.raw["task"]
        task = SyntheticTask(
            dimension=t["dimension"],
            mutation_rate=t["mutation_rate"],
            penalty=t["penalty"],
            scale=t["scale"],
            seed=rc.seed if t["seed"] is None else t["seed"],
        )
        judge = OracleJudge(task, t["beta_judge"], t["tie_rate"], seed=rc.seed)
        return judge, OracleGenerator(task, seed=rc.seed + 1), task
    llm = rc.raw["llm"]
    templates = load_templates(rc)
    client = ChatClient(
        EndpointConfig(
            base_url=llm["base_url"],
            model=llm["model"],
            api_key_env=llm["api_key_env"],
            timeout=float(llm["timeout"]),
            retries=llm["retries"],
            concurrency=llm["concurrency"],
        )
    )
    judge = LLMJudge(client, templates["judge"], temperature=float(llm["judge_temperature"]))
    generator = LLMGenerator(
        client,
        initial=templates["initial"],
        evolve=templates["evolve"],
        parent=templates["parent"],
        temperature=float(llm["temperature"]),
    )
    return judge, generator, None


class _Annotator:
    """Adds ground-truth utility to generation events when a task is known."""

    def __init__(self, sink: RunLog, task: SyntheticTask | None) -> None:
        self.sink = sink
        self.task = task
        self.contents: dict[int, str] = {}

    def __call__(self, event: dict[str, Any]) -> None:
        if event["type"] == "candidate":
            self.contents[event["id"]] = event["content"]
        elif event["type"] == "generation":
            event = {**event, "true_utility": self.truth(event["best_id"])}
        self.sink(event)

    def truth(self, cid: int) -> float | None:
        if self.task is None or cid not in self.contents:
            return None
        return self.task.utility(self.contents[cid])


def execute(rc: cfgmod.RunConfig) -> dict[str, Any]:
    """Run the configured mode, writing ``run.jsonl`` and ``summary.json`` under ``rc.out``."""
    query = load_query(rc)
    judge, generator, task = build_backends(rc)
    counter = _WarningCounter()
    log.addHandler(counter)
    rc.out.mkdir(parents=True, exist_ok=True)
    ev = rc.evolve
    summary: dict[str, Any] = {"mode": rc.mode, "backend": rc.backend, "seed": rc.seed}
    try:
        with RunLog(rc.out / "run.jsonl") as sink:
            sink({"type": "config", "config": rc.raw})
            events = _Annotator(sink, task)
            if rc.mode == "bestofn":
                bo = rc.raw["bestofn"]
                n = bo["n"] or ev.n0 + ev.budget_generations * ev.batch_b
                budget = bo["duel_budget"] if bo["duel_budget"] is not None else ev.budget_generations * ev.duels
                best, pool = best_of_n(
                    query, judge, generator, n, budget, ev.prior, np.random.default_rng(rc.seed),
                    scheduler=ev.scheduler, batch=bo["batch"] or ev.duels, max_workers=ev.max_workers,
                    events=events, return_pool=True,
                )
                summary.update(generations=0, n=n, duel_budget=budget)
            else:
                result = run(query, judge, generator, ev, events=events, evolve=rc.mode == "evolve")
                best, pool = result.best, result.pool
                summary.update(
                    generations=len(result.generations),
                    decisive=sum(g.decisive for g in result.generations),
                    discordant=sum(g.discordant for g in result.generations),
                    failed_duels=sum(g.failed for g in result.generations),
                )
            mu = float(pool.summary.mu[best.id])
            summary.update(
                best_id=best.id,
                best_mu=mu,
                best_content=best.content,
                pool_size=len(pool),
                log_length=len(pool.log),
                true_utility=events.truth(best.id),
            )
            if rc.mode == "bench" and task is not None:
                truths = [task.utility(c.content) for c in pool.candidates]
                summary["best_arm_correct"] = bool(summary["true_utility"] >= max(truths))
            summary["warnings"] = counter.count
            sink({"type": "final", "best_id": best.id, "best_mu": mu, "content": best.content,
                  "true_utility": summary["true_utility"]})
            sink({"type": "summary", **summary})
    finally:
        log.removeHandler(counter)
    (rc.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def cmd_run(args: argparse.Namespace) -> int:
    try:
        rc = cfgmod.load(args.config, _overrides(args))
        for note in rc.notices:
            print(f"notice: {note}", file=sys.stderr)
        summary = execute(rc)
    except cfgmod.ConfigError as exc:
        return _report_config_error(exc)
    except InitializationError as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(f"best candidate {summary['best_id']} (mu={summary['best_mu']:.6g})")
    if summary.get("true_utility") is not None:
        print(f"true utility {summary['true_utility']:.6g}")
    print(summary["best_content"])
    if summary["warnings"]:
        print(f"warnings: {summary['warnings']}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        rc = cfgmod.load(args.config, _overrides(args))
        load_templates(rc)
        if rc.backend == "llm":
            load_query(rc)
    except cfgmod.ConfigError as exc:
        return _report_config_error(exc)
    for note in rc.notices:
        print(f"notice: {note}", file=sys.stderr)
    print(json.dumps(rc.raw, indent=2))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    src = Path(args.path)
    logs = find_logs(src)
    if not logs:
        print(f"no run logs found under {src}", file=sys.stderr)
        return EXIT_FAILED
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    out.mkdir(parents=True, exist_ok=True)
    annotations = None
    if args.annotations:
        annotations = json.loads(Path(args.annotations).read_text(encoding="utf-8"))

    runs = []
    base = src if src.is_dir() else src.parent
    for path in logs:
        events, skipped = read_events(path)
        if skipped:
            print(f"warning: {path}: skipped {skipped} corrupt line(s)", file=sys.stderr)
        name = "__".join(path.relative_to(base).with_suffix("").parts)
        s = series(events, name, annotations)
        if not s.rows:
            continue
        runs.append(s)
        write_series_csv(out / f"{name}.series.csv", s.rows)

    if not runs:
        print("no generation rows found", file=sys.stderr)
        return EXIT_FAILED
    write_aggregate_csv(out / "aggregate.csv", aggregate(runs))
    report = {r.name: {"generations": len(r.rows), "up_move_fraction": r.up_move_fraction} for r in runs}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    for name, info in report.items():
        frac = info["up_move_fraction"]
        print(f"{name}: {info['generations']} generations, up-move fraction "
              f"{'n/a' if frac is None else f'{frac:.3f}'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duel-evolve", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (
        ("run", cmd_run, "run evolve / bestofn / bench"),
        ("validate", cmd_validate, "check a config and its templates without running"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a field by dotted path")
        sp.set_defaults(func=fn)

    rp = sub.add_parser("report", help="CSV series from run logs")
    rp.add_argument("path", help="run log file or directory of logs")
    rp.add_argument("--out", help="directory for CSV output")
    rp.add_argument("--annotations", help="JSON {signature: utility} for runs without an oracle")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
