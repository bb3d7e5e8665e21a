"""The Update -> Evaluate -> Evolve loop and the Best-of-N baseline."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .candidates import (
    Candidate,
    Choice,
    Draft,
    Generator,
    Judge,
    Query,
    Verdict,
    text_signature,
)
from .preference import ComparisonRecord, PosteriorSummary, Prior, fit_posterior
from .scheduler import (
    SchedulerConfig,
    best_candidate,
    select_duel_batch,
    select_parents,
    survivor_set,
)

log = logging.getLogger(__name__)

EventSink = Callable[[dict[str, Any]], None]

PROFILES: dict[str, dict[str, Any]] = {
    # batch size / parent count per generation; n0 follows the batch size
    "math": {"n0": 12, "batch_b": 12, "parents_m": 6, "pool_cap": 200},
    "code": {"n0": 40, "batch_b": 40, "parents_m": 5, "pool_cap": 200},
}


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolveConfig:
    n0: int = 12
    batch_b: int = 12
    parents_m: int = 6
    duels_per_gen: int | None = None  # defaults to batch_b
    pool_cap: int = 200
    prior: Prior = field(default_factory=Prior)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    budget_generations: int = 10
    seed: int = 0
    max_workers: int = 8

    def __post_init__(self) -> None:
        for name in ("n0", "batch_b", "parents_m", "pool_cap", "max_workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.duels_per_gen is not None and self.duels_per_gen < 1:
            raise ValueError("duels_per_gen must be >= 1")
        if self.budget_generations < 0:
            raise ValueError("budget_generations must be >= 0")
        if self.pool_cap < self.n0:
            raise ValueError(f"pool_cap ({self.pool_cap}) must be >= n0 ({self.n0})")

    @classmethod
    def profile(cls, name: str, **overrides: Any) -> "EvolveConfig":
        if name not in PROFILES:
            raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return cls(**{**PROFILES[name], **overrides})

    @property
    def duels(self) -> int:
        if self.duels_per_gen is not None:
            return self.duels_per_gen
        if self.scheduler.duels_per_generation is not None:
            return self.scheduler.duels_per_generation
        return self.batch_b


@dataclass
class GenerationRecord:
    generation: int
    duels_issued: int
    decisive: int
    discordant: int
    failed: int
    pool_size: int
    active: int
    survivors: int
    best_id: int
    best_mu: float
    children: int = 0
    duplicates: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class DuelOutcome:
    a: int
    b: int
    verdicts: tuple[Verdict, Verdict] | None
    record: ComparisonRecord | None
    status: str  # "decisive" | "discordant" | "failed"
    error: str = ""

    def as_event(self, generation: int) -> dict[str, Any]:
        return {
            "type": "duel",
            "generation": generation,
            "a": self.a,
            "b": self.b,
            "order": [[self.a, self.b], [self.b, self.a]],
            "verdicts": [v.choice.value for v in self.verdicts] if self.verdicts else None,
            "status": self.status,
            "decisive": self.record is not None,
            "record": None if self.record is None else [self.record.first, self.record.second, self.record.outcome],
            "error": self.error or None,
        }


class Pool:
    """Evaluated candidates, the active subset, and the full comparison log."""

    def __init__(self, prior: Prior, signature_fn: Callable[[str], str] = text_signature):
        self.prior = prior
        self.signature_fn = signature_fn
        self.candidates: list[Candidate] = []
        self.active: set[int] = set()
        self.log: list[ComparisonRecord] = []
        self.signatures: dict[str, int] = {}
        self.summary = PosteriorSummary.from_prior(0, prior)
        self.recent: list[int] = []
        self.rejected = 0
        self._fitted_on = (0, 0)  # (n candidates, log length) the summary reflects

    def __len__(self) -> int:
        return len(self.candidates)

    def __getitem__(self, cid: int) -> Candidate:
        return self.candidates[cid]

    @property
    def next_id(self) -> int:
        return len(self.candidates)

    def make_candidate(self, draft: Draft, parent_ids: Sequence[int] = (), generation: int = 0) -> Candidate:
        return Candidate.from_draft(self.next_id, draft, parent_ids, generation, self.signature_fn)

    def is_stale(self) -> bool:
        return self._fitted_on != (len(self.candidates), len(self.log))

    def refit(self) -> PosteriorSummary:
        if self.is_stale():
            self.summary = fit_posterior(self.log, self.prior, len(self.candidates), theta0=self.summary.mu)
            self._fitted_on = (len(self.candidates), len(self.log))
        return self.summary

    def extend_log(self, records: Sequence[ComparisonRecord]) -> None:
        for r in records:
            if not (0 <= r.first < len(self) and 0 <= r.second < len(self)):
                raise IndexError(f"record {r} references a candidate outside the pool")
        self.log.extend(records)


def dedup_insert(pool: Pool, candidate: Candidate) -> bool:
    """Insert ``candidate`` unless its signature is already present.

    Rejected candidates are discarded and not replaced.
    """
    if candidate.id != pool.next_id:
        raise ValueError(f"candidate id {candidate.id} is not the next pool id {pool.next_id}")
    if candidate.signature in pool.signatures:
        pool.rejected += 1
        return False
    if any(p >= candidate.id for p in candidate.parent_ids):
        raise ValueError("parents must be earlier pool members")
    pool.candidates.append(candidate)
    pool.signatures[candidate.signature] = candidate.id
    pool.active.add(candidate.id)
    # newcomers enter the summary at the prior until the next refit
    pool.summary = PosteriorSummary(
        np.append(pool.summary.mu, 0.0), np.append(pool.summary.sigma, pool.prior.sigma0)
    )
    # a comparison-free candidate sits at the prior mode, so a fresh fit stays fresh
    if pool._fitted_on == (len(pool) - 1, len(pool.log)):
        pool._fitted_on = (len(pool), len(pool.log))
    return True


def _safe_generate(
    generator: Generator, query: Query, parents: Sequence[tuple[Candidate, float]], n: int, seed: int
) -> tuple[list[Draft], int]:
    """Call the generator, re-requesting any shortfall once. Returns (drafts, failures)."""
    drafts: list[Draft] = []
    failures = 0
    for attempt in range(2):
        want = n - len(drafts)
        if want <= 0:
            break
        try:
            got = generator.generate(query, parents, want, seed=seed + attempt)
        except Exception as exc:  # noqa: BLE001 - backend failures degrade the batch
            log.warning("generator call failed: %s", exc)
            failures += 1
            got = []
        drafts.extend(d for d in got[:want] if isinstance(d, Draft) and d.content)
    return drafts, failures


def initialize_pool(
    query: Query,
    generator: Generator,
    n0: int,
    prior: Prior | None = None,
    *,
    seed: int = 0,
    signature_fn: Callable[[str], str] = text_signature,
    events: EventSink | None = None,
) -> Pool:
    if n0 < 2:
        raise ValueError("n0 must be >= 2")
    pool = Pool(prior or Prior(), signature_fn)
    drafts, _ = _safe_generate(generator, query, [], n0, seed)
    if not drafts:
        raise InitializationError("generator produced no initial candidates")
    for d in drafts:
        cand = pool.make_candidate(d)
        if dedup_insert(pool, cand) and events:
            events(_candidate_event(cand))
    pool.recent = [c.id for c in pool.candidates]
    pool.refit()
    return pool


def _candidate_event(c: Candidate) -> dict[str, Any]:
    return {
        "type": "candidate",
        "id": c.id,
        "parent_ids": list(c.parent_ids),
        "birth_generation": c.birth_generation,
        "signature": c.signature,
        "content": c.content,
    }


def order_consistent_judge(
    judge: Judge,
    query: Query,
    a: Candidate,
    b: Candidate,
    seeds: tuple[int | None, int | None] = (None, None),
) -> DuelOutcome:
    """Judge ``a`` vs ``b`` in both presentation orders.

    Only position-consistent decisive verdict pairs ((A, B) or (B, A)) yield a
    record; ties, invalid verdicts and same-position pairs are discordant.
    Transport errors mark the duel as failed.
    """
    if a.id == b.id:
        raise ValueError("cannot duel a candidate against itself")
    try:
        first = judge.judge(query, a, b, seed=seeds[0])
        second = judge.judge(query, b, a, seed=seeds[1])
    except Exception as exc:  # noqa: BLE001
        return DuelOutcome(a.id, b.id, None, None, "failed", error=str(exc) or type(exc).__name__)
    if first.choice is Choice.A and second.choice is Choice.B:
        rec = ComparisonRecord(a.id, b.id, 1)
    elif first.choice is Choice.B and second.choice is Choice.A:
        rec = ComparisonRecord(a.id, b.id, -1)
    else:
        return DuelOutcome(a.id, b.id, (first, second), None, "discordant")
    return DuelOutcome(a.id, b.id, (first, second), rec, "decisive")


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def enforce_pool_cap(pool: Pool, cap: int, beta: float = 2.0) -> Pool:
    """Deactivate the lowest ``mu + beta * sigma`` actives until at most ``cap`` remain.

    Deactivated candidates and their comparisons stay in the pool. The
    argmax-mu candidate is (re)activated and never evicted.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if not pool.candidates:
        return pool
    summary = pool.summary
    protected = best_candidate(summary)
    pool.active.add(protected)
    if len(pool.active) <= cap:
        return pool
    score = summary.mu + beta * summary.sigma
    # evict lowest optimistic score first; among equals the newest goes first
    order = sorted((i for i in pool.active if i != protected), key=lambda i: (score[i], -i))
    for i in order[: len(pool.active) - cap]:
        pool.active.discard(i)
    return pool


def _judge_batch(
    pool: Pool,
    query: Query,
    judge: Judge,
    pairs: Sequence[tuple[int, int]],
    rng: np.random.Generator,
    max_workers: int,
) -> list[DuelOutcome]:
    seeds = [(_seed(rng), _seed(rng)) for _ in pairs]
    if not pairs:
        return []
    with ThreadPoolExecutor(max_workers=min(max_workers, len(pairs))) as ex:
        futures = [
            ex.submit(order_consistent_judge, judge, query, pool[a], pool[b], s)
            for (a, b), s in zip(pairs, seeds)
        ]
        return [f.result() for f in futures]


def _duel_round(
    pool: Pool,
    query: Query,
    judge: Judge,
    k: int,
    scheduler: SchedulerConfig,
    rng: np.random.Generator,
    max_workers: int,
) -> tuple[list[DuelOutcome], frozenset[int]]:
    """Fit-free evaluation step: schedule ``k`` duels among survivors and log decisive ones."""
    summary = pool.summary
    survivors = survivor_set(summary, scheduler.beta, pool.active)
    eligible = set(survivors)
    if len(eligible) < 2 and len(pool.active) >= 2:
        # a lone confident leader still needs a challenger: take the best remaining bound
        rest = sorted(pool.active - eligible, key=lambda i: (-(summary.mu[i] + scheduler.beta * summary.sigma[i]), i))
        eligible.add(rest[0])
    if len(eligible) < 2:
        return [], survivors
    pairs = select_duel_batch(summary, eligible, k, rng, scheduler.pairing)
    outcomes = _judge_batch(pool, query, judge, pairs, rng, max_workers)
    records = []
    for o in outcomes:
        if o.record is None:
            continue
        records.append(o.record)
        win, lose = pool[o.record.winner], pool[o.record.loser]
        why = next((v.rationale for v in o.verdicts or () if v.rationale), "")
        if why:
            win.recent_win_explanation = why
            lose.recent_loss_explanation = why
    pool.extend_log(records)
    return outcomes, survivors


def _recency_order(pool: Pool) -> list[int]:
    sigma = pool.summary.sigma
    return sorted((i for i in pool.recent if i in pool.active), key=lambda i: (-sigma[i], i))


def run_generation(
    pool: Pool,
    query: Query,
    judge: Judge,
    generator: Generator | None,
    config: EvolveConfig,
    rng: np.random.Generator,
    generation: int,
    events: EventSink | None = None,
) -> tuple[Pool, GenerationRecord]:
    """One Update -> Evaluate -> Evolve cycle; mutates and returns ``pool``.

    A closing refit at the end leaves ``pool.summary`` covering every
    candidate, including this generation's children, so the capping step and
    the telemetry see the freshest posterior. Passing ``generator=None``
    disables the Evolve phase (pure duelling over a fixed pool).
    """
    t0 = time.perf_counter()
    sched = config.scheduler

    # Update
    summary = pool.refit()

    # Evaluate
    outcomes, survivors = _duel_round(pool, query, judge, config.duels, sched, rng, config.max_workers)
    if events:
        for o in outcomes:
            events(o.as_event(generation))
    failed = sum(o.status == "failed" for o in outcomes)
    if outcomes and failed == len(outcomes):
        log.warning("generation %d: every judge call failed", generation)

    # Evolve
    children = duplicates = 0
    if generator is not None:
        # parents are scored with this generation's duel outcomes included
        summary = pool.refit()
        parent_ids = select_parents(
            summary, survivors or pool.active, _recency_order(pool), config.parents_m, sched.mix_ratio, rng
        )
        parents = [(pool[i], float(summary.mu[i])) for i in parent_ids]
        drafts, _ = _safe_generate(generator, query, parents, config.batch_b, _seed(rng))
        new_ids = []
        for d in drafts:
            cand = pool.make_candidate(d, parent_ids, generation)
            if dedup_insert(pool, cand):
                new_ids.append(cand.id)
                if events:
                    events(_candidate_event(cand))
            else:
                duplicates += 1
        children = len(new_ids)
        pool.recent = new_ids

    summary = pool.refit()
    enforce_pool_cap(pool, config.pool_cap, sched.beta)
    best = best_candidate(summary, pool.active)

    rec = GenerationRecord(
        generation=generation,
        duels_issued=len(outcomes),
        decisive=sum(o.status == "decisive" for o in outcomes),
        discordant=sum(o.status == "discordant" for o in outcomes),
        failed=failed,
        pool_size=len(pool),
        active=len(pool.active),
        survivors=len(survivors),
        best_id=best,
        best_mu=float(summary.mu[best]),
        children=children,
        duplicates=duplicates,
        wall_time=time.perf_counter() - t0,
    )
    if events:
        events(_posterior_event(pool, generation))
        events({"type": "generation", **rec.as_dict()})
    return pool, rec


def _posterior_event(pool: Pool, generation: int) -> dict[str, Any]:
    return {
        "type": "posterior",
        "generation": generation,
        "log_length": len(pool.log),
        "n": len(pool),
        "mu": pool.summary.mu.tolist(),
        "sigma": pool.summary.sigma.tolist(),
        "active": sorted(pool.active),
    }


@dataclass
class RunResult:
    best: Candidate
    generations: list[GenerationRecord]
    pool: Pool

    @property
    def best_mu(self) -> float:
        return float(self.pool.summary.mu[self.best.id])


def run(
    query: Query,
    judge: Judge,
    generator: Generator,
    config: EvolveConfig,
    *,
    events: EventSink | None = None,
    evolve: bool = True,
    signature_fn: Callable[[str], str] = text_signature,
) -> RunResult:
    """Initialize a pool and run ``config.budget_generations`` generations.

    ``evolve=False`` keeps the initial pool fixed and only duels.
    """
    rng = np.random.default_rng(config.seed)
    pool = initialize_pool(
        query, generator, config.n0, config.prior, seed=_seed(rng), signature_fn=signature_fn, events=events
    )
    if events:
        events(_posterior_event(pool, 0))
    records = []
    for g in range(1, config.budget_generations + 1):
        pool, rec = run_generation(pool, query, judge, generator if evolve else None, config, rng, g, events)
        records.append(rec)
    best = best_candidate(pool.summary, pool.active)
    return RunResult(pool[best], records, pool)


def best_of_n(
    query: Query,
    judge: Judge,
    generator: Generator,
    n: int,
    duel_budget: int,
    prior: Prior,
    rng: np.random.Generator,
    *,
    scheduler: SchedulerConfig | None = None,
    batch: int = 12,
    max_workers: int = 8,
    events: EventSink | None = None,
    return_pool: bool = False,
):
    """Sample ``n`` independent candidates and pick one by duels alone.

    Duels are scheduled in rounds of ``batch`` with the same Thompson/survivor
    machinery as the evolutionary loop, refitting between rounds; the answer
    is the argmax of the final posterior mean.
    """
    if n < 2:
        raise ValueError("best_of_n needs n >= 2")
    if duel_budget < 0:
        raise ValueError("duel_budget must be >= 0")
    scheduler = scheduler or SchedulerConfig()
    pool = initialize_pool(query, generator, n, prior, seed=_seed(rng), events=events)
    issued = 0
    rnd = 0
    while issued < duel_budget and len(pool.active) >= 2:
        rnd += 1
        pool.refit()
        k = min(batch, duel_budget - issued)
        outcomes, _ = _duel_round(pool, query, judge, k, scheduler, rng, max_workers)
        if events:
            for o in outcomes:
                events(o.as_event(rnd))
        issued += k
    pool.refit()
    if events:
        events(_posterior_event(pool, rnd))
    best = pool[best_candidate(pool.summary, pool.active)]
    return (best, pool) if return_pool else best
