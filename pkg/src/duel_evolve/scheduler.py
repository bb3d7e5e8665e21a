"""Posterior-driven decisions: duels, survivors, parents and the final answer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .preference import PosteriorSummary

SIGMA_FLOOR = 1e-12


class SchedulingError(ValueError):
    pass


@dataclass(frozen=True)
class SchedulerConfig:
    beta: float = 2.0
    mc_samples: int = 10_000
    mix_ratio: float = 0.5
    duels_per_generation: int | None = None  # None: one duel per child in the batch
    pairing: str = "dts"  # "dts" (fresh draws per duel) or "ranked" (adjacent pairs of one draw)

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError("mix_ratio must lie in [0, 1]")
        if self.duels_per_generation is not None and self.duels_per_generation < 1:
            raise ValueError("duels_per_generation must be >= 1")
        if self.pairing not in ("dts", "ranked"):
            raise ValueError(f"unknown pairing mode {self.pairing!r}")


def thompson_scores(summary: PosteriorSummary, rng: np.random.Generator) -> np.ndarray:
    """One independent Gaussian draw per candidate."""
    if len(summary) == 0:
        raise SchedulingError("empty posterior summary")
    sigma = np.maximum(summary.sigma, SIGMA_FLOOR)
    return summary.mu + sigma * rng.standard_normal(len(summary))


def _ranked(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    # stable: equal scores keep ascending id order
    return ids[np.argsort(-scores[ids], kind="stable")]


def select_duel_batch(
    summary: PosteriorSummary,
    survivors: Iterable[int],
    k: int,
    rng: np.random.Generator,
    pairing: str = "dts",
) -> list[tuple[int, int]]:
    """Choose ``k`` duels among ``survivors`` by double Thompson sampling.

    In ``"dts"`` mode every pair comes from two fresh posterior draws, each
    contributing its argmax; when both argmaxes coincide the second slot takes
    the runner-up of the second draw. ``"ranked"`` mode pairs neighbours of a
    single draw's ranking (1st vs 2nd, 3rd vs 4th, ...) and redraws when the
    ranking is used up.
    """
    ids = np.array(sorted(set(survivors)), dtype=np.intp)
    if len(ids) < 2:
        raise SchedulingError(f"need at least 2 survivors to schedule duels, got {len(ids)}")
    if k < 1:
        raise SchedulingError("k must be >= 1")

    pairs: list[tuple[int, int]] = []
    if pairing == "ranked":
        while len(pairs) < k:
            order = _ranked(thompson_scores(summary, rng), ids)
            for a, b in zip(order[0::2], order[1::2]):
                pairs.append((int(a), int(b)))
                if len(pairs) == k:
                    break
        return pairs
    if pairing != "dts":
        raise SchedulingError(f"unknown pairing mode {pairing!r}")

    for _ in range(k):
        first = _ranked(thompson_scores(summary, rng), ids)[0]
        second_order = _ranked(thompson_scores(summary, rng), ids)
        second = second_order[0] if second_order[0] != first else second_order[1]
        pairs.append((int(first), int(second)))
    return pairs


def estimate_maximizer_probability(
    summary: PosteriorSummary,
    mc_samples: int,
    rng: np.random.Generator,
    chunk: int = 20_000,
) -> np.ndarray:
    """Monte Carlo estimate of P(candidate is the utility argmax)."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    n = len(summary)
    if n == 0:
        return np.zeros(0)
    # no variance floor here: zero-variance candidates tie exactly and the first index wins
    sigma = summary.sigma
    counts = np.zeros(n, dtype=np.int64)
    done = 0
    while done < mc_samples:
        m = min(chunk, mc_samples - done)
        draws = summary.mu + sigma * rng.standard_normal((m, n))
        # argmax returns the first index on exact ties
        counts += np.bincount(draws.argmax(axis=1), minlength=n)
        done += m
    return counts / mc_samples


def survivor_set(
    summary: PosteriorSummary,
    beta: float,
    candidates: Iterable[int] | None = None,
) -> frozenset[int]:
    """Drop candidates whose upper bound falls below the best lower bound.

    Bounds are ``mu +/- beta * sigma``. ``candidates`` restricts the
    competition to a subset (e.g. the active pool); by default all candidates
    compete.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    ids = np.arange(len(summary)) if candidates is None else np.array(sorted(set(candidates)), dtype=np.intp)
    if len(ids) == 0:
        return frozenset()
    mu, sigma = summary.mu[ids], summary.sigma[ids]
    best_lower = np.max(mu - beta * sigma)
    keep = mu + beta * sigma >= best_lower
    return frozenset(int(i) for i in ids[keep])


def select_parents(
    summary: PosteriorSummary,
    survivors: Iterable[int],
    recent_uncertain: Sequence[int],
    m: int,
    mix_ratio: float,
    rng: np.random.Generator,
) -> list[int]:
    """Mix Thompson-sampled top scorers with recent, still-uncertain candidates.

    ``ceil(mix_ratio * m)`` slots go to repeated Thompson draws over the
    survivors (argmax of each fresh draw among those not yet chosen); the rest
    are filled from ``recent_uncertain`` in order. Any slots left over when one
    source runs dry are filled from the other.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    surv = np.array(sorted(set(survivors)), dtype=np.intp)
    chosen: list[int] = []
    taken: set[int] = set()

    def thompson_pick(limit: int) -> None:
        while len(chosen) < limit:
            free = surv[[i not in taken for i in surv]] if len(surv) else surv
            if len(free) == 0:
                return
            pick = int(_ranked(thompson_scores(summary, rng), free)[0])
            chosen.append(pick)
            taken.add(pick)

    def recent_pick(limit: int) -> None:
        for i in recent_uncertain:
            if len(chosen) >= limit:
                return
            if i not in taken:
                chosen.append(int(i))
                taken.add(int(i))

    thompson_pick(min(m, math.ceil(mix_ratio * m)))
    recent_pick(m)
    thompson_pick(m)
    return chosen


def best_candidate(summary: PosteriorSummary, candidates: Iterable[int] | None = None) -> int:
    """Id with the largest posterior mean; exact ties go to the smallest id."""
    if len(summary) == 0:
        raise SchedulingError("empty posterior summary")
    if candidates is None:
        return int(np.argmax(summary.mu))
    ids = sorted(set(candidates))
    if not ids:
        raise SchedulingError("no candidates to choose from")
    return max(ids, key=lambda i: (summary.mu[i], -i))
