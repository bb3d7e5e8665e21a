"""Simulated judges and generators with a known ground-truth utility."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import expit

from ..candidates import Candidate, Choice, Draft, Query, Verdict


class GroundTruth(Protocol):
    def utility(self, content: str) -> float | None:
        """True utility of a candidate text, or None if it is not decodable."""
        ...


@dataclass
class SyntheticTask:
    """Bit-vector task: weighted ones-count with deceptive pairwise penalties.

    Bits are grouped into disjoint random pairs. Setting either bit of a pair
    pays its weight, but setting both costs ``penalty * (w_i + w_j)`` on top,
    so for ``penalty > 1`` the greedy all-ones direction is a trap and the
    optimum keeps exactly the heavier bit of every pair. Weights are drawn from
    U(0.5, 1.5) and the raw sum is multiplied by ``scale``.
    """

    dimension: int = 60
    mutation_rate: float = 0.05
    penalty: float = 1.5
    scale: float = 1.0
    seed: int = 0
    weights: np.ndarray = field(init=False, repr=False)
    pairs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.dimension < 2:
            raise ValueError("dimension must be >= 2")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        rng = np.random.default_rng(self.seed)
        self.weights = rng.uniform(0.5, 1.5, self.dimension)
        perm = rng.permutation(self.dimension)
        self.pairs = perm[: 2 * (self.dimension // 2)].reshape(-1, 2)

    def encode(self, bits: np.ndarray) -> str:
        return "".join("1" if b else "0" for b in bits)

    def decode(self, content: str) -> np.ndarray | None:
        text = content.strip()
        if len(text) != self.dimension or set(text) - {"0", "1"}:
            return None
        return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")

    def _raw(self, bits: np.ndarray) -> float:
        x = bits.astype(float)
        both = x[self.pairs[:, 0]] * x[self.pairs[:, 1]]
        pair_w = self.weights[self.pairs[:, 0]] + self.weights[self.pairs[:, 1]]
        return float(self.weights @ x - self.penalty * (both * pair_w).sum())

    def optimum(self) -> np.ndarray:
        bits = np.ones(self.dimension, dtype=np.uint8)
        for i, j in self.pairs:
            bits[j if self.weights[i] >= self.weights[j] else i] = 0
        return bits

    def bits_utility(self, bits: np.ndarray) -> float:
        return self.scale * self._raw(bits)

    def utility(self, content: str) -> float | None:
        bits = self.decode(content)
        return None if bits is None else self.bits_utility(bits)


@dataclass
class FixedArms:
    """A finite set of arms ``arm:0 .. arm:{k-1}`` with given utilities."""

    utilities: Sequence[float]

    def content(self, k: int) -> str:
        return f"arm:{k}"

    def utility(self, content: str) -> float | None:
        head, _, idx = content.partition(":")
        if head != "arm" or not idx.isdigit() or int(idx) >= len(self.utilities):
            return None
        return float(self.utilities[int(idx)])


class _Seeded:
    """Per-call rng from an explicit seed, else a locked shared stream."""

    def __init__(self, seed: int | None) -> None:
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def _draw(self, seed: int | None, fn):
        if seed is not None:
            return fn(np.random.default_rng(seed))
        with self._lock:
            return fn(self._rng)


class OracleJudge(_Seeded):
    """Bradley-Terry noisy judge over a known utility.

    Returns Tie with probability ``tie_rate``; otherwise A with probability
    ``sigmoid(beta_judge * (f(a) - f(b)))``. With ``deterministic=True`` the
    better candidate always wins (ties on equal utility), which makes the
    judge transitive and position-consistent.
    """

    def __init__(
        self,
        task: GroundTruth,
        beta_judge: float = 1.0,
        tie_rate: float = 0.05,
        *,
        deterministic: bool = False,
        seed: int | None = None,
    ) -> None:
        super().__init__(seed)
        if not 0.0 <= tie_rate <= 1.0:
            raise ValueError("tie_rate must lie in [0, 1]")
        self.task = task
        self.beta_judge = beta_judge
        self.tie_rate = tie_rate
        self.deterministic = deterministic

    def judge(self, query: Query, a: Candidate, b: Candidate, *, seed: int | None = None) -> Verdict:
        fa, fb = self.task.utility(a.content), self.task.utility(b.content)
        if fa is None or fb is None:
            return Verdict(Choice.INVALID, "candidate is not a valid task encoding")
        if self.deterministic:
            if fa == fb:
                return Verdict(Choice.TIE, "equal utility")
            return Verdict(Choice.A if fa > fb else Choice.B, "higher utility")
        p_a = float(expit(self.beta_judge * (fa - fb)))

        def sample(rng: np.random.Generator) -> Choice:
            if rng.random() < self.tie_rate:
                return Choice.TIE
            return Choice.A if rng.random() < p_a else Choice.B

        return Verdict(self._draw(seed, sample))


class PositionBiasedJudge:
    """Always answers the same slot regardless of content."""

    def __init__(self, choice: Choice = Choice.A) -> None:
        self.choice = choice

    def judge(self, query: Query, a: Candidate, b: Candidate, *, seed: int | None = None) -> Verdict:
        return Verdict(self.choice, "position bias")


class OracleGenerator(_Seeded):
    """Random initial vectors; children mutate a posterior-weighted parent.

    A parent is drawn with probability proportional to ``exp(mu / temperature)``
    and each bit is flipped independently with the task's mutation rate.
    """

    def __init__(self, task: SyntheticTask, *, temperature: float = 1.0, seed: int | None = None) -> None:
        super().__init__(seed)
        self.task = task
        self.temperature = temperature

    def child_bits(self, parent: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        flips = rng.random(self.task.dimension) < self.task.mutation_rate
        return np.where(flips, 1 - parent, parent).astype(np.uint8)

    def generate(
        self,
        query: Query,
        parents: Sequence[tuple[Candidate, float]],
        n: int = 1,
        *,
        seed: int | None = None,
    ) -> list[Draft]:
        decoded = [(self.task.decode(c.content), mu) for c, mu in parents]
        decoded = [(bits, mu) for bits, mu in decoded if bits is not None]

        def sample(rng: np.random.Generator) -> list[Draft]:
            out = []
            if not decoded:
                for _ in range(n):
                    out.append(Draft(self.task.encode(rng.integers(0, 2, self.task.dimension))))
                return out
            mus = np.array([mu for _, mu in decoded])
            w = np.exp((mus - mus.max()) / self.temperature)
            w /= w.sum()
            for _ in range(n):
                parent = decoded[rng.choice(len(decoded), p=w)][0]
                out.append(Draft(self.task.encode(self.child_bits(parent, rng))))
            return out

        return self._draw(seed, sample)


class ArmGenerator:
    """Emits the arms of a :class:`FixedArms` environment in order (no evolution)."""

    def __init__(self, arms: FixedArms) -> None:
        self.arms = arms
        self._next = 0

    def generate(self, query, parents, n: int = 1, *, seed: int | None = None) -> list[Draft]:
        k = len(self.arms.utilities)
        out = [Draft(self.arms.content(i)) for i in range(self._next, min(k, self._next + n))]
        self._next += len(out)
        return out
