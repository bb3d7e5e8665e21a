"""Candidates, queries and the judge/generator backend contracts."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Protocol, Sequence

MEMORY_LIMIT = 500

_WS = re.compile(r"\s+")


def text_signature(content: str) -> str:
    """Dedup key: SHA-256 of the whitespace-collapsed, stripped text."""
    normalized = _WS.sub(" ", content).strip()
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass
class Query:
    """The problem being optimized for.

    ``context`` holds the auxiliary material shown next to the question:
    multiple-choice options for math tasks, public I/O examples for code.
    """

    question: str
    context: str = ""
    starter_code: str = ""

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("query question must be non-empty")


@dataclass
class Draft:
    """Generator output before the pool assigns it an id."""

    content: str
    reasoning: str = ""
    evolving_memory: str = ""
    trace: str = ""  # pre-computed execution results, passed through verbatim
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.evolving_memory = (self.evolving_memory or "")[:MEMORY_LIMIT]


@dataclass
class Candidate:
    id: int
    content: str
    signature: str
    reasoning: str = ""
    evolving_memory: str = ""
    trace: str = ""
    parent_ids: tuple[int, ...] = ()
    birth_generation: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)
    recent_win_explanation: str = ""
    recent_loss_explanation: str = ""

    @classmethod
    def from_draft(
        cls,
        id: int,
        draft: Draft,
        parent_ids: Sequence[int] = (),
        birth_generation: int = 0,
        signature_fn: Callable[[str], str] = text_signature,
    ) -> "Candidate":
        return cls(
            id=id,
            content=draft.content,
            signature=signature_fn(draft.content),
            reasoning=draft.reasoning,
            evolving_memory=draft.evolving_memory[:MEMORY_LIMIT],
            trace=draft.trace,
            parent_ids=tuple(parent_ids),
            birth_generation=birth_generation,
            metadata=dict(draft.metadata),
        )


class Choice(str, Enum):
    A = "A"
    B = "B"
    TIE = "T"
    INVALID = "invalid"


@dataclass(frozen=True)
class Verdict:
    choice: Choice
    rationale: str = ""
    raw: str = ""  # unparsed model output, kept for Invalid verdicts

    def __post_init__(self) -> None:
        if self.choice is Choice.INVALID and not self.rationale:
            raise ValueError("an Invalid verdict must carry a reason")


class BackendError(RuntimeError):
    """Transport-level failure of a judge or generator call."""


class Judge(Protocol):
    def judge(self, query: Query, a: Candidate, b: Candidate, *, seed: int | None = None) -> Verdict:
        """Compare ``a`` (shown first) with ``b``; must be safe to call concurrently."""
        ...


class Generator(Protocol):
    def generate(
        self,
        query: Query,
        parents: Sequence[tuple[Candidate, float]],
        n: int = 1,
        *,
        seed: int | None = None,
    ) -> list[Draft]:
        """Propose up to ``n`` drafts conditioned on scored parents (none: initial sampling)."""
        ...
