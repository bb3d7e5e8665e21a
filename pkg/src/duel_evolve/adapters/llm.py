"""Judge and generator backends for chat-completions-compatible HTTP endpoints."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

import requests

from ..candidates import MEMORY_LIMIT, BackendError, Candidate, Choice, Draft, Query, Verdict
from .templates import Template, TemplateError, default_template

log = logging.getLogger(__name__)

SYSTEM_PROMPT = "You are a helpful assistant."

_FENCE = re.compile(r"^\s*```[A-Za-z0-9_+-]*\s*\n(.*?)\n?```\s*$", re.S)
_OPTION = re.compile(r"^\s*\(?([A-Z])[\).:]\s*(.+?)\s*$")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "default"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 120.0
    retries: int = 2
    backoff: float = 1.0
    concurrency: int = 8
    max_tokens: int | None = None

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)


class ChatClient:
    """POSTs ``{base_url}/chat/completions`` with bounded retries and concurrency."""

    def __init__(self, config: EndpointConfig, session: requests.Session | None = None) -> None:
        self.config = config
        self.session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(config.concurrency)

    def complete(self, prompt: str, temperature: float) -> str:
        cfg = self.config
        payload: dict[str, Any] = {
            "model": cfg.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
            "temperature": temperature,
        }
        if cfg.max_tokens:
            payload["max_tokens"] = cfg.max_tokens
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        url = cfg.base_url.rstrip("/") + "/chat/completions"

        last: Exception | None = None
        for attempt in range(cfg.retries + 1):
            try:
                with self._slots:
                    resp = self.session.post(url, json=payload, headers=headers, timeout=cfg.timeout)
                resp.raise_for_status()
            except requests.RequestException as exc:
                last = exc
                if attempt < cfg.retries:
                    time.sleep(cfg.backoff * 2**attempt)
                continue
            try:
                body = resp.json()
            except ValueError:
                return resp.text
            try:
                content = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                # a well-formed HTTP exchange with an odd body is model output, not transport
                return json.dumps(body)
            return content if isinstance(content, str) else json.dumps(content)
        raise BackendError(f"chat completion failed after {cfg.retries + 1} attempts: {last}")


def parse_structured(text: str) -> dict[str, Any] | None:
    """Parse a JSON object from model output.

    Tries the whole text, then a fenced block, then the first decodable
    ``{...}`` substring.
    """
    candidates = [text]
    fenced = _FENCE.match(text or "")
    if fenced:
        candidates.append(fenced.group(1))
    for chunk in candidates:
        try:
            obj = json.loads(chunk)
        except (TypeError, ValueError):
            continue
        if isinstance(obj, dict):
            return obj
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text or ""):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def parse_verdict(text: str) -> Verdict:
    obj = parse_structured(text)
    if obj is None:
        return Verdict(Choice.INVALID, "response is not JSON", raw=text)
    sol = obj.get("solution")
    if not isinstance(sol, str):
        return Verdict(Choice.INVALID, "missing solution field", raw=text)
    key = sol.strip().strip("'\"().").upper()
    choice = {"A": Choice.A, "B": Choice.B, "T": Choice.TIE, "TIE": Choice.TIE}.get(key)
    if choice is None:
        return Verdict(Choice.INVALID, f"unrecognized solution {sol!r}", raw=text)
    reasoning = obj.get("reasoning")
    return Verdict(choice, reasoning if isinstance(reasoning, str) else "")


def parse_draft(text: str) -> Draft | None:
    obj = parse_structured(text)
    if obj is None or not isinstance(obj.get("solution"), str) or not obj["solution"].strip():
        return None
    memory = obj.get("evolving_memory")
    reasoning = obj.get("reasoning")
    return Draft(
        content=obj["solution"],
        reasoning=reasoning if isinstance(reasoning, str) else "",
        evolving_memory=(memory if isinstance(memory, str) else "")[:MEMORY_LIMIT],
    )


def strip_fence(code: str) -> str:
    m = _FENCE.match(code)
    return m.group(1) if m else code


def option_text(options: str, letter: str) -> str:
    """Text of option ``letter`` from lines like ``A) ...`` / ``B. ...``; empty if absent."""
    for line in options.splitlines():
        m = _OPTION.match(line)
        if m and m.group(1) == letter.strip().upper():
            return m.group(2)
    return ""


def starter_block(query: Query) -> str:
    if not query.starter_code.strip():
        return ""
    return f"# Starter Code\n```python\n{query.starter_code.rstrip()}\n```"


def _public_tests(c: Candidate) -> dict[str, str]:
    tests = list(c.metadata.get("public_tests") or [])[:3]
    values = {}
    for i in range(1, 4):
        t, o = tests[i - 1] if i <= len(tests) else ("n/a", "n/a")
        values[f"test_str_{i}"], values[f"outcome_str_{i}"] = str(t), str(o)
    return values


def parent_values(query: Query, parent: Candidate, score: float) -> dict[str, Any]:
    """Every placeholder a parent block may reference; absent fields render as ``n/a``."""
    na = lambda s: s if s else "n/a"  # noqa: E731
    return {
        "answer_letter": parent.content.strip(),
        "option_text_if_available": option_text(query.context, parent.content),
        "score": score,
        "reasoning": parent.reasoning,
        "parent.text": parent.content,
        "parent.reasoning": na(parent.reasoning),
        "parent.recent_win_explanation": na(parent.recent_win_explanation),
        "parent.recent_loss_explanation": na(parent.recent_loss_explanation),
        "parent.evolving_memory": na(parent.evolving_memory),
        **_public_tests(parent),
    }


def _present(c: Candidate) -> str:
    if c.reasoning:
        return f"Reasoning:\n{c.reasoning}\n\nAnswer: {c.content}"
    return c.content


def judge_values(query: Query, a: Candidate, b: Candidate) -> dict[str, Any]:
    return {
        "question": query.question,
        "options": query.context,
        "candidate_a": _present(a),
        "candidate_b": _present(b),
        "code_a": strip_fence(a.content),
        "code_b": strip_fence(b.content),
        "trace_a": a.trace or "n/a",
        "trace_b": b.trace or "n/a",
    }


class LLMJudge:
    def __init__(
        self,
        client: ChatClient,
        template: Template | None = None,
        *,
        temperature: float = 0.0,
    ) -> None:
        self.client = client
        self.template = template or default_template("judge", "math")
        self.temperature = temperature

    def judge(self, query: Query, a: Candidate, b: Candidate, *, seed: int | None = None) -> Verdict:
        prompt = self.template.render(judge_values(query, a, b))
        return parse_verdict(self.client.complete(prompt, self.temperature))


class LLMGenerator:
    """One chat request per requested child, issued concurrently.

    A slot whose response does not parse is re-requested once and then
    dropped; transport failures only lose their own slot.
    """

    def __init__(
        self,
        client: ChatClient,
        *,
        initial: Template | None = None,
        evolve: Template | None = None,
        parent: Template | None = None,
        profile: str = "math",
        temperature: float = 0.7,
    ) -> None:
        self.client = client
        self.initial = initial or default_template("initial", profile)
        self.evolve = evolve or default_template("evolve", profile)
        self.parent = parent or default_template("parent", profile)
        self.temperature = temperature

    def render(self, query: Query, parents: Sequence[tuple[Candidate, float]]) -> str:
        values: dict[str, Any] = {
            "question": query.question,
            "options": query.context,
            "starter_block": starter_block(query),
        }
        if not parents:
            return self.initial.render(values)
        blocks = [self.parent.render(parent_values(query, c, mu)) for c, mu in parents]
        values["parent_solutions"] = "\n\n".join(b.strip("\n") for b in blocks)
        return self.evolve.render(values)

    def _slot(self, prompt: str) -> Draft | None:
        for _ in range(2):
            try:
                draft = parse_draft(self.client.complete(prompt, self.temperature))
            except BackendError as exc:
                log.warning("generation slot lost: %s", exc)
                return None
            if draft is not None:
                return draft
        return None

    def generate(
        self,
        query: Query,
        parents: Sequence[tuple[Candidate, float]],
        n: int = 1,
        *,
        seed: int | None = None,
    ) -> list[Draft]:
        prompt = self.render(query, parents)  # raises TemplateError before any request
        with ThreadPoolExecutor(max_workers=max(1, min(n, self.client.config.concurrency))) as ex:
            results = list(ex.map(lambda _: self._slot(prompt), range(n)))
        drafts = [d for d in results if d is not None]
        if n and not drafts:
            log.warning("generation batch of %d produced no drafts", n)
        return drafts


__all__ = [
    "ChatClient",
    "EndpointConfig",
    "LLMGenerator",
    "LLMJudge",
    "TemplateError",
    "parse_draft",
    "parse_structured",
    "parse_verdict",
]
