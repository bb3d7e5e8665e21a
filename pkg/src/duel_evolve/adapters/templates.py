"""Prompt templates with ``{name}`` / ``{name:spec}`` placeholders.

Only identifier-shaped placeholders (dots allowed, e.g. ``{parent.text}``) are
substituted; other braces, such as the JSON schemas embedded in the prompts,
pass through untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_.]*)(?::([^{}\n]*))?\}")

# template kind -> profile -> shipped file
DEFAULT_TEMPLATES = {
    "initial": {"math": "math_initial.txt", "code": "code_initial.txt"},
    "evolve": {"math": "math_evolve.txt", "code": "code_evolve.txt"},
    "parent": {"math": "math_parent.txt", "code": "code_parent.txt"},
    "judge": {"math": "math_judge.txt", "code": "code_judge.txt"},
}

_PUBLIC_TESTS = {f"{k}_{i}" for k in ("test_str", "outcome_str") for i in (1, 2, 3)}
_PARENT_FIELDS = {
    f"parent.{f}"
    for f in ("text", "reasoning", "recent_win_explanation", "recent_loss_explanation", "evolving_memory")
}

# placeholders each kind of template may use
ALLOWED = {
    "initial": {"question", "options", "starter_block"},
    "evolve": {"question", "options", "starter_block", "parent_solutions"},
    "parent": {"answer_letter", "option_text_if_available", "score", "reasoning"} | _PARENT_FIELDS | _PUBLIC_TESTS,
    "judge": {"question", "options", "candidate_a", "candidate_b", "code_a", "code_b", "trace_a", "trace_b"},
}


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    text: str
    name: str = "<inline>"

    @property
    def placeholders(self) -> list[str]:
        seen: dict[str, None] = {}
        for m in PLACEHOLDER.finditer(self.text):
            seen.setdefault(m.group(1))
        return list(seen)

    def check(self, kind: str) -> None:
        unknown = [p for p in self.placeholders if p not in ALLOWED[kind]]
        if unknown:
            raise TemplateError(f"{self.name}: unknown placeholder(s) {', '.join('{' + u + '}' for u in unknown)}")

    def render(self, values: Mapping[str, Any]) -> str:
        missing = [p for p in self.placeholders if p not in values]
        if missing:
            raise TemplateError(f"{self.name}: unresolved placeholder(s) {', '.join('{' + m + '}' for m in missing)}")

        def sub(m: re.Match) -> str:
            value = values[m.group(1)]
            spec = m.group(2)
            try:
                return format(value, spec) if spec else str(value)
            except (TypeError, ValueError) as exc:
                raise TemplateError(f"{self.name}: cannot format {{{m.group(1)}:{spec}}}: {exc}") from exc

        return PLACEHOLDER.sub(sub, self.text)


def load_template(path: str | Path) -> Template:
    path = Path(path)
    return Template(path.read_text(encoding="utf-8"), name=str(path))


def default_template(kind: str, profile: str = "math") -> Template:
    fname = DEFAULT_TEMPLATES[kind][profile]
    text = resources.files(__package__).joinpath("templates", fname).read_text(encoding="utf-8")
    return Template(text, name=fname)


def dummy_values(kind: str) -> dict[str, Any]:
    """Placeholder values used to dry-run a template without a model."""
    values: dict[str, Any] = {name: f"<{name}>" for name in ALLOWED[kind]}
    if "score" in values:
        values["score"] = 0.0
    return values
