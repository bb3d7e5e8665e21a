import itertools
import threading

import pytest

from duel_evolve.candidates import BackendError, Choice, Draft, Query, Verdict


class TextGenerator:
    """Emits fresh numbered texts, or a fixed text when ``constant`` is set."""

    def __init__(self, constant=None, prefix="cand"):
        self.constant = constant
        self.prefix = prefix
        self._counter = itertools.count()
        self._lock = threading.Lock()
        self.calls = []

    def generate(self, query, parents, n=1, *, seed=None):
        with self._lock:
            self.calls.append([(c.id, mu) for c, mu in parents])
            if self.constant is not None:
                return [Draft(self.constant) for _ in range(n)]
            return [Draft(f"{self.prefix}-{next(self._counter)}") for _ in range(n)]


class BrokenGenerator:
    def generate(self, query, parents, n=1, *, seed=None):
        raise BackendError("endpoint down")


class ScriptedJudge:
    """Returns verdicts in order from a script, cycling."""

    def __init__(self, *choices, rationale="scripted"):
        self.choices = itertools.cycle(choices)
        self.rationale = rationale
        self._lock = threading.Lock()

    def judge(self, query, a, b, *, seed=None):
        with self._lock:
            return Verdict(next(self.choices), self.rationale)


class BrokenJudge:
    def judge(self, query, a, b, *, seed=None):
        raise BackendError("timeout")


class LengthJudge:
    """Deterministic, transitive: prefers the longer text."""

    def judge(self, query, a, b, *, seed=None):
        if len(a.content) == len(b.content):
            return Verdict(Choice.TIE)
        return Verdict(Choice.A if len(a.content) > len(b.content) else Choice.B, "longer")


@pytest.fixture
def query():
    return Query("pick the best")
