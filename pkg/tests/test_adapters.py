import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from duel_evolve.adapters.llm import (
    ChatClient,
    EndpointConfig,
    LLMGenerator,
    LLMJudge,
    option_text,
    parse_draft,
    parse_structured,
    parse_verdict,
    strip_fence,
)
from duel_evolve.adapters.oracle import (
    ArmGenerator,
    FixedArms,
    OracleGenerator,
    OracleJudge,
    PositionBiasedJudge,
    SyntheticTask,
)
from duel_evolve.adapters.templates import (
    DEFAULT_TEMPLATES,
    Template,
    TemplateError,
    default_template,
    dummy_values,
)
from duel_evolve.candidates import BackendError, Candidate, Choice, Draft, Query


def cand(i, content, **kw):
    return Candidate.from_draft(i, Draft(content, **kw))


# ---------------------------------------------------------------- oracle


class TestSyntheticTask:
    def test_roundtrip(self):
        task = SyntheticTask(dimension=20, seed=3)
        bits = np.random.default_rng(0).integers(0, 2, 20)
        assert np.array_equal(task.decode(task.encode(bits)), bits)

    @pytest.mark.parametrize("text", ["", "0101", "2" * 60, "x" * 60])
    def test_undecodable(self, text):
        assert SyntheticTask().utility(text) is None

    def test_optimum_beats_random_and_greedy(self):
        task = SyntheticTask(seed=1)
        best = task.bits_utility(task.optimum())
        assert best > task.bits_utility(np.ones(60, dtype=np.uint8))
        rng = np.random.default_rng(0)
        for _ in range(200):
            assert task.bits_utility(rng.integers(0, 2, 60)) <= best + 1e-12

    def test_optimum_is_exhaustive_max_small(self):
        # brute force over every vector at a small dimension
        task = SyntheticTask(dimension=8, seed=5)
        grid = ((np.arange(256)[:, None] >> np.arange(8)) & 1).astype(np.uint8)
        brute = max(task.bits_utility(b) for b in grid)
        assert math.isclose(task.bits_utility(task.optimum()), brute, rel_tol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticTask(dimension=1)
        with pytest.raises(ValueError):
            SyntheticTask(mutation_rate=1.5)


class TestOracleJudge:
    def test_equal_utilities_balanced(self, query):
        arms = FixedArms([0.3, 0.3])
        judge = OracleJudge(arms, tie_rate=0.0, seed=0)
        n = 10_000
        wins = sum(judge.judge(query, cand(0, "arm:0"), cand(1, "arm:1")).choice is Choice.A for _ in range(n))
        assert abs(wins / n - 0.5) <= 3 * math.sqrt(0.25 / n)

    def test_large_gap_nearly_always_wins(self, query):
        judge = OracleJudge(FixedArms([10.0, 0.0]), tie_rate=0.0, seed=1)
        wins = sum(judge.judge(query, cand(0, "arm:0"), cand(1, "arm:1")).choice is Choice.A for _ in range(10_000))
        assert wins >= 9_999 - 3

    def test_win_rate_matches_model(self, query):
        judge = OracleJudge(FixedArms([1.0, 0.0]), beta_judge=1.0, tie_rate=0.0, seed=2)
        n = 20_000
        wins = sum(judge.judge(query, cand(0, "arm:0"), cand(1, "arm:1")).choice is Choice.A for _ in range(n))
        p = 1 / (1 + math.exp(-1.0))
        assert abs(wins / n - p) <= 4 * math.sqrt(p * (1 - p) / n)

    def test_always_tie(self, query):
        judge = OracleJudge(FixedArms([5.0, 0.0]), tie_rate=1.0, seed=0)
        assert all(judge.judge(query, cand(0, "arm:0"), cand(1, "arm:1")).choice is Choice.TIE for _ in range(100))

    def test_invalid_content(self, query):
        v = OracleJudge(FixedArms([1.0]), seed=0).judge(query, cand(0, "arm:0"), cand(1, "nonsense"))
        assert v.choice is Choice.INVALID and v.rationale

    def test_per_call_seed_reproducible(self, query):
        judge = OracleJudge(FixedArms([0.0, 0.0]), seed=None)
        a, b = cand(0, "arm:0"), cand(1, "arm:1")
        assert [judge.judge(query, a, b, seed=s).choice for s in range(30)] == [
            judge.judge(query, a, b, seed=s).choice for s in range(30)
        ]

    def test_deterministic_mode(self, query):
        judge = OracleJudge(FixedArms([1.0, 2.0, 2.0]), deterministic=True)
        assert judge.judge(query, cand(0, "arm:0"), cand(1, "arm:1")).choice is Choice.B
        assert judge.judge(query, cand(1, "arm:1"), cand(0, "arm:0")).choice is Choice.A
        assert judge.judge(query, cand(1, "arm:1"), cand(2, "arm:2")).choice is Choice.TIE

    def test_position_biased(self, query):
        assert PositionBiasedJudge().judge(query, cand(0, "x"), cand(1, "y")).choice is Choice.A


class TestOracleGenerator:
    def parents(self, task, bits):
        return [(cand(0, task.encode(bits)), 0.0)]

    def test_zero_mutation_copies(self, query):
        task = SyntheticTask(dimension=30, mutation_rate=0.0)
        bits = np.random.default_rng(0).integers(0, 2, 30)
        out = OracleGenerator(task, seed=0).generate(query, self.parents(task, bits), n=5)
        assert all(d.content == task.encode(bits) for d in out)

    def test_full_mutation_complements(self, query):
        task = SyntheticTask(dimension=30, mutation_rate=1.0)
        bits = np.random.default_rng(0).integers(0, 2, 30)
        out = OracleGenerator(task, seed=0).generate(query, self.parents(task, bits), n=3)
        assert all(d.content == task.encode(1 - bits) for d in out)

    def test_mean_hamming_distance(self, query):
        task = SyntheticTask(dimension=100, mutation_rate=0.05)
        bits = np.zeros(100, dtype=np.uint8)
        out = OracleGenerator(task, seed=4).generate(query, self.parents(task, bits), n=1000)
        dist = np.array([task.decode(d.content).sum() for d in out])
        # Binomial(100, 0.05): mean 5, sd of the average sqrt(4.75/1000)
        assert abs(dist.mean() - 5.0) <= 4 * math.sqrt(4.75 / 1000)

    def test_initial_sampling(self, query):
        task = SyntheticTask(dimension=16)
        out = OracleGenerator(task, seed=0).generate(query, [], n=4)
        assert len(out) == 4 and all(task.decode(d.content) is not None for d in out)

    def test_seed_reproducible(self, query):
        task = SyntheticTask()
        gen = OracleGenerator(task)
        assert gen.generate(query, [], n=3, seed=7) == gen.generate(query, [], n=3, seed=7)

    def test_arm_generator_exhausts(self, query):
        gen = ArmGenerator(FixedArms([0, 1, 2]))
        assert [d.content for d in gen.generate(query, [], n=2)] == ["arm:0", "arm:1"]
        assert [d.content for d in gen.generate(query, [], n=2)] == ["arm:2"]
        assert gen.generate(query, [], n=2) == []


# ---------------------------------------------------------------- templates


@pytest.mark.parametrize("kind", sorted(DEFAULT_TEMPLATES))
@pytest.mark.parametrize("profile", ["math", "code"])
def test_shipped_templates_check_and_render(kind, profile):
    t = default_template(kind, profile)
    t.check(kind)
    text = t.render(dummy_values(kind))
    assert not any(f"{{{p}}}" in text for p in t.placeholders)


def test_json_braces_left_alone():
    t = Template('Reply as {"solution": "A"} for {question}')
    assert t.placeholders == ["question"]
    assert t.render({"question": "why?"}) == 'Reply as {"solution": "A"} for why?'


def test_format_spec():
    assert Template("Score: {score:.3f}").render({"score": 0.12345}) == "Score: 0.123"


def test_unknown_placeholder_rejected():
    with pytest.raises(TemplateError, match="bogus"):
        Template("{question} {bogus}", name="t.txt").check("initial")


def test_unresolved_placeholder_rejected():
    with pytest.raises(TemplateError, match="question"):
        Template("{question}").render({})


def test_bad_format_spec():
    with pytest.raises(TemplateError):
        Template("{score:.3f}").render({"score": "high"})


# ---------------------------------------------------------------- parsing


class TestParsing:
    def test_structured_plain_fenced_embedded(self):
        assert parse_structured('{"solution": "A"}') == {"solution": "A"}
        assert parse_structured('```json\n{"solution": "B"}\n```') == {"solution": "B"}
        assert parse_structured('Sure! {"solution": "T", "reasoning": "x"} done') == {"solution": "T", "reasoning": "x"}
        assert parse_structured("no json here") is None
        assert parse_structured("[1, 2]") is None

    @pytest.mark.parametrize(
        "text,choice",
        [
            ('{"solution": "A", "reasoning": "r"}', Choice.A),
            ('{"solution": "b"}', Choice.B),
            ('{"solution": "T"}', Choice.TIE),
            ('{"solution": "tie"}', Choice.TIE),
            ('{"solution": "(A)"}', Choice.A),
            ('{"solution": "C"}', Choice.INVALID),
            ('{"reasoning": "forgot"}', Choice.INVALID),
            ("gibberish", Choice.INVALID),
        ],
    )
    def test_verdict(self, text, choice):
        v = parse_verdict(text)
        assert v.choice is choice
        if choice is Choice.INVALID:
            assert v.rationale and v.raw == text

    def test_draft_truncates_memory(self):
        d = parse_draft(json.dumps({"solution": "42", "reasoning": "r", "evolving_memory": "m" * 600}))
        assert d.content == "42" and len(d.evolving_memory) == 500

    def test_draft_rejects_empty_solution(self):
        assert parse_draft('{"solution": "  "}') is None
        assert parse_draft("nope") is None

    def test_helpers(self):
        assert strip_fence("```python\nprint(1)\n```") == "print(1)"
        assert strip_fence("print(1)") == "print(1)"
        opts = "A) seven\nB) eight\n(C) nine"
        assert option_text(opts, "B") == "eight"
        assert option_text(opts, "C") == "nine"
        assert option_text(opts, "D") == ""


# ---------------------------------------------------------------- HTTP backends


class FakeEndpoint:
    """Local chat-completions server replaying scripted replies."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        self.lock = threading.Lock()
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with endpoint.lock:
                    endpoint.requests.append((self.path, body))
                    reply = endpoint.replies.pop(0) if len(endpoint.replies) > 1 else endpoint.replies[0]
                status, content = reply
                if status != 200:
                    self.send_response(status)
                    self.end_headers()
                    return
                data = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()

    def client(self, **kw):
        host, port = self.server.server_address
        return ChatClient(EndpointConfig(base_url=f"http://{host}:{port}/v1", model="m", backoff=0.0, **kw))


@pytest.fixture
def mq():
    return Query("What is 6*7?", context="A) 41\nB) 42")


class TestLLMJudge:
    def test_decisions(self, mq):
        replies = [(200, '{"reasoning": "r", "solution": "A"}'), (200, '{"solution": "T"}'), (200, '{"reasoning": "?"}')]
        with FakeEndpoint(replies) as ep:
            judge = LLMJudge(ep.client())
            a, b = cand(0, "B"), cand(1, "A")
            assert judge.judge(mq, a, b).choice is Choice.A
            assert judge.judge(mq, a, b).choice is Choice.TIE
            assert judge.judge(mq, a, b).choice is Choice.INVALID

    def test_request_payload(self, mq):
        with FakeEndpoint([(200, '{"solution": "B"}')]) as ep:
            LLMJudge(ep.client()).judge(mq, cand(0, "A"), cand(1, "B"))
            path, body = ep.requests[0]
        assert path == "/v1/chat/completions"
        assert body["model"] == "m" and body["temperature"] == 0.0
        assert body["messages"][0] == {"role": "system", "content": "You are a helpful assistant."}
        assert mq.question in body["messages"][1]["content"]

    def test_retries_then_backend_error(self, mq):
        with FakeEndpoint([(500, "")]) as ep:
            with pytest.raises(BackendError):
                LLMJudge(ep.client(retries=2)).judge(mq, cand(0, "A"), cand(1, "B"))
            assert len(ep.requests) == 3

    def test_recovers_after_transient_error(self, mq):
        with FakeEndpoint([(503, ""), (200, '{"solution": "B"}')]) as ep:
            assert LLMJudge(ep.client(retries=1)).judge(mq, cand(0, "A"), cand(1, "B")).choice is Choice.B


class TestLLMGenerator:
    def test_initial_template_without_parents(self, mq):
        reply = json.dumps({"solution": "B", "reasoning": "6*7=42", "evolving_memory": "x" * 600})
        with FakeEndpoint([(200, reply)]) as ep:
            gen = LLMGenerator(ep.client())
            drafts = gen.generate(mq, [], n=3)
            prompts = [body["messages"][1]["content"] for _, body in ep.requests]
        assert len(drafts) == 3 and all(d.content == "B" and len(d.evolving_memory) == 500 for d in drafts)
        assert prompts[0] == default_template("initial").render(
            {"question": mq.question, "options": mq.context, "starter_block": ""}
        )
        assert all(body["temperature"] == 0.7 for _, body in ep.requests)

    def test_evolve_prompt_lists_parents(self, mq):
        with FakeEndpoint([(200, '{"solution": "B"}')]) as ep:
            gen = LLMGenerator(ep.client())
            parents = [(cand(0, "A", reasoning="guess"), 0.25), (cand(1, "B", reasoning="multiply"), 1.5)]
            gen.generate(mq, parents, n=1)
            prompt = ep.requests[0][1]["messages"][1]["content"]
        assert "multiply" in prompt and "guess" in prompt
        assert "1.500" in prompt or "1.5" in prompt

    def test_unparseable_slot_retried_once_then_dropped(self, mq):
        with FakeEndpoint([(200, "not json")]) as ep:
            assert LLMGenerator(ep.client(concurrency=1)).generate(mq, [], n=2) == []
            assert len(ep.requests) == 4

    def test_transport_failure_loses_slot(self, mq):
        with FakeEndpoint([(500, "")]) as ep:
            assert LLMGenerator(ep.client(retries=0)).generate(mq, [], n=2) == []
