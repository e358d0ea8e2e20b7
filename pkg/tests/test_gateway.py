"""Backend tests: fingerprints, cassettes, scripted queues, and the HTTP client."""
from __future__ import annotations

import json
from types import SimpleNamespace

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from puzzle2asp import gateway
from puzzle2asp.gateway import (
    Cassette,
    CompletionRequest,
    GatewayConfig,
    LiveBackend,
    QueueEmpty,
    RateLimited,
    RecordingBackend,
    ReplayBackend,
    ReplayMiss,
    ScriptedBackend,
    TransportError,
    build_backend,
    fingerprint,
)

REQ = CompletionRequest(prompt="Solve this puzzle.", model="gpt-4")


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------


def test_fingerprint_is_stable():
    assert fingerprint(REQ) == fingerprint(CompletionRequest("Solve this puzzle.", "gpt-4"))


def test_fingerprint_ignores_trailing_whitespace_per_line():
    messy = CompletionRequest("Solve this puzzle.  \t", "gpt-4")
    assert fingerprint(messy) == fingerprint(REQ)


def test_fingerprint_keeps_leading_whitespace():
    indented = CompletionRequest("  Solve this puzzle.", "gpt-4")
    assert fingerprint(indented) != fingerprint(REQ)


@pytest.mark.parametrize(
    "other",
    [
        CompletionRequest("Solve this puzzle!", "gpt-4"),
        CompletionRequest("Solve this puzzle.", "gpt-3.5-turbo"),
        CompletionRequest("Solve this puzzle.", "gpt-4", temperature=0.7),
        CompletionRequest("Solve this puzzle.", "gpt-4", top_p=0.9),
        CompletionRequest("Solve this puzzle.", "gpt-4", max_tokens=128),
        CompletionRequest("Solve this puzzle.", "gpt-4", stop=("\n\n",)),
    ],
)
def test_fingerprint_distinguishes_every_field(other):
    assert fingerprint(other) != fingerprint(REQ)


@given(st.lists(st.text(st.characters(min_codepoint=33, max_codepoint=126), max_size=12), max_size=6))
@settings(max_examples=100, deadline=None)
def test_fingerprint_whitespace_invariance(lines):
    plain = CompletionRequest("\n".join(lines), "m")
    padded = CompletionRequest("\n".join(line + "  \t" for line in lines), "m")
    assert fingerprint(plain) == fingerprint(padded)


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------


def test_scripted_pops_in_order_and_logs_requests():
    backend = ScriptedBackend(["first", "second"])
    assert backend.complete(REQ) == "first"
    assert backend.complete(REQ) == "second"
    assert len(backend.requests) == 2


def test_scripted_raises_when_drained():
    backend = ScriptedBackend(["only"])
    backend.complete(REQ)
    with pytest.raises(QueueEmpty):
        backend.complete(REQ)


def test_scripted_push_appends():
    backend = ScriptedBackend()
    backend.push("late")
    assert backend.complete(REQ) == "late"


# ---------------------------------------------------------------------------
# Cassettes and replay
# ---------------------------------------------------------------------------


def test_cassette_roundtrip(tmp_path):
    path = tmp_path / "run.cassette.json"
    cassette = Cassette(path)
    cassette.record(REQ, "answer")
    cassette.save()
    loaded = Cassette.load(path)
    assert loaded.lookup(fingerprint(REQ)) == "answer"
    assert len(loaded.entries) == 1
    assert not path.with_suffix(".json.tmp").exists()


def test_cassette_recording_twice_keeps_first_response():
    cassette = Cassette()
    cassette.record(REQ, "first")
    cassette.record(REQ, "second")
    assert len(cassette.entries) == 1
    assert cassette.lookup(fingerprint(REQ)) == "first"


def test_cassette_never_stores_credentials(tmp_path, monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-super-secret")
    path = tmp_path / "run.cassette.json"
    cassette = Cassette(path)
    cassette.record(REQ, "answer")
    cassette.save()
    text = path.read_text()
    assert "sk-super-secret" not in text
    assert "Authorization" not in text


def test_replay_hit_and_miss():
    cassette = Cassette()
    cassette.record(REQ, "answer")
    backend = ReplayBackend(cassette)
    assert backend.complete(REQ) == "answer"
    other = CompletionRequest("Different prompt.", "gpt-4")
    with pytest.raises(ReplayMiss) as info:
        backend.complete(other)
    assert info.value.fingerprint == fingerprint(other)


def test_recording_backend_records_then_replays(tmp_path):
    path = tmp_path / "run.cassette.json"
    inner = ScriptedBackend(["answer"])  # a second call would raise QueueEmpty
    backend = RecordingBackend(inner, Cassette(path))
    assert backend.complete(REQ) == "answer"
    assert path.exists()  # flushed immediately
    assert backend.complete(REQ) == "answer"  # served from the cassette
    assert len(inner.requests) == 1


def test_recording_backend_without_path_skips_autosave():
    backend = RecordingBackend(ScriptedBackend(["answer"]), Cassette())
    assert backend.complete(REQ) == "answer"
    assert backend.complete(REQ) == "answer"


def test_recording_resumes_from_existing_cassette(tmp_path):
    path = tmp_path / "run.cassette.json"
    first = RecordingBackend(ScriptedBackend(["answer"]), Cassette(path))
    first.complete(REQ)
    resumed = RecordingBackend(ScriptedBackend([]), Cassette.load(path))
    assert resumed.complete(REQ) == "answer"  # no inner call needed


# ---------------------------------------------------------------------------
# Live backend, driven through a fake HTTP session
# ---------------------------------------------------------------------------


class FakeResponse:
    def __init__(self, status_code, body=None, headers=None, text=""):
        self.status_code = status_code
        self._body = body if body is not None else {}
        self.headers = headers or {}
        self.text = text

    def json(self):
        return self._body


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls: list[SimpleNamespace] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append(SimpleNamespace(url=url, payload=json, headers=headers, timeout=timeout))
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def chat_ok(text="answer"):
    return FakeResponse(200, {"choices": [{"message": {"content": text}}]})


def live(monkeypatch, outcomes, **config_kwargs):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-test")
    session = FakeSession(outcomes)
    backend = LiveBackend(GatewayConfig(**config_kwargs), session=session)
    sleeps: list[float] = []
    backend._sleep = sleeps.append
    return backend, session, sleeps


def test_chat_payload_shape(monkeypatch):
    backend, session, _ = live(monkeypatch, [chat_ok("hello")])
    assert backend.complete(REQ) == "hello"
    (call,) = session.calls
    assert call.url.endswith("/chat/completions")
    assert call.payload["messages"] == [{"role": "user", "content": REQ.prompt}]
    assert call.payload["model"] == "gpt-4"
    assert call.headers["Authorization"] == "Bearer sk-test"
    assert call.timeout == 120.0


def test_completions_payload_shape(monkeypatch):
    response = FakeResponse(200, {"choices": [{"text": "plain"}]})
    backend, session, _ = live(monkeypatch, [response], api_style="completions")
    assert backend.complete(REQ) == "plain"
    (call,) = session.calls
    assert call.url.endswith("/completions")
    assert not call.url.endswith("/chat/completions")
    assert call.payload["prompt"] == REQ.prompt
    assert "messages" not in call.payload


def test_stop_sequences_forwarded(monkeypatch):
    backend, session, _ = live(monkeypatch, [chat_ok()])
    backend.complete(CompletionRequest("p", "m", stop=("Problem 4:",)))
    assert session.calls[0].payload["stop"] == ["Problem 4:"]


def test_rate_limit_retries_and_honors_retry_after(monkeypatch):
    limited = FakeResponse(429, headers={"Retry-After": "1.5"})
    backend, session, sleeps = live(monkeypatch, [limited, chat_ok("eventually")])
    assert backend.complete(REQ) == "eventually"
    assert len(session.calls) == 2
    assert sleeps == [1.5]


def test_rate_limit_exhausts_retries(monkeypatch):
    outcomes = [FakeResponse(429)] * 4
    backend, session, sleeps = live(monkeypatch, outcomes, max_retries=3, backoff_base_s=1.0)
    with pytest.raises(RateLimited):
        backend.complete(REQ)
    assert len(session.calls) == 4  # initial try + 3 retries
    assert sleeps == [1.0, 2.0, 4.0]  # exponential backoff


def test_server_error_retries_then_fails(monkeypatch):
    outcomes = [FakeResponse(500)] * 3
    backend, session, _ = live(monkeypatch, outcomes, max_retries=2)
    with pytest.raises(TransportError):
        backend.complete(REQ)
    assert len(session.calls) == 3


def test_server_error_then_success(monkeypatch):
    backend, session, _ = live(monkeypatch, [FakeResponse(502), chat_ok("ok")])
    assert backend.complete(REQ) == "ok"
    assert len(session.calls) == 2


def test_client_error_fails_immediately(monkeypatch):
    backend, session, sleeps = live(monkeypatch, [FakeResponse(400, text="bad request")])
    with pytest.raises(TransportError):
        backend.complete(REQ)
    assert len(session.calls) == 1
    assert sleeps == []


def test_network_failure_wrapped(monkeypatch):
    backend, _, _ = live(monkeypatch, [requests.ConnectionError("boom")])
    with pytest.raises(TransportError):
        backend.complete(REQ)


def test_malformed_body_wrapped(monkeypatch):
    backend, _, _ = live(monkeypatch, [FakeResponse(200, {"choices": []})])
    with pytest.raises(TransportError):
        backend.complete(REQ)


def test_missing_credential_fails_before_any_request(monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    session = FakeSession([chat_ok()])
    backend = LiveBackend(GatewayConfig(), session=session)
    with pytest.raises(TransportError) as info:
        backend.complete(REQ)
    assert "OPENAI_API_KEY" in str(info.value)
    assert session.calls == []


def test_credential_not_stored_on_instance(monkeypatch):
    backend, _, _ = live(monkeypatch, [chat_ok()])
    backend.complete(REQ)
    assert "sk-test" not in repr(vars(backend))


def test_requests_per_minute_budget(monkeypatch):
    clock = {"t": 0.0}
    monkeypatch.setattr(gateway.time, "monotonic", lambda: clock["t"])
    monkeypatch.setenv("OPENAI_API_KEY", "sk-test")
    session = FakeSession([chat_ok()] * 3)
    backend = LiveBackend(GatewayConfig(requests_per_minute=2), session=session)
    sleeps: list[float] = []

    def sleep(seconds):
        sleeps.append(seconds)
        clock["t"] += seconds

    backend._sleep = sleep
    for _ in range(3):
        backend.complete(REQ)
    assert len(session.calls) == 3
    assert sleeps and sleeps[0] >= 59.0  # third call waited for the window


# ---------------------------------------------------------------------------
# Configuration and assembly
# ---------------------------------------------------------------------------


def test_config_from_file(tmp_path):
    path = tmp_path / "gw.json"
    path.write_text(json.dumps({"endpoint": "http://localhost:8000/v1", "max_retries": 1}))
    config = GatewayConfig.from_file(path)
    assert config.endpoint == "http://localhost:8000/v1"
    assert config.max_retries == 1
    assert config.api_style == "chat"


def test_config_from_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "gw.json"
    path.write_text(json.dumps({"endpont": "oops"}))
    with pytest.raises(ValueError):
        GatewayConfig.from_file(path)


def test_config_from_env_reads_base_url(monkeypatch):
    monkeypatch.setenv("OPENAI_BASE_URL", "http://mirror.internal/v1")
    assert GatewayConfig.from_env().endpoint == "http://mirror.internal/v1"


def test_build_backend_scripted():
    backend = build_backend("scripted", scripted_responses=["a"])
    assert isinstance(backend, ScriptedBackend)
    assert backend.complete(REQ) == "a"


def test_build_backend_replay_requires_cassette():
    with pytest.raises(ValueError):
        build_backend("replay")


def test_build_backend_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_backend("telepathy")


def test_build_backend_recording_wraps_scripted(tmp_path):
    path = tmp_path / "run.cassette.json"
    backend = build_backend("scripted", cassette_path=path, record=True, scripted_responses=["a"])
    assert isinstance(backend, RecordingBackend)
    assert backend.complete(REQ) == "a"
    assert path.exists()
