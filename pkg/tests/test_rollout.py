from __future__ import annotations

import threading

import httpx
import pytest

from _util import item, mock_client
from physrl.prompts import render_messages, render_prompt
from physrl.reward import parse_response
from physrl.rollout import (
    AuthMissing,
    ChatClient,
    EndpointConfig,
    EndpointError,
    GenerationRequest,
    MockEndpoint,
    Timeout,
    TransportError,
    fixture_key,
)

CANNED = "<think>x</think><answer>A</answer>"


def request(it, n=1, seed=None, rid="r1", logprobs=False):
    return GenerationRequest(rid, tuple(render_messages(it)), n_samples=n, seed=seed, logprobs=logprobs)


def test_config_and_request_validation():
    with pytest.raises(ValueError):
        EndpointConfig("http://x", max_in_flight=0)
    with pytest.raises(ValueError):
        EndpointConfig("http://x", timeout=0)
    for bad in (dict(n_samples=0), dict(temperature=-0.1), dict(top_p=0.0), dict(top_p=1.5)):
        with pytest.raises(ValueError):
            GenerationRequest("r", (), **bad)


def test_scripted_nine_identical():
    it = item()
    mock = MockEndpoint.scripted({fixture_key(render_prompt(it)): CANNED})
    out = mock_client(mock).generate(request(it, n=9))
    assert [c.text for c in out] == [CANNED] * 9
    assert [c.sample_index for c in out] == list(range(9))


def test_scripted_unknown_key_is_endpoint_error():
    mock = MockEndpoint.scripted({})
    with pytest.raises(EndpointError) as exc:
        mock_client(mock).generate(request(item()))
    assert exc.value.status == 404 and "UnknownFixtureKey" in exc.value.body


def test_retry_after_two_500s():
    it = item()
    sleeps = []
    mock = MockEndpoint.scripted({fixture_key(render_prompt(it)): CANNED}, fail_statuses=[500, 500])
    client = ChatClient(EndpointConfig("http://m", max_retries=3, backoff_base=0.5),
                        transport=mock.transport(), sleep=sleeps.append)
    assert len(client.generate(request(it, n=2))) == 2
    assert sleeps == [0.5, 1.0]
    assert mock.requests_seen == 3


def test_retries_exhausted_and_429():
    it = item()
    mock = MockEndpoint.scripted({fixture_key(render_prompt(it)): CANNED}, fail_statuses=[429, 503, 502])
    client = ChatClient(EndpointConfig("http://m", max_retries=2), transport=mock.transport(), sleep=lambda s: None)
    with pytest.raises(EndpointError) as exc:
        client.generate(request(it))
    assert exc.value.status == 502 and mock.requests_seen == 3


def test_client_errors_not_retried():
    mock = MockEndpoint.scripted({}, fail_statuses=[400])
    client = ChatClient(EndpointConfig("http://m", max_retries=3), transport=mock.transport(), sleep=lambda s: None)
    with pytest.raises(EndpointError):
        client.generate(request(item()))
    assert mock.requests_seen == 1


def test_transport_errors_and_timeouts():
    def refuse(req):
        raise httpx.ConnectError("refused", request=req)

    def slow(req):
        raise httpx.ReadTimeout("slow", request=req)

    calls = []
    client = ChatClient(EndpointConfig("http://m", max_retries=2), transport=httpx.MockTransport(refuse),
                        sleep=calls.append)
    with pytest.raises(TransportError):
        client.generate(request(item()))
    assert len(calls) == 2
    client = ChatClient(EndpointConfig("http://m", max_retries=0), transport=httpx.MockTransport(slow))
    with pytest.raises(Timeout):
        client.generate(request(item()))


def test_auth_from_environment(monkeypatch):
    seen = []

    def handler(req):
        seen.append(req.headers.get("authorization"))
        return httpx.Response(200, json={"choices": [{"index": 0, "message": {"content": "hi"}}]})

    monkeypatch.delenv("PHYSRL_TEST_TOKEN", raising=False)
    with pytest.raises(AuthMissing):
        ChatClient(EndpointConfig("http://m", auth_token_env="PHYSRL_TEST_TOKEN"))
    monkeypatch.setenv("PHYSRL_TEST_TOKEN", "s3cret")
    client = ChatClient(EndpointConfig("http://m", auth_token_env="PHYSRL_TEST_TOKEN"), transport=httpx.MockTransport(handler))
    client.generate(request(item()))
    assert seen == ["Bearer s3cret"]


def test_wire_body():
    bodies = []

    def handler(req):
        import json
        bodies.append(json.loads(req.content))
        return httpx.Response(200, json={"choices": [{"index": i, "message": {"content": "x"}} for i in range(3)]})

    client = ChatClient(EndpointConfig("http://m/v1", model="m1"), transport=httpx.MockTransport(handler))
    client.generate(GenerationRequest("r", ({"role": "user", "content": "hi"},), 0.6, 0.95, 6144, 3, seed=4, logprobs=True))
    assert bodies == [{"model": "m1", "messages": [{"role": "user", "content": "hi"}], "temperature": 0.6,
                       "top_p": 0.95, "max_tokens": 6144, "n": 3, "seed": 4, "logprobs": True}]


def test_short_responses_are_topped_up():
    calls = []

    def handler(req):
        import json
        n = json.loads(req.content)["n"]
        calls.append(n)
        return httpx.Response(200, json={"choices": [{"index": 0, "message": {"content": "x"}}]})

    out = ChatClient(EndpointConfig("http://m"), transport=httpx.MockTransport(handler)).generate(request(item(), n=3))
    assert len(out) == 3 and calls == [3, 2, 1]


def test_rigged_extremes():
    binary = [item(("yes", "no"), "AB"[i % 2], id=f"q{i}", question=f"Q{i}?") for i in range(50)]
    for p, want_correct in ((1.0, True), (0.0, False)):
        mock = MockEndpoint.rigged(p, items=binary)
        client = mock_client(mock)
        for it in binary:
            for c in client.generate(request(it, n=3, seed=1)):
                assert (parse_response(c.text).answer == it.correct_label) is want_correct
                assert parse_response(c.text).strict_format_ok


def test_rigged_accuracy_rate():
    items = [item(("a", "b", "c", "d"), "C", id=f"q{i}", question=f"Q{i}?") for i in range(1000)]
    mock = MockEndpoint.rigged(0.7, seed=3, items=items)
    client = mock_client(mock, max_in_flight=16)
    results = client.generate_many([request(it, rid=it.id, seed=0) for it in items])
    acc = sum(parse_response(results[it.id][0].text).answer == "C" for it in items) / len(items)
    assert abs(acc - 0.7) <= 0.045


def test_rigged_deterministic():
    items = [item(("a", "b", "c", "d"), "B", id=f"q{i}", question=f"Q{i}?") for i in range(20)]
    runs = []
    for _ in range(2):
        client = mock_client(MockEndpoint.rigged(0.5, seed=9, items=items))
        res = client.generate_many([request(it, n=4, seed=2, rid=it.id) for it in items])
        runs.append({k: [c.text for c in v] for k, v in res.items()})
    assert runs[0] == runs[1]


def test_in_flight_cap_respected():
    items = [item(id=f"q{i}", question=f"Q{i}?") for i in range(40)]
    mock = MockEndpoint.rigged(0.5, items=items, delay=0.01)
    client = mock_client(mock, max_in_flight=4)
    results = client.generate_many([request(it, rid=it.id) for it in items])
    assert 1 < mock.max_in_flight_seen <= 4
    assert list(results) == [it.id for it in items]


def test_in_flight_cap_shared_across_threads():
    items = [item(id=f"q{i}", question=f"Q{i}?") for i in range(24)]
    mock = MockEndpoint.rigged(0.5, items=items, delay=0.01)
    client = mock_client(mock, max_in_flight=3)
    threads = [threading.Thread(target=client.generate_many, args=([request(it, rid=it.id) for it in items[k::3]],))
               for k in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert mock.max_in_flight_seen <= 3


def test_generate_many_returns_errors_in_place():
    good = item(id="good", question="ok?")
    mock = MockEndpoint.rigged(1.0, items=[good])
    res = mock_client(mock).generate_many([request(good, rid="a"), request(item(id="x", question="unknown?"), rid="b")])
    assert isinstance(res["b"], EndpointError) and len(res["a"]) == 1


def test_logprobs_and_reference_pass():
    it = item()
    mock = MockEndpoint.rigged(1.0, items=[it])
    client = mock_client(mock)
    [c] = client.generate(request(it, logprobs=True))
    ref = client.reference_logprobs(c.text)
    assert c.token_logprobs is not None and len(ref) == len(c.token_logprobs) == len(c.text.split())
    [plain] = client.generate(request(it))
    assert plain.token_logprobs is None
