"""Deterministic stand-in for a chat-completion server.

Two behaviours:

* ``scripted``: replay fixture texts keyed by :func:`fixture_key` of the last
  user message.
* ``rigged``: answer registered MCQ items correctly with probability ``p``,
  decided per (mock seed, request seed, item id, sample index).

The same handler backs an in-process ``httpx`` transport and the HTTP app
in :mod:`physrl.service`.
"""
from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import httpx

from ..dataset import McqItem
from ..prompts import parse_prompt, prompt_key
from ..rng import SeededRng, derive_seed


class UnknownFixtureKey(KeyError):
    pass


def fixture_key(message: str) -> str:
    return hashlib.sha256(message.encode("utf-8")).hexdigest()[:16]


def token_logprobs(text: str) -> list[float]:
    """Deterministic pseudo log-probabilities, one per whitespace token."""
    out = []
    for j, _tok in enumerate(text.split()):
        u = (derive_seed("policy-lp", text, j) >> 11) * (1.0 / (1 << 53))
        out.append(-(0.05 + 2.0 * u))
    return out


def reference_token_logprobs(text: str) -> list[float]:
    """Policy log-probs nudged by at most 0.1 nats, so KL estimates are small but non-zero."""
    out = []
    for j, lp in enumerate(token_logprobs(text)):
        u = (derive_seed("ref-lp", text, j) >> 11) * (1.0 / (1 << 53))
        out.append(lp + 0.2 * (u - 0.5))
    return out


@dataclass
class _Key:
    item_id: str
    correct_text: str


class MockEndpoint:
    def __init__(
        self,
        mode: str = "rigged",
        p: float = 1.0,
        seed: int = 0,
        items: Iterable[McqItem] = (),
        fixtures: Optional[Mapping[str, str | Sequence[str]]] = None,
        fail_statuses: Sequence[int] = (),
        delay: float = 0.0,
    ) -> None:
        if mode not in ("scripted", "rigged"):
            raise ValueError(f"unknown mock mode {mode!r}")
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        self.mode = mode
        self.p = p
        self.seed = seed
        self.fixtures = dict(fixtures or {})
        self.delay = delay
        self._answers: dict[str, _Key] = {}
        self._fail = list(fail_statuses)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self.requests_seen = 0
        self.completions_served = 0
        self.register(items)

    @classmethod
    def scripted(cls, fixtures: Mapping[str, str | Sequence[str]], **kw) -> "MockEndpoint":
        return cls(mode="scripted", fixtures=fixtures, **kw)

    @classmethod
    def rigged(cls, p: float, seed: int = 0, items: Iterable[McqItem] = (), **kw) -> "MockEndpoint":
        return cls(mode="rigged", p=p, seed=seed, items=items, **kw)

    def register(self, items: Iterable[McqItem]) -> None:
        for it in items:
            self._answers[prompt_key(it)] = _Key(it.id, it.correct_text)

    # -- answer logic ----------------------------------------------------------

    def scripted_text(self, message: str, sample_index: int) -> str:
        key = fixture_key(message)
        if key not in self.fixtures:
            raise UnknownFixtureKey(key)
        value = self.fixtures[key]
        if isinstance(value, str):
            return value
        return value[sample_index % len(value)]

    def rigged_answer(self, message: str, request_seed: Optional[int], sample_index: int) -> str:
        key, options = parse_prompt(message)
        if key not in self._answers:
            raise UnknownFixtureKey(fixture_key(key))
        entry = self._answers[key]
        correct = next(o.label for o in options if o.text == entry.correct_text)
        rng = SeededRng.derived("rigged", self.seed, request_seed, entry.item_id, sample_index)
        if rng.random() < self.p:
            return correct
        wrong = [o.label for o in options if o.label != correct]
        return wrong[rng.below(len(wrong))]

    def respond(self, message: str, request_seed: Optional[int], sample_index: int) -> str:
        if self.mode == "scripted":
            return self.scripted_text(message, sample_index)
        letter = self.rigged_answer(message, request_seed, sample_index)
        return f"<think>Weighing each option against the clip.</think> <answer>{letter}</answer>"

    # -- wire handlers -------------------------------------------------------------

    def _enter(self) -> Optional[int]:
        with self._lock:
            self.requests_seen += 1
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            return self._fail.pop(0) if self._fail else None

    def _leave(self) -> None:
        with self._lock:
            self.in_flight -= 1

    def chat_completions(self, body: dict) -> tuple[int, dict]:
        forced = self._enter()
        try:
            if self.delay:
                time.sleep(self.delay)
            if forced is not None:
                return forced, {"error": {"message": f"injected failure {forced}"}}
            users = [m for m in body.get("messages", []) if m.get("role") == "user"]
            if not users:
                return 400, {"error": {"message": "no user message"}}
            message = users[-1].get("content", "")
            n = int(body.get("n", 1))
            choices = []
            for i in range(n):
                try:
                    text = self.respond(message, body.get("seed"), i)
                except UnknownFixtureKey as exc:
                    return 404, {"error": {"message": f"UnknownFixtureKey {exc.args[0]}", "type": "UnknownFixtureKey"}}
                except ValueError as exc:
                    return 400, {"error": {"message": str(exc)}}
                choice = {
                    "index": i,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
                if body.get("logprobs"):
                    choice["logprobs"] = {
                        "content": [
                            {"token": tok, "logprob": lp}
                            for tok, lp in zip(text.split(), token_logprobs(text))
                        ]
                    }
                choices.append(choice)
            with self._lock:
                self.completions_served += n
            return 200, {
                "id": f"mock-{self.requests_seen}",
                "object": "chat.completion",
                "model": body.get("model", "mock"),
                "choices": choices,
            }
        finally:
            self._leave()

    def completions(self, body: dict) -> tuple[int, dict]:
        """Echo scoring only: reference log-probs for ``prompt``."""
        forced = self._enter()
        try:
            if forced is not None:
                return forced, {"error": {"message": f"injected failure {forced}"}}
            if not body.get("echo"):
                return 400, {"error": {"message": "mock /completions supports echo scoring only"}}
            text = body.get("prompt", "")
            return 200, {
                "object": "text_completion",
                "choices": [
                    {
                        "index": 0,
                        "text": text,
                        "finish_reason": "length",
                        "logprobs": {"tokens": text.split(), "token_logprobs": reference_token_logprobs(text)},
                    }
                ],
            }
        finally:
            self._leave()

    def _handle(self, request: httpx.Request) -> httpx.Response:
        try:
            body = json.loads(request.content or b"{}")
        except ValueError:
            return httpx.Response(400, json={"error": {"message": "invalid JSON"}})
        path = request.url.path.rstrip("/")
        if path.endswith("/chat/completions"):
            status, data = self.chat_completions(body)
        elif path.endswith("/completions"):
            status, data = self.completions(body)
        else:
            status, data = 404, {"error": {"message": f"no route {path}"}}
        return httpx.Response(status, json=data)

    def transport(self) -> httpx.MockTransport:
        """In-process transport for :class:`~physrl.rollout.client.ChatClient`."""
        return httpx.MockTransport(self._handle)
