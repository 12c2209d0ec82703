"""Client for OpenAI-compatible chat-completion endpoints."""
from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import httpx

log = logging.getLogger(__name__)


class RolloutError(RuntimeError):
    pass


class Timeout(RolloutError):
    pass


class TransportError(RolloutError):
    pass


class AuthMissing(RolloutError):
    pass


class EndpointError(RolloutError):
    def __init__(self, status: int, body: str) -> None:
        super().__init__(f"endpoint returned {status}: {body[:200]}")
        self.status = status
        self.body = body[:200]


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str = "policy"
    auth_token_env: Optional[str] = None
    timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 16

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class GenerationRequest:
    request_id: str
    messages: tuple[dict, ...]
    temperature: float = 0.6
    top_p: float = 0.95
    max_tokens: int = 6144
    n_samples: int = 1
    seed: Optional[int] = None
    logprobs: bool = False

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")

    def body(self, model: str, n: Optional[int] = None) -> dict:
        out = {
            "model": model,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "n": self.n_samples if n is None else n,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        if self.logprobs:
            out["logprobs"] = True
        return out


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class Completion:
    request_id: str
    sample_index: int
    text: str
    finish_reason: FinishReason = FinishReason.STOP
    token_logprobs: Optional[tuple[float, ...]] = None

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "sample_index": self.sample_index,
            "text": self.text,
            "finish_reason": self.finish_reason.value,
            "token_logprobs": None if self.token_logprobs is None else list(self.token_logprobs),
        }


def _finish(value: Optional[str]) -> FinishReason:
    if value == "length":
        return FinishReason.LENGTH
    if value in ("stop", "eos", None):
        return FinishReason.STOP
    return FinishReason.ERROR


def _choice_logprobs(choice: dict) -> Optional[tuple[float, ...]]:
    lp = choice.get("logprobs")
    if not lp:
        return None
    if isinstance(lp.get("content"), list):
        return tuple(float(t["logprob"]) for t in lp["content"])
    if isinstance(lp.get("token_logprobs"), list):
        return tuple(float(x) for x in lp["token_logprobs"] if x is not None)
    return None


class ChatClient:
    """Thread-safe; at most ``max_in_flight`` HTTP requests outstanding at once."""

    def __init__(
        self,
        config: EndpointConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        headers = {}
        if config.auth_token_env:
            token = os.environ.get(config.auth_token_env)
            if not token:
                raise AuthMissing(f"environment variable {config.auth_token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self.config = config
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _post(self, path: str, body: dict) -> dict:
        cfg = self.config
        for attempt in range(cfg.max_retries + 1):
            last = attempt == cfg.max_retries
            try:
                with self._slots:
                    resp = self._http.post(path, json=body)
            except httpx.TimeoutException as exc:
                if last:
                    raise Timeout(f"{path}: {exc}") from exc
                err = exc
            except httpx.TransportError as exc:
                if last:
                    raise TransportError(f"{path}: {exc}") from exc
                err = exc
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    if last:
                        raise EndpointError(resp.status_code, resp.text)
                    err = f"status {resp.status_code}"
                elif resp.status_code >= 400:
                    raise EndpointError(resp.status_code, resp.text)
                else:
                    try:
                        return resp.json()
                    except ValueError:
                        raise EndpointError(resp.status_code, resp.text) from None
            delay = cfg.backoff_base * 2**attempt
            log.info("retrying %s after %s (attempt %d, sleeping %.2fs)", path, err, attempt + 1, delay)
            self._sleep(delay)
        raise AssertionError("unreachable")

    def generate(self, request: GenerationRequest) -> list[Completion]:
        """Exactly ``n_samples`` completions, in sample order."""
        out: list[Completion] = []
        while len(out) < request.n_samples:
            want = request.n_samples - len(out)
            data = self._post("/chat/completions", request.body(self.config.model, want))
            choices = sorted(data.get("choices") or [], key=lambda c: c.get("index", 0))
            if not choices:
                raise EndpointError(200, "response carried no choices")
            for choice in choices[:want]:
                msg = choice.get("message") or {}
                out.append(
                    Completion(
                        request_id=request.request_id,
                        sample_index=len(out),
                        text=msg.get("content") or "",
                        finish_reason=_finish(choice.get("finish_reason")),
                        token_logprobs=_choice_logprobs(choice),
                    )
                )
        return out

    def generate_many(
        self, requests: Sequence[GenerationRequest]
    ) -> dict[str, list[Completion] | RolloutError]:
        """Run requests concurrently; failures are returned in place of results."""

        def one(req: GenerationRequest):
            try:
                return self.generate(req)
            except RolloutError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            results = list(pool.map(one, requests))
        return {req.request_id: res for req, res in zip(requests, results)}

    def reference_logprobs(self, text: str) -> Optional[tuple[float, ...]]:
        """Per-token log-probabilities of ``text`` under the served model (echo scoring)."""
        body = {"model": self.config.model, "prompt": text, "max_tokens": 0, "echo": True, "logprobs": 0}
        data = self._post("/completions", body)
        choices = data.get("choices") or []
        return _choice_logprobs(choices[0]) if choices else None


def generate(config: EndpointConfig, request: GenerationRequest, transport: Optional[httpx.BaseTransport] = None) -> list[Completion]:
    with ChatClient(config, transport=transport) as client:
        return client.generate(request)
