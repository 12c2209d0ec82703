"""HTTP service over the core package.

``create_app`` exposes scoring, advantage, KL, manifest validation and report
rendering. ``create_mock_app`` serves a :class:`MockEndpoint` over the
OpenAI-compatible wire format so external clients can exercise it.
"""
from __future__ import annotations

import threading
import time
from typing import Any, Literal, Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .dataset import DatasetError, McqItem, validate_manifest
from .evalharness import EvalReport, render_report
from .reward import DEFAULT_WEIGHTS, RewardError, grpo_advantages, kl_penalty, score_groups
from .rollout.mock import MockEndpoint


class ResponseRecord(BaseModel):
    question_id: str
    response_text: str


class ScoreRequest(BaseModel):
    items: list[dict[str, Any]]
    responses: list[ResponseRecord]
    group_size: int = Field(9, ge=2)
    format: Literal["strict", "lenient"] = "strict"
    answer_mode: Literal["letter_or_text", "exact_set"] = "letter_or_text"
    weights: tuple[float, float] = DEFAULT_WEIGHTS


class ScoreResponse(BaseModel):
    records: list[dict[str, Any]]


class AdvantageRequest(BaseModel):
    rewards: list[float] = Field(min_length=2)
    epsilon: float = 1e-12
    question_id: str = ""


class AdvantageResponse(BaseModel):
    question_id: str
    rewards: list[float]
    advantages: list[float]
    degenerate: bool
    mean: float
    std: float


class KlRequest(BaseModel):
    policy_logprobs: list[float]
    ref_logprobs: list[float]


class KlResponse(BaseModel):
    kl: float


class ValidateRequest(BaseModel):
    manifest: str


class RenderRequest(BaseModel):
    report: Optional[dict[str, Any]] = None
    components: Optional[dict[str, float]] = None
    label: str = "model"
    format: Literal["markdown", "csv", "json"] = "markdown"


class RenderResponse(BaseModel):
    text: str
    overall: Optional[float]


def _domain_error(request: Request, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})


def create_app() -> FastAPI:
    app = FastAPI(title="physrl", version=__version__)
    app.add_exception_handler(RewardError, _domain_error)
    app.add_exception_handler(DatasetError, _domain_error)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/score", response_model=ScoreResponse)
    def score(req: ScoreRequest) -> ScoreResponse:
        items = {}
        for raw in req.items:
            item = McqItem.from_dict(raw)
            item.check()
            items[item.id] = item
        records = score_groups(
            (r.model_dump() for r in req.responses),
            items,
            req.group_size,
            req.weights,
            req.answer_mode,
            req.format,
        )
        return ScoreResponse(records=list(records))

    @app.post("/advantages", response_model=AdvantageResponse)
    def advantages(req: AdvantageRequest) -> dict:
        return grpo_advantages(req.rewards, req.epsilon, req.question_id).to_dict()

    @app.post("/kl", response_model=KlResponse)
    def kl(req: KlRequest) -> KlResponse:
        return KlResponse(kl=kl_penalty(req.policy_logprobs, req.ref_logprobs))

    @app.post("/validate")
    def validate(req: ValidateRequest) -> dict:
        return validate_manifest(req.manifest).to_dict()

    @app.post("/report/render", response_model=RenderResponse)
    def render(req: RenderRequest) -> RenderResponse:
        if req.report is not None:
            report = EvalReport.from_dict(req.report)
        elif req.components is not None:
            report = EvalReport.from_means(req.components, req.label)
        else:
            raise RewardError("either report or components is required")
        return RenderResponse(text=render_report(report, req.format), overall=report.overall)

    return app


def create_mock_app(mock: MockEndpoint) -> FastAPI:
    app = FastAPI(title="physrl mock endpoint", version=__version__)

    async def _body(request: Request) -> dict:
        try:
            return await request.json()
        except ValueError:
            return {}

    @app.post("/chat/completions")
    @app.post("/v1/chat/completions")
    async def chat(request: Request) -> JSONResponse:
        status, data = mock.chat_completions(await _body(request))
        return JSONResponse(status_code=status, content=data)

    @app.post("/completions")
    @app.post("/v1/completions")
    async def completions(request: Request) -> JSONResponse:
        status, data = mock.completions(await _body(request))
        return JSONResponse(status_code=status, content=data)

    return app


class BackgroundServer:
    """Run an ASGI app on an ephemeral local port in a daemon thread."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0) -> None:
        self._server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning"))
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.host = host

    @property
    def port(self) -> int:
        return self._server.servers[0].sockets[0].getsockname()[1]

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self, timeout: float = 10.0) -> "BackgroundServer":
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise RuntimeError("server failed to start")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)

    def __enter__(self) -> "BackgroundServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8000) -> None:
    uvicorn.run(app, host=host, port=port, log_level="info")
