"""Shared builders for tests."""
from __future__ import annotations

from physrl.dataset import McqItem, Source, make_options
from physrl.rollout import ChatClient, EndpointConfig, MockEndpoint


def item(texts=("yes", "no"), correct="A", id="q1", source=Source.COMMON_SENSE, question="Is it?") -> McqItem:
    return McqItem(id=id, source=source, media_ref=f"clip://{id}", question=question,
                   options=make_options(list(texts)), correct_label=correct)


def mock_client(mock: MockEndpoint, **cfg) -> ChatClient:
    cfg.setdefault("max_retries", 0)
    return ChatClient(EndpointConfig("http://mock.test", **cfg), transport=mock.transport(), sleep=lambda s: None)
