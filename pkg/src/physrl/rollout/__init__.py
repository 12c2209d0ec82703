"""Model-endpoint client and a deterministic mock endpoint."""
from .client import (
    AuthMissing,
    ChatClient,
    Completion,
    EndpointConfig,
    EndpointError,
    FinishReason,
    GenerationRequest,
    RolloutError,
    Timeout,
    TransportError,
    generate,
)
from .mock import MockEndpoint, UnknownFixtureKey, fixture_key
