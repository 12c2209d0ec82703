"""GRPO loop simulation: per-iteration pipeline and rollout dispatch scheduling."""
from __future__ import annotations

from .dispatch import (
    DispatchResult,
    InvalidBounds,
    Schedule,
    lognormal_latency,
    pareto_latency,
    progressive_dispatch,
    unit_latency,
)
from .loop import (
    CheckpointCorrupt,
    IterationMetrics,
    IterationResult,
    LoopConfig,
    Stage,
    StageEvent,
    TickClock,
    read_checkpoint,
    run_iteration,
    run_loop,
)

__all__ = [
    "CheckpointCorrupt",
    "DispatchResult",
    "InvalidBounds",
    "IterationMetrics",
    "IterationResult",
    "LoopConfig",
    "Schedule",
    "Stage",
    "StageEvent",
    "TickClock",
    "lognormal_latency",
    "pareto_latency",
    "progressive_dispatch",
    "read_checkpoint",
    "run_iteration",
    "run_loop",
    "unit_latency",
]
