"""Simulated-clock comparison of progressive vs. full-barrier rollout dispatch."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

from ..rng import SeededRng

LatencyModel = Union[Callable[[SeededRng], float], Sequence[float]]


class InvalidBounds(ValueError):
    pass


def unit_latency(rng: SeededRng) -> float:
    return 1.0


def pareto_latency(alpha: float = 1.5, scale: float = 1.0) -> Callable[[SeededRng], float]:
    """Heavy-tailed latencies: ``scale / U**(1/alpha)``."""

    def draw(rng: SeededRng) -> float:
        u = 1.0 - rng.random()  # (0, 1]
        return scale / u ** (1.0 / alpha)

    return draw


def lognormal_latency(mu: float = 0.0, sigma: float = 1.0) -> Callable[[SeededRng], float]:
    def draw(rng: SeededRng) -> float:
        u1 = 1.0 - rng.random()
        u2 = rng.random()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return math.exp(mu + sigma * z)

    return draw


@dataclass(frozen=True)
class Schedule:
    starts: tuple[float, ...]
    ends: tuple[float, ...]
    capacity: int

    @property
    def makespan(self) -> float:
        return max(self.ends, default=0.0)

    @property
    def busy_seconds(self) -> float:
        return math.fsum(e - s for s, e in zip(self.starts, self.ends))

    @property
    def idle_seconds(self) -> float:
        """Slot-seconds with no job running, up to the makespan."""
        return max(0.0, self.capacity * self.makespan - self.busy_seconds)

    @property
    def utilization(self) -> float:
        total = self.capacity * self.makespan
        return self.busy_seconds / total if total > 0 else 1.0

    def summary(self) -> dict:
        return {
            "makespan": self.makespan,
            "idle_seconds": self.idle_seconds,
            "utilization": self.utilization,
        }


@dataclass(frozen=True)
class DispatchResult:
    progressive: Schedule
    barrier: Schedule
    latencies: tuple[float, ...]

    def summary(self) -> dict:
        return {"progressive": self.progressive.summary(), "barrier": self.barrier.summary()}


def _simulate(lat: Sequence[float], capacity: int, min_fill: int, barrier: bool) -> Schedule:
    n = len(lat)
    starts = [0.0] * n
    ends = [0.0] * n
    running: list[float] = []
    t = 0.0
    nxt = 0
    while nxt < n or running:
        free = capacity - len(running)
        if barrier:
            ready = not running
        else:
            ready = free >= min(min_fill, n - nxt)
        if nxt < n and ready:
            k = min(free, n - nxt)
            for j in range(nxt, nxt + k):
                starts[j] = t
                ends[j] = t + lat[j]
                heapq.heappush(running, ends[j])
            nxt += k
            continue
        t = heapq.heappop(running)
        while running and running[0] <= t:
            heapq.heappop(running)
    return Schedule(tuple(starts), tuple(ends), capacity)


def draw_latencies(jobs: int, latency_model: LatencyModel, rng: SeededRng) -> list[float]:
    if callable(latency_model):
        return [float(latency_model(rng)) for _ in range(jobs)]
    lat = [float(x) for x in latency_model]
    if len(lat) != jobs:
        raise ValueError(f"{len(lat)} latencies for {jobs} jobs")
    return lat


def progressive_dispatch(
    jobs: int,
    min_fill: int,
    max_in_flight: int,
    latency_model: LatencyModel,
    rng: SeededRng,
) -> DispatchResult:
    """Dispatch jobs whenever at least ``min_fill`` slots are free (or fewer jobs remain).

    The same latencies are replayed through a full-barrier scheduler that
    only refills once every slot is empty.
    """
    if not 1 <= min_fill <= max_in_flight <= jobs:
        raise InvalidBounds(f"need 1 <= min_fill ({min_fill}) <= max_in_flight ({max_in_flight}) <= jobs ({jobs})")
    lat = draw_latencies(jobs, latency_model, rng)
    if any(x < 0 for x in lat):
        raise ValueError("latencies must be non-negative")
    return DispatchResult(
        progressive=_simulate(lat, max_in_flight, min_fill, barrier=False),
        barrier=_simulate(lat, max_in_flight, max_in_flight, barrier=True),
        latencies=tuple(lat),
    )
