"""Simulated GRPO post-training iterations.

Every stage of an RL iteration runs for real except the policy update,
which is written out as a record instead of being applied.
"""
from __future__ import annotations

import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from ..dataset import McqItem, Source, sample_rl_batch, shuffle_options
from ..prompts import render_messages
from ..reward import (
    DEFAULT_WEIGHTS,
    RewardError,
    RewardedGroup,
    grpo_advantages,
    kl_penalty,
    score_response,
)
from ..rng import SeededRng, derive_seed
from ..rollout.client import ChatClient, Completion, GenerationRequest, RolloutError
from .dispatch import progressive_dispatch

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

Clock = Callable[[], float]


class LoopError(RuntimeError):
    pass


class CheckpointCorrupt(LoopError):
    def __init__(self, path: str | Path, offset: int, reason: str) -> None:
        super().__init__(f"checkpoint {path} is corrupt at byte offset {offset}: {reason}")
        self.offset = offset


@dataclass(frozen=True)
class LoopConfig:
    batch_questions: int = 128
    group_size: int = 9
    max_tokens: int = 6144
    learning_rate: float = 4e-6
    kl_coefficient: float = 0.005
    iterations: int = 500
    accuracy_weight: float = DEFAULT_WEIGHTS[0]
    format_weight: float = DEFAULT_WEIGHTS[1]
    format_mode: str = "strict"
    answer_mode: str = "letter_or_text"
    shuffle: bool = True
    temperature: float = 1.0
    top_p: float = 1.0
    seed: int = 0
    request_logprobs: bool = False
    min_fill: int = 1
    seconds_per_token: float = 0.02

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.batch_questions < 1:
            raise ValueError("batch_questions must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.accuracy_weight < 0 or self.format_weight < 0:
            raise ValueError("reward weights must be non-negative")

    @property
    def weights(self) -> tuple[float, float]:
        return (self.accuracy_weight, self.format_weight)

    @classmethod
    def from_mapping(cls, values: Mapping) -> "LoopConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown loop config keys: {unknown}")
        return cls(**dict(values))

    @classmethod
    def from_toml(cls, path: str | Path, overrides: Optional[Mapping] = None) -> "LoopConfig":
        """Top-level keys mirror the field names; tables hold other settings."""
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        data = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(data)


class TickClock:
    """Deterministic stand-in for a wall clock: each reading advances by ``step``."""

    def __init__(self, step: float = 1e-3) -> None:
        self.step = step
        self._ticks = 0

    def __call__(self) -> float:
        self._ticks += 1
        return self._ticks * self.step


class Stage(str, Enum):
    DATALOADER = "dataloader"
    ROLLOUT = "rollout"
    REWARD = "reward"
    REFERENCE = "reference"
    POLICY_UPDATE = "policy_update"
    WEIGHT_SYNC = "weight_sync"


@dataclass(frozen=True)
class StageEvent:
    stage: Stage
    start: float
    end: float
    payload: int
    skipped: bool = False

    def to_dict(self) -> dict:
        return {"stage": self.stage.value, "start": self.start, "end": self.end,
                "payload": self.payload, "skipped": self.skipped}


@dataclass
class IterationMetrics:
    iteration: int
    mean_total_reward: float
    accuracy_rate: float
    format_rate: float
    mean_abs_advantage: float
    degenerate_group_fraction: float
    per_source_counts: dict[str, int]
    completions_requested: int
    completions_received: int
    errored_groups: int
    wall_seconds: float
    simulated_idle_seconds: float
    simulated_barrier_idle_seconds: float
    learning_rate: float
    kl_coefficient: float
    mean_kl: Optional[float] = None
    kl_samples: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.mean_kl is None:
            # absent, never zero-filled
            del d["mean_kl"]
        return d


@dataclass
class IterationResult:
    metrics: IterationMetrics
    events: list[StageEvent]
    groups: list[RewardedGroup] = field(default_factory=list)


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def _reference_pass(
    completions: Sequence[Completion], ref_client: ChatClient
) -> dict[tuple[str, int], float]:
    """Per-sample KL for every completion whose policy and reference log-probs line up."""

    def one(c: Completion):
        try:
            ref = ref_client.reference_logprobs(c.text)
            if ref is None or c.token_logprobs is None:
                return None
            return kl_penalty(c.token_logprobs, ref)
        except (RolloutError, RewardError) as exc:
            log.debug("no KL for %s/%d: %s", c.request_id, c.sample_index, exc)
            return None

    with ThreadPoolExecutor(max_workers=ref_client.config.max_in_flight) as pool:
        values = list(pool.map(one, completions))
    return {(c.request_id, c.sample_index): v for c, v in zip(completions, values) if v is not None}


def run_iteration(
    config: LoopConfig,
    sources: Mapping[Source | str, Sequence[McqItem]],
    client: ChatClient,
    rng: SeededRng,
    iteration: int = 1,
    ref_client: Optional[ChatClient] = None,
    policy_sink: Optional[Callable[[dict], None]] = None,
    clock: Clock = time.perf_counter,
) -> IterationResult:
    events: list[StageEvent] = []
    t_begin = clock()

    # dataloader
    t0 = clock()
    batch = sample_rl_batch(sources, config.batch_questions, rng)
    if config.shuffle:
        batch = [shuffle_options(it, rng) for it in batch]
    events.append(StageEvent(Stage.DATALOADER, t0, clock(), len(batch)))

    # rollout
    t0 = clock()
    requests = [
        GenerationRequest(
            request_id=f"it{iteration}-q{k}-{item.id}",
            messages=tuple(render_messages(item)),
            temperature=config.temperature,
            top_p=config.top_p,
            max_tokens=config.max_tokens,
            n_samples=config.group_size,
            seed=derive_seed("rollout", config.seed, iteration, k) & 0x7FFFFFFF,
            logprobs=config.request_logprobs,
        )
        for k, item in enumerate(batch)
    ]
    results = client.generate_many(requests)
    received = [c for r in results.values() if not isinstance(r, RolloutError) for c in r]
    events.append(StageEvent(Stage.ROLLOUT, t0, clock(), len(received)))

    # reward + advantages
    t0 = clock()
    groups: list[RewardedGroup] = []
    totals, accs, fmts, abs_adv = [], [], [], []
    errored = 0
    for item, req in zip(batch, requests):
        res = results[req.request_id]
        if isinstance(res, RolloutError):
            errored += 1
            zeros = (0.0,) * config.group_size
            groups.append(RewardedGroup(zeros, zeros, True, item.id, errored=True,
                                        extra={"error": str(res)[:200]}))
            continue
        breakdowns = [
            score_response(c.text, item, config.weights, config.answer_mode, config.format_mode) for c in res
        ]
        group = grpo_advantages([b.total for b in breakdowns], question_id=item.id)
        groups.append(group)
        totals.extend(b.total for b in breakdowns)
        accs.extend(b.accuracy for b in breakdowns)
        fmts.extend(b.format for b in breakdowns)
        abs_adv.extend(abs(a) for a in group.advantages)
    events.append(StageEvent(Stage.REWARD, t0, clock(), len(totals)))

    # reference model KL
    t0 = clock()
    have_lp = bool(received) and all(c.token_logprobs is not None for c in received)
    kl_by_sample: dict[tuple[str, int], float] = {}
    if ref_client is not None and have_lp:
        kl_by_sample = _reference_pass(received, ref_client)
    events.append(StageEvent(Stage.REFERENCE, t0, clock(), len(kl_by_sample), skipped=not kl_by_sample))
    mean_kl = _mean(list(kl_by_sample.values())) if kl_by_sample else None

    # policy update (recorded only)
    t0 = clock()
    n_records = 0
    for req, group in zip(requests, groups):
        kls = [v for (rid, _), v in kl_by_sample.items() if rid == req.request_id]
        record = {
            "iteration": iteration,
            "question_id": group.question_id,
            "advantages": list(group.advantages),
            "mean_kl": _mean(kls) if kls else None,
            "lr": config.learning_rate,
            "kl_coefficient": config.kl_coefficient,
        }
        if policy_sink is not None:
            policy_sink(record)
        n_records += 1
    events.append(StageEvent(Stage.POLICY_UPDATE, t0, clock(), n_records))

    t0 = clock()
    events.append(StageEvent(Stage.WEIGHT_SYNC, t0, clock(), n_records))

    # simulated rollout-engine idle time for this iteration's completion lengths
    idle = barrier_idle = 0.0
    if received:
        lat = [(len(c.text.split()) + 1) * config.seconds_per_token for c in received]
        cap = min(client.config.max_in_flight, len(lat))
        sim = progressive_dispatch(len(lat), min(config.min_fill, cap), cap, lat, rng=SeededRng(0))
        idle, barrier_idle = sim.progressive.idle_seconds, sim.barrier.idle_seconds

    counts = {str(getattr(k, "value", k)): 0 for k, v in sources.items() if len(v) > 0}
    for it in batch:
        counts[it.source.value] = counts.get(it.source.value, 0) + 1

    metrics = IterationMetrics(
        iteration=iteration,
        mean_total_reward=_mean(totals),
        accuracy_rate=_mean(accs),
        format_rate=_mean(fmts),
        mean_abs_advantage=_mean(abs_adv),
        degenerate_group_fraction=sum(g.degenerate for g in groups) / len(groups),
        per_source_counts=dict(sorted(counts.items())),
        completions_requested=sum(r.n_samples for r in requests),
        completions_received=len(received),
        errored_groups=errored,
        wall_seconds=clock() - t_begin,
        simulated_idle_seconds=idle,
        simulated_barrier_idle_seconds=barrier_idle,
        learning_rate=config.learning_rate,
        kl_coefficient=config.kl_coefficient,
        mean_kl=mean_kl,
        kl_samples=len(kl_by_sample),
    )
    return IterationResult(metrics, events, groups)


# -- resumable driver ------------------------------------------------------------

def read_checkpoint(path: str | Path) -> tuple[int, int]:
    """``(next_iteration, rng_state)``; refuses anything malformed."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CheckpointCorrupt(path, len(raw[: exc.pos].encode("utf-8")), exc.msg) from None
    if not isinstance(data, dict):
        raise CheckpointCorrupt(path, 0, "not a JSON object")
    for key in ("next_iteration", "rng_state"):
        if not isinstance(data.get(key), int) or isinstance(data.get(key), bool) or data[key] < 0:
            offset = max(raw.find(f'"{key}"'), 0)
            raise CheckpointCorrupt(path, len(raw[:offset].encode("utf-8")), f"missing or invalid {key!r}")
    return data["next_iteration"], data["rng_state"]


def write_checkpoint(path: str | Path, next_iteration: int, rng_state: int) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps({"next_iteration": next_iteration, "rng_state": rng_state}), encoding="utf-8")
    os.replace(tmp, path)


def _truncate_jsonl(path: Path, keep: Callable[[dict], bool]) -> None:
    """Drop records written after the last checkpoint (e.g. by a killed run)."""
    if not path.exists():
        return
    kept = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            break  # torn final line
        if keep(rec):
            kept.append(line)
    path.write_text("".join(ln + "\n" for ln in kept), encoding="utf-8")


def run_loop(
    config: LoopConfig,
    sources: Mapping[Source | str, Sequence[McqItem]],
    client: ChatClient,
    out: str | Path,
    checkpoint: Optional[str | Path] = None,
    policy_log: Optional[str | Path] = None,
    ref_client: Optional[ChatClient] = None,
    clock: Clock = time.perf_counter,
    stop_after: Optional[int] = None,
) -> int:
    """Run (or resume) the loop, appending one metrics line per iteration.

    Returns the number of iterations executed by this call.
    """
    out = Path(out)
    ckpt = Path(checkpoint) if checkpoint else out.with_name("loop.ckpt")
    plog = Path(policy_log) if policy_log else None

    if ckpt.exists():
        start, state = read_checkpoint(ckpt)
        rng = SeededRng(state)
        log.info("resuming at iteration %d from %s", start, ckpt)
        _truncate_jsonl(out, lambda r: r.get("iteration", 0) < start)
        if plog:
            _truncate_jsonl(plog, lambda r: r.get("iteration", 0) < start)
    else:
        start, rng = 1, SeededRng(config.seed)
        out.write_text("", encoding="utf-8")
        if plog:
            plog.write_text("", encoding="utf-8")

    done = 0
    for it in range(start, config.iterations + 1):
        if stop_after is not None and done >= stop_after:
            break
        pending: list[dict] = []
        result = run_iteration(config, sources, client, rng, it, ref_client, pending.append, clock)
        if plog:
            with plog.open("a", encoding="utf-8") as fh:
                fh.writelines(json.dumps(r) + "\n" for r in pending)
        with out.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(result.metrics.to_dict()) + "\n")
        write_checkpoint(ckpt, it + 1, rng.state)
        log.info("iteration %d: reward %.4f acc %.4f", it, result.metrics.mean_total_reward,
                 result.metrics.accuracy_rate)
        done += 1
    return done
