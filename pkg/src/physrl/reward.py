"""Rule-based verifiable rewards, GRPO group advantages and a KL estimate."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .dataset import McqItem, normalize_text


class RewardError(ValueError):
    pass


class GroupTooSmall(RewardError):
    pass


class LengthMismatch(RewardError):
    pass


class EmptySequence(RewardError):
    pass


class AnswerMode(str, Enum):
    LETTER_OR_TEXT = "letter_or_text"
    EXACT_SET = "exact_set"


class FormatMode(str, Enum):
    STRICT = "strict"
    LENIENT = "lenient"


class Extraction(str, Enum):
    """How the answer is pulled out of a response before matching."""

    STRICT = "strict"  # tagged answer only
    LENIENT = "lenient"  # tagged answer, else the last standalone option letter


DEFAULT_WEIGHTS = (1.0, 0.1)

_TAGS = r"</?(?:think|answer)>"
_INNER = rf"((?:(?!{_TAGS}).)*?)"
_ANSWER = re.compile(rf"<answer>{_INNER}</answer>", re.DOTALL)
_THINK = re.compile(rf"<think>{_INNER}</think>", re.DOTALL)
_STRICT = re.compile(rf"\s*<think>{_INNER}</think>\s*<answer>{_INNER}</answer>\s*", re.DOTALL)
_FRAME = re.compile(r"\bframe\s*(\d+)\b", re.IGNORECASE)


@dataclass(frozen=True)
class ParsedResponse:
    raw: str
    think: Optional[str] = None
    answer: Optional[str] = None
    strict_format_ok: bool = False


def parse_response(text: str) -> ParsedResponse:
    """Split a response into think/answer segments (last pair of each wins)."""
    answers = _ANSWER.findall(text)
    thinks = _THINK.findall(text)
    return ParsedResponse(
        raw=text,
        think=thinks[-1] if thinks else None,
        answer=answers[-1] if answers else None,
        strict_format_ok=_STRICT.fullmatch(text) is not None,
    )


def format_reward(parsed: ParsedResponse, mode: FormatMode | str = FormatMode.STRICT) -> int:
    if FormatMode(mode) is FormatMode.STRICT:
        return int(parsed.strict_format_ok)
    return int(parsed.think is not None and parsed.answer is not None)


def extract_answer(parsed: ParsedResponse, item: McqItem, how: Extraction | str = Extraction.STRICT) -> Optional[str]:
    if parsed.answer is not None or Extraction(how) is Extraction.STRICT:
        return parsed.answer
    labels = "".join(item.labels)
    hits = re.findall(rf"(?<![A-Za-z])([{labels}])(?![A-Za-z])", parsed.raw) if labels else []
    return hits[-1] if hits else None


def frame_set(text: str) -> frozenset[int]:
    return frozenset(int(m) for m in _FRAME.findall(text))


def answer_matches(answer: Optional[str], item: McqItem, mode: AnswerMode | str = AnswerMode.LETTER_OR_TEXT) -> bool:
    if answer is None:
        return False
    if AnswerMode(mode) is AnswerMode.EXACT_SET:
        got = frame_set(answer)
        return bool(got) and got == frame_set(item.correct_text)
    norm = normalize_text(answer)
    label = item.correct_label.lower()
    text = normalize_text(item.correct_text)
    return norm in (label, f"{label}: {text}", text)


def accuracy_reward(
    parsed: ParsedResponse,
    item: McqItem,
    mode: AnswerMode | str = AnswerMode.LETTER_OR_TEXT,
    extraction: Extraction | str = Extraction.STRICT,
) -> int:
    return int(answer_matches(extract_answer(parsed, item, extraction), item, mode))


def total_reward(accuracy: int, fmt: int, weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    wa, wf = weights
    if wa < 0 or wf < 0:
        raise RewardError("reward weights must be non-negative")
    return wa * accuracy + wf * fmt


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy: int
    format: int
    total: float
    weights: tuple[float, float] = DEFAULT_WEIGHTS

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "format": self.format,
            "total": self.total,
            "weights": list(self.weights),
        }


def score_response(
    text: str,
    item: McqItem,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    mode: AnswerMode | str = AnswerMode.LETTER_OR_TEXT,
    fmt: FormatMode | str = FormatMode.STRICT,
) -> RewardBreakdown:
    parsed = parse_response(text)
    acc = accuracy_reward(parsed, item, mode)
    form = format_reward(parsed, fmt)
    w = (float(weights[0]), float(weights[1]))
    return RewardBreakdown(acc, form, total_reward(acc, form, w), w)


@dataclass(frozen=True)
class RewardedGroup:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    degenerate: bool
    question_id: str = ""
    mean: float = 0.0
    std: float = 0.0
    errored: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {
            "question_id": self.question_id,
            "rewards": list(self.rewards),
            "advantages": list(self.advantages),
            "degenerate": self.degenerate,
            "mean": self.mean,
            "std": self.std,
        }
        if self.errored:
            d["errored"] = True
        d.update(self.extra)
        return d


def grpo_advantages(rewards: Sequence[float], epsilon: float = 1e-12, question_id: str = "") -> RewardedGroup:
    """Standardize rewards within one cohort using the population std.

    A cohort whose std falls below ``epsilon`` gets all-zero advantages and
    is flagged degenerate.
    """
    g = len(rewards)
    if g < 2:
        raise GroupTooSmall(f"a group needs at least 2 rewards, got {g}")
    r = [float(x) for x in rewards]
    mean = math.fsum(r) / g
    centered = [x - mean for x in r]
    std = math.sqrt(math.fsum(c * c for c in centered) / g)
    if std < epsilon:
        return RewardedGroup(tuple(r), (0.0,) * g, True, question_id, mean, std)
    return RewardedGroup(tuple(r), tuple(c / std for c in centered), False, question_id, mean, std)


def kl_penalty(policy_logprobs: Sequence[float], ref_logprobs: Sequence[float]) -> float:
    """Mean per-token ``exp(r) - r - 1`` with ``r = ref - policy``; never negative."""
    if len(policy_logprobs) != len(ref_logprobs):
        raise LengthMismatch(f"{len(policy_logprobs)} policy vs {len(ref_logprobs)} reference tokens")
    if not policy_logprobs:
        raise EmptySequence("no tokens")
    terms = []
    for p, q in zip(policy_logprobs, ref_logprobs):
        d = q - p
        terms.append(max(0.0, math.expm1(d) - d))
    return math.fsum(terms) / len(terms)


class UnknownQuestion(RewardError):
    pass


class IncompleteGroup(RewardError):
    pass


def score_groups(
    records: Iterable[Mapping],
    items: Mapping[str, McqItem],
    group_size: int,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    mode: AnswerMode | str = AnswerMode.LETTER_OR_TEXT,
    fmt: FormatMode | str = FormatMode.STRICT,
) -> Iterator[dict]:
    """Score ``{question_id, response_text}`` records cohort by cohort.

    Responses are grouped per question in arrival order and cut into
    consecutive cohorts of ``group_size``. For each cohort this yields one
    ``kind="response"`` record per response, then one ``kind="group"`` record.
    """
    if group_size < 2:
        raise GroupTooSmall(f"group_size must be >= 2, got {group_size}")
    pending: dict[str, list[str]] = {}
    for rec in records:
        qid = str(rec["question_id"])
        if qid not in items:
            raise UnknownQuestion(f"question {qid!r} is not in the dataset")
        pending.setdefault(qid, []).append(str(rec.get("response_text", rec.get("text", ""))))
    for qid, texts in pending.items():
        if len(texts) % group_size:
            raise IncompleteGroup(f"question {qid!r} has {len(texts)} responses, not a multiple of {group_size}")
        item = items[qid]
        for g in range(len(texts) // group_size):
            chunk = texts[g * group_size : (g + 1) * group_size]
            breakdowns = [score_response(t, item, weights, mode, fmt) for t in chunk]
            for i, b in enumerate(breakdowns):
                yield {"kind": "response", "question_id": qid, "group": g, "sample_index": i, **b.to_dict()}
            group = grpo_advantages([b.total for b in breakdowns], question_id=qid)
            yield {"kind": "group", "group": g, **group.to_dict()}
