"""MCQ items, JSONL persistence and dataset-level operations."""
from __future__ import annotations

import json
import re
import string
import sys
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, NamedTuple, Optional, Sequence

from .ontology import CommonSenseTag, EmbodiedTag, OntologyError
from .rng import SeededRng

LABELS = string.ascii_uppercase[:6]
MIN_OPTIONS = 2
MAX_OPTIONS = 6


class DatasetError(ValueError):
    pass


class EmptyInput(DatasetError):
    pass


class MixedOptionCounts(DatasetError):
    pass


class AllSourcesEmpty(DatasetError):
    pass


class InvalidItem(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class Source(str, Enum):
    COMMON_SENSE = "common_sense"
    BRIDGE_V2 = "bridge_v2"
    ROBOVQA = "robovqa"
    ROBOFAIL = "robofail"
    AGIBOT = "agibot"
    HOLOASSIST = "holoassist"
    AV = "av"
    PUZZLE = "puzzle"
    AOT = "aot"
    OBJECT_PERMANENCE = "object_permanence"


SOURCE_DISPLAY = {
    Source.COMMON_SENSE: "Common Sense",
    Source.BRIDGE_V2: "BridgeData V2",
    Source.ROBOVQA: "RoboVQA",
    Source.ROBOFAIL: "RoboFail",
    Source.AGIBOT: "Agibot",
    Source.HOLOASSIST: "HoloAssist",
    Source.AV: "AV",
    Source.PUZZLE: "Spatial Puzzle",
    Source.AOT: "Arrow of Time",
    Source.OBJECT_PERMANENCE: "Object Permanence",
}


class Granularity(str, Enum):
    ACTION = "action"
    SUBTASK = "subtask"
    GOAL = "goal"


class Option(NamedTuple):
    label: str
    text: str


_WS = re.compile(r"\s+")
_TERMINAL_PUNCT = ".,;:!?"


def normalize_text(text: str) -> str:
    """Trim, lowercase, collapse whitespace, strip terminal punctuation."""
    text = _WS.sub(" ", text.strip().lower())
    return text.rstrip(_TERMINAL_PUNCT).rstrip()


@dataclass(frozen=True)
class McqItem:
    id: str
    source: Source
    media_ref: str
    question: str
    options: tuple[Option, ...]
    correct_label: str
    common_sense_tags: Optional[tuple[CommonSenseTag, ...]] = None
    embodied_tag: Optional[EmbodiedTag] = None
    granularity: Optional[Granularity] = None

    @property
    def labels(self) -> list[str]:
        return [o.label for o in self.options]

    @property
    def correct_option(self) -> Option:
        for opt in self.options:
            if opt.label == self.correct_label:
                return opt
        raise InvalidItem(f"{self.id}: correct label {self.correct_label!r} not among options")

    @property
    def correct_text(self) -> str:
        return self.correct_option.text

    def problems(self) -> list[str]:
        """Every invariant violation, as human-readable strings (empty when valid)."""
        out = []
        if not self.id:
            out.append("empty id")
        n = len(self.options)
        if not MIN_OPTIONS <= n <= MAX_OPTIONS:
            out.append(f"{n} options (need {MIN_OPTIONS}..{MAX_OPTIONS})")
        labels = self.labels
        dup = sorted(lbl for lbl, c in Counter(labels).items() if c > 1)
        if dup:
            out.append(f"duplicate labels {dup}")
        if labels != list(LABELS[: len(labels)]):
            out.append(f"labels {labels} are not consecutive from A")
        hits = labels.count(self.correct_label)
        if hits != 1:
            out.append(f"correct label {self.correct_label!r} matches {hits} options")
        texts = [normalize_text(o.text) for o in self.options]
        if len(set(texts)) != len(texts):
            out.append("option texts not distinct after normalization")
        return out

    def check(self) -> "McqItem":
        bad = self.problems()
        if bad:
            raise InvalidItem(f"{self.id}: " + "; ".join(bad))
        return self

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source": self.source.value,
            "media_ref": self.media_ref,
            "question": self.question,
            "options": [{"label": o.label, "text": o.text} for o in self.options],
            "correct_label": self.correct_label,
            "common_sense_tags": (
                None if self.common_sense_tags is None
                else [t.to_dict() for t in self.common_sense_tags]
            ),
            "embodied_tag": None if self.embodied_tag is None else self.embodied_tag.to_dict(),
            "granularity": None if self.granularity is None else self.granularity.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "McqItem":
        """Build an item from its JSON form. Structural errors raise; invariants are not checked."""
        missing = [k for k in ("id", "source", "question", "options", "correct_label") if k not in d]
        if missing:
            raise DatasetError(f"missing fields {missing}")
        try:
            source = Source(d["source"])
        except ValueError:
            raise DatasetError(f"unknown source {d['source']!r}") from None
        try:
            options = tuple(Option(str(o["label"]), str(o["text"])) for o in d["options"])
        except (TypeError, KeyError):
            raise DatasetError("options must be a list of {label, text} objects") from None
        try:
            tags = d.get("common_sense_tags")
            tags = None if tags is None else tuple(CommonSenseTag.from_dict(t) for t in tags)
            emb = d.get("embodied_tag")
            emb = None if emb is None else EmbodiedTag.from_dict(emb)
        except (OntologyError, KeyError, TypeError) as exc:
            raise DatasetError(f"bad tag: {exc}") from None
        gran = d.get("granularity")
        try:
            gran = None if gran is None else Granularity(gran)
        except ValueError:
            raise DatasetError(f"unknown granularity {gran!r}") from None
        return cls(
            id=str(d["id"]),
            source=source,
            media_ref=str(d.get("media_ref", "")),
            question=str(d["question"]),
            options=options,
            correct_label=str(d["correct_label"]),
            common_sense_tags=tags,
            embodied_tag=emb,
            granularity=gran,
        )


def make_options(texts: Sequence[str]) -> tuple[Option, ...]:
    return tuple(Option(LABELS[i], t) for i, t in enumerate(texts))


# -- JSONL I/O ---------------------------------------------------------------

@contextmanager
def open_text(path: str | Path, mode: str = "r") -> Iterator[IO[str]]:
    """Open a UTF-8 text file; ``-`` means stdin/stdout."""
    if str(path) == "-":
        yield sys.stdin if "r" in mode else sys.stdout
        return
    with open(path, mode, encoding="utf-8") as fh:
        yield fh


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)``; blank lines are skipped."""
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            yield lineno, obj


def write_jsonl(path: str | Path, records: Iterable[dict], append: bool = False) -> int:
    n = 0
    with open_text(path, "a" if append else "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=False) + "\n")
            n += 1
    return n


def save_items(path: str | Path, items: Iterable[McqItem]) -> int:
    return write_jsonl(path, (it.to_dict() for it in items))


def load_items(path: str | Path) -> list[McqItem]:
    """Load an item file; a leading manifest header line is skipped."""
    items = []
    for lineno, obj in read_jsonl(path):
        if "expected_counts" in obj and "id" not in obj:
            continue
        try:
            items.append(McqItem.from_dict(obj))
        except DatasetError as exc:
            raise ParseError(lineno, str(exc)) from None
    return items


# -- option shuffling and balance ---------------------------------------------

def shuffle_options(item: McqItem, rng: SeededRng) -> McqItem:
    """Permute option texts uniformly; labels stay A.., the correct label follows its text."""
    perm = rng.permutation(len(item.options))
    correct_text = item.correct_text
    texts = [item.options[p].text for p in perm]
    options = make_options(texts)
    new_label = next(o.label for o in options if o.text == correct_text)
    return replace(item, options=options, correct_label=new_label)


@dataclass(frozen=True)
class BalanceReport:
    option_count: int
    counts: dict[str, int]
    total: int
    max_deviation: float

    def to_dict(self) -> dict:
        return {
            "option_count": self.option_count,
            "counts": dict(self.counts),
            "total": self.total,
            "max_deviation": self.max_deviation,
        }


def _balance(items: Sequence[McqItem], k: int) -> BalanceReport:
    counts = {LABELS[i]: 0 for i in range(k)}
    for it in items:
        counts[it.correct_label] += 1
    total = len(items)
    dev = max(abs(c / total - 1.0 / k) for c in counts.values())
    return BalanceReport(k, counts, total, dev)


def balance_reports(items: Sequence[McqItem]) -> dict[int, BalanceReport]:
    """Correct-position balance bucketed by option count."""
    if not items:
        raise EmptyInput("no items")
    buckets: dict[int, list[McqItem]] = {}
    for it in items:
        buckets.setdefault(len(it.options), []).append(it)
    return {k: _balance(v, k) for k, v in sorted(buckets.items())}


def balance_report(items: Sequence[McqItem]) -> BalanceReport:
    reports = balance_reports(items)
    if len(reports) != 1:
        raise MixedOptionCounts(f"items have option counts {sorted(reports)}; use balance_reports")
    return next(iter(reports.values()))


# -- rewriting ---------------------------------------------------------------

_REFERENCE = re.compile(r"\bthe\s+(?:provided\s+)?(?:caption|description)\b", re.IGNORECASE)
_RESIDUAL = re.compile(r"\b(?:caption|description)s?\b", re.IGNORECASE)


def rewrite_clean(text: str) -> tuple[str, bool]:
    """Replace caption/description references with "the video".

    Returns the rewritten text and whether a bare "caption"/"description"
    word survives (those need a human look).
    """

    def sub(m: re.Match) -> str:
        before = m.string[: m.start()].rstrip()
        sentence_start = not before or before[-1] in ".!?"
        return "The video" if sentence_start and m.group(0)[0].isupper() else "the video"

    out = _REFERENCE.sub(sub, text)
    return out, bool(_RESIDUAL.search(out))


# -- RL batch sampling ---------------------------------------------------------

def sample_rl_batch(
    sources: Mapping[Source | str, Sequence[McqItem]],
    batch_size: int,
    rng: SeededRng,
) -> list[McqItem]:
    """Draw with replacement: pick a non-empty source uniformly, then an item in it."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    keys = sorted((k for k, v in sources.items() if len(v) > 0), key=lambda k: str(getattr(k, "value", k)))
    if not keys:
        raise AllSourcesEmpty("every source is empty")
    batch = []
    for _ in range(batch_size):
        pool = sources[keys[rng.below(len(keys))]]
        batch.append(pool[rng.below(len(pool))])
    return batch


def group_by_source(items: Iterable[McqItem]) -> dict[Source, list[McqItem]]:
    out: dict[Source, list[McqItem]] = {}
    for it in items:
        out.setdefault(it.source, []).append(it)
    return out


# -- manifest validation -------------------------------------------------------

@dataclass
class ItemViolation:
    line: int
    item_id: str
    problem: str


@dataclass
class ManifestReport:
    expected_counts: dict[str, int]
    counts: dict[str, int]
    mismatches: dict[str, tuple[int, int]] = field(default_factory=dict)
    violations: list[ItemViolation] = field(default_factory=list)
    total: int = 0

    @property
    def valid(self) -> bool:
        return not self.mismatches and not self.violations

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "total": self.total,
            "expected_counts": self.expected_counts,
            "counts": self.counts,
            "mismatches": {k: {"expected": e, "actual": a} for k, (e, a) in self.mismatches.items()},
            "violations": [vars(v) for v in self.violations],
        }


def validate_manifest(path: str | Path) -> ManifestReport:
    """Check a benchmark manifest: header counts vs body, plus every item's invariants."""
    rows = iter(read_jsonl(path))
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise ParseError(1, "empty manifest") from None
    expected = header.get("expected_counts")
    if not isinstance(expected, dict):
        raise ParseError(lineno, "first line must be a header with 'expected_counts'")
    for name, n in expected.items():
        if name not in Source._value2member_map_:
            raise ParseError(lineno, f"header names unknown source {name!r}")
        if not isinstance(n, int) or n < 0:
            raise ParseError(lineno, f"expected count for {name!r} must be a non-negative integer")

    counts: Counter[str] = Counter()
    violations = []
    seen: dict[str, int] = {}
    for lineno, obj in rows:
        try:
            item = McqItem.from_dict(obj)
        except DatasetError as exc:
            raise ParseError(lineno, str(exc)) from None
        counts[item.source.value] += 1
        if item.id in seen:
            violations.append(ItemViolation(lineno, item.id, f"duplicate id (first at line {seen[item.id]})"))
        else:
            seen[item.id] = lineno
        for problem in item.problems():
            violations.append(ItemViolation(lineno, item.id, problem))

    mismatches = {}
    for name in sorted(set(expected) | set(counts)):
        e, a = expected.get(name, 0), counts.get(name, 0)
        if e != a:
            mismatches[name] = (e, a)
    return ManifestReport(
        expected_counts=dict(expected),
        counts={k: counts[k] for k in sorted(counts)},
        mismatches=mismatches,
        violations=violations,
        total=sum(counts.values()),
    )


def write_manifest(path: str | Path, items: Sequence[McqItem], expected_counts: Mapping[str, int] | None = None) -> None:
    if expected_counts is None:
        expected_counts = dict(Counter(it.source.value for it in items))
    with open_text(path, "w") as fh:
        fh.write(json.dumps({"expected_counts": dict(expected_counts)}) + "\n")
        for it in items:
            fh.write(json.dumps(it.to_dict(), ensure_ascii=False) + "\n")
