"""Multi-run MCQ benchmark evaluation and report rendering."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .dataset import SOURCE_DISPLAY, McqItem, Source, load_items, shuffle_options, validate_manifest
from .ontology import Category
from .prompts import render_messages
from .reward import AnswerMode, Extraction, answer_matches, extract_answer, parse_response
from .rng import SeededRng
from .rollout.client import ChatClient, GenerationRequest, RolloutError

log = logging.getLogger(__name__)

JSON_SCHEMA_VERSION = 1


class EvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalRunSpec:
    benchmark: str
    n_runs: int = 5
    temperature: float = 0.6
    top_p: float = 0.95
    max_tokens: int = 6144
    answer_mode: str = AnswerMode.LETTER_OR_TEXT.value
    extraction: str = Extraction.LENIENT.value
    shuffle: bool = False
    base_seed: int = 0
    label: str = "model"

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")


@dataclass
class RunResult:
    per_source: dict[str, float]
    per_category: dict[str, float]
    correct: dict[str, int]
    errored: int = 0
    errored_ids: list[str] = field(default_factory=list)


@dataclass
class EvalReport:
    label: str
    per_run: list[RunResult]
    per_source_mean: dict[str, float]
    per_category_mean: dict[str, float]
    components: dict[str, float]
    overall: Optional[float]
    counts: dict[str, int]
    errored: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": JSON_SCHEMA_VERSION,
            "label": self.label,
            "per_run": [asdict(r) for r in self.per_run],
            "per_source_mean": self.per_source_mean,
            "per_category_mean": self.per_category_mean,
            "components": self.components,
            "overall": self.overall,
            "counts": self.counts,
            "errored": self.errored,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            label=d.get("label", "model"),
            per_run=[RunResult(**r) for r in d.get("per_run", [])],
            per_source_mean=d.get("per_source_mean", {}),
            per_category_mean=d.get("per_category_mean", {}),
            components=d.get("components", {}),
            overall=d.get("overall"),
            counts=d.get("counts", {}),
            errored=d.get("errored", 0),
            config=d.get("config", {}),
        )

    @classmethod
    def from_means(cls, components: dict[str, float], label: str = "model") -> "EvalReport":
        """A report carrying only column means (e.g. published table rows)."""
        return cls(
            label=label,
            per_run=[],
            per_source_mean={},
            per_category_mean={},
            components=dict(components),
            overall=unweighted_mean(components.values()),
            counts={},
        )


def unweighted_mean(values) -> Optional[float]:
    vals = list(values)
    return math.fsum(vals) / len(vals) if vals else None


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def _components(per_source: dict[str, float], per_category: dict[str, float]) -> dict[str, float]:
    """Columns that enter the overall average.

    Common-sense items contribute their category means (one column each when
    the benchmark is common-sense only, or their average as a single column
    alongside other sources); every other source is one column.
    """
    has_cats = bool(per_category)
    sources = list(per_source)
    if sources == [Source.COMMON_SENSE.value] and has_cats:
        return dict(per_category)
    out = {}
    for s in sources:
        if s == Source.COMMON_SENSE.value and has_cats:
            out[s] = unweighted_mean(per_category.values())
        else:
            out[s] = per_source[s]
    return out


def _score_run(items: Sequence[McqItem], results, spec: EvalRunSpec) -> RunResult:
    correct: dict[str, int] = {}
    totals: dict[str, int] = {}
    cat_correct: dict[str, int] = {}
    cat_totals: dict[str, int] = {}
    errored_ids = []
    for item, res in zip(items, results):
        src = item.source.value
        totals[src] = totals.get(src, 0) + 1
        if isinstance(res, RolloutError):
            errored_ids.append(item.id)
            ok = False
        else:
            parsed = parse_response(res[0].text)
            ok = answer_matches(extract_answer(parsed, item, spec.extraction), item, spec.answer_mode)
        correct[src] = correct.get(src, 0) + int(ok)
        if item.source is Source.COMMON_SENSE and item.common_sense_tags:
            for cat in sorted({t.category.value for t in item.common_sense_tags}):
                cat_totals[cat] = cat_totals.get(cat, 0) + 1
                cat_correct[cat] = cat_correct.get(cat, 0) + int(ok)
    per_source = {s: correct.get(s, 0) / n for s, n in totals.items()}
    per_category = {c: cat_correct.get(c, 0) / n for c, n in cat_totals.items()}
    return RunResult(per_source, per_category, correct, len(errored_ids), errored_ids)


def _ordered(keys, order) -> list[str]:
    rank = {k: i for i, k in enumerate(order)}
    return sorted(keys, key=lambda k: (rank.get(k, len(rank)), k))


_SOURCE_ORDER = [s.value for s in Source]
_CATEGORY_ORDER = [c.value for c in Category]


def evaluate_items(items: Sequence[McqItem], spec: EvalRunSpec, client: ChatClient) -> EvalReport:
    if not items:
        raise EvalError("benchmark has no items")
    runs = []
    for r in range(spec.n_runs):
        seed = spec.base_seed + r
        posed = list(items)
        if spec.shuffle:
            rng = SeededRng(seed)
            posed = [shuffle_options(it, rng) for it in posed]
        requests = [
            GenerationRequest(
                request_id=f"{it.id}#run{r}",
                messages=tuple(render_messages(it)),
                temperature=spec.temperature,
                top_p=spec.top_p,
                max_tokens=spec.max_tokens,
                n_samples=1,
                seed=seed,
            )
            for it in posed
        ]
        results = client.generate_many(requests)
        run = _score_run(posed, [results[q.request_id] for q in requests], spec)
        if run.errored:
            log.warning("run %d: %d items errored and score 0", r, run.errored)
        runs.append(run)

    sources = _ordered(runs[0].per_source, _SOURCE_ORDER)
    cats = _ordered(runs[0].per_category, _CATEGORY_ORDER)
    per_source_mean = {s: _mean([run.per_source[s] for run in runs]) for s in sources}
    per_category_mean = {c: _mean([run.per_category[c] for run in runs]) for c in cats}
    components = _components(per_source_mean, per_category_mean)
    counts = {}
    for it in items:
        counts[it.source.value] = counts.get(it.source.value, 0) + 1
    config = asdict(spec)
    return EvalReport(
        label=spec.label,
        per_run=runs,
        per_source_mean=per_source_mean,
        per_category_mean=per_category_mean,
        components=components,
        overall=unweighted_mean(components.values()),
        counts={s: counts[s] for s in _ordered(counts, _SOURCE_ORDER)},
        errored=sum(run.errored for run in runs),
        config=config,
    )


def run_eval(spec: EvalRunSpec, client: ChatClient) -> EvalReport:
    """Validate the manifest, then pose every item once per run and average."""
    report = validate_manifest(spec.benchmark)
    if report.violations:
        first = report.violations[0]
        raise EvalError(f"manifest item {first.item_id} (line {first.line}): {first.problem}")
    if report.mismatches:
        log.warning("manifest counts differ from header: %s", report.mismatches)
    return evaluate_items(load_items(spec.benchmark), spec, client)


# -- rendering -----------------------------------------------------------------

def _column_name(key: str) -> str:
    if key in Source._value2member_map_:
        return SOURCE_DISPLAY[Source(key)]
    if key in Category._value2member_map_:
        return Category(key).display
    return key


def _pct(x: Optional[float]) -> str:
    return "n/a" if x is None else f"{100.0 * x:.1f}"


def render_report(report: EvalReport, fmt: str = "markdown") -> str:
    cols = list(report.components)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + [_column_name(c) for c in cols] + ["Avg."])
        w.writerow([report.label] + [_pct(report.components[c]) for c in cols] + [_pct(report.overall)])
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    head = ["Model"] + [_column_name(c) for c in cols] + ["Avg."]
    row = [report.label] + [_pct(report.components[c]) for c in cols] + [_pct(report.overall)]
    lines = [
        "| " + " | ".join(head) + " |",
        "|" + "|".join(["---"] + [":---:"] * (len(head) - 1)) + "|",
        "| " + " | ".join(row) + " |",
    ]
    if report.per_run:
        lines += ["", f"runs: {len(report.per_run)}; items: {sum(report.counts.values())}; errored: {report.errored}"]
    if report.counts:
        lines.append("counts: " + ", ".join(f"{_column_name(k)}={v}" for k, v in report.counts.items()))
    return "\n".join(lines) + "\n"


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
