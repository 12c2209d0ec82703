from __future__ import annotations

import json

import pytest

from _util import item, mock_client
from physrl.benchmark import synthetic_benchmark
from physrl.dataset import Source, write_manifest
from physrl.evalharness import (
    EvalError,
    EvalReport,
    EvalRunSpec,
    evaluate_items,
    load_report,
    render_report,
    run_eval,
    unweighted_mean,
)
from physrl.rollout import MockEndpoint

CATEGORY_MEANS_56B = {"space": 0.613, "time": 0.655, "fundamental_physics": 0.539}
COMPONENT_MEANS_8B = {"bridge_v2": 0.500, "robovqa": 0.845, "robofail": 0.432,
             "agibot": 0.576, "holoassist": 0.625, "av": 0.620}


def manifest(tmp_path, counts, seed=0):
    items = synthetic_benchmark(seed, counts)
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, items, counts)
    return path, items


def test_spec_defaults():
    spec = EvalRunSpec("m.jsonl")
    assert (spec.n_runs, spec.temperature, spec.top_p) == (5, 0.6, 0.95)
    with pytest.raises(ValueError):
        EvalRunSpec("m.jsonl", n_runs=0)


def test_category_row_renders():
    report = EvalReport.from_means(CATEGORY_MEANS_56B, "56B")
    assert report.overall == pytest.approx(0.602333, abs=1e-6)
    row = render_report(report).splitlines()[2]
    assert row == "| 56B | 61.3 | 65.5 | 53.9 | 60.2 |"


def test_component_average():
    report = EvalReport.from_means(COMPONENT_MEANS_8B, "8B")
    assert f"{100 * report.overall:.1f}" == "60.0"
    assert render_report(report).splitlines()[2].endswith("| 60.0 |")


def test_question_weighted_would_differ():
    # per-category sizes 80/298/226: a question-weighted mean lands elsewhere
    sizes = {"space": 80, "time": 298, "fundamental_physics": 226}
    weighted = sum(CATEGORY_MEANS_56B[k] * n for k, n in sizes.items()) / sum(sizes.values())
    assert round(100 * weighted, 1) != round(100 * unweighted_mean(CATEGORY_MEANS_56B.values()), 1)


def test_empty_report_renders_na():
    report = EvalReport("m", [], {}, {}, {}, None, {})
    text = render_report(report)
    assert "n/a" in text
    assert render_report(report, "csv").strip().splitlines()[1] == "m,n/a"
    assert json.loads(render_report(report, "json"))["overall"] is None


def test_unknown_format():
    with pytest.raises(ValueError):
        render_report(EvalReport.from_means({"x": 0.5}), "html")


def test_perfect_mock(tmp_path):
    path, items = manifest(tmp_path, {"common_sense": 30, "av": 10})
    client = mock_client(MockEndpoint.rigged(1.0, items=items))
    report = run_eval(EvalRunSpec(str(path), n_runs=2), client)
    assert report.overall == 1.0
    assert all(v == 1.0 for run in report.per_run for v in run.per_source.values())
    assert set(report.components) == {"common_sense", "av"}


def test_common_sense_only_uses_category_columns(tmp_path):
    path, items = manifest(tmp_path, {"common_sense": 604})
    client = mock_client(MockEndpoint.rigged(0.6, items=items), max_in_flight=32)
    report = run_eval(EvalRunSpec(str(path), n_runs=1), client)
    assert list(report.components) == ["space", "time", "fundamental_physics"]
    assert report.overall == pytest.approx(unweighted_mean(report.per_category_mean.values()))


def test_per_run_accuracy_is_exact_fraction(tmp_path):
    path, items = manifest(tmp_path, {"av": 37})
    client = mock_client(MockEndpoint.rigged(0.5, items=items))
    report = run_eval(EvalRunSpec(str(path), n_runs=3), client)
    for run in report.per_run:
        assert run.per_source["av"] == run.correct["av"] / 37
    assert report.per_source_mean["av"] == pytest.approx(sum(r.per_source["av"] for r in report.per_run) / 3)


def test_errored_items_score_zero():
    good = item(("yes", "no"), "A", id="good", question="known?", source=Source.AV)
    lost = item(("yes", "no"), "A", id="lost", question="unknown?", source=Source.AV)
    client = mock_client(MockEndpoint.rigged(1.0, items=[good]))
    report = evaluate_items([good, lost], EvalRunSpec("-", n_runs=2), client)
    assert report.per_source_mean["av"] == 0.5
    assert report.errored == 2 and report.per_run[0].errored_ids == ["lost"]


def test_deterministic_and_round_trips(tmp_path):
    path, items = manifest(tmp_path, {"common_sense": 40, "robovqa": 20})
    outs = []
    for _ in range(2):
        client = mock_client(MockEndpoint.rigged(0.7, seed=1, items=items))
        outs.append(render_report(run_eval(EvalRunSpec(str(path), shuffle=True, base_seed=3), client), "json"))
    assert outs[0] == outs[1]
    (tmp_path / "r.json").write_text(outs[0])
    again = load_report(tmp_path / "r.json")
    assert render_report(again, "json") == outs[0]


def test_invalid_manifest_refused(tmp_path):
    bad = item(("same", "Same."), "A", id="dup-text")
    path = tmp_path / "bad.jsonl"
    write_manifest(path, [bad])
    with pytest.raises(EvalError, match="dup-text"):
        run_eval(EvalRunSpec(str(path)), mock_client(MockEndpoint.rigged(1.0, items=[bad])))


def test_lenient_extraction_default():
    it = item(("yes", "no"), "B", id="q", question="untagged?", source=Source.AV)
    fixtures = {}
    from physrl.prompts import render_prompt
    from physrl.rollout import fixture_key
    fixtures[fixture_key(render_prompt(it))] = "Thinking it over, B."
    client = mock_client(MockEndpoint.scripted(fixtures))
    assert evaluate_items([it], EvalRunSpec("-", n_runs=1), client).overall == 1.0
    assert evaluate_items([it], EvalRunSpec("-", n_runs=1, extraction="strict"), client).overall == 0.0
