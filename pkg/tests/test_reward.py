from __future__ import annotations

import json
import math
from pathlib import Path
from statistics import fmean, pstdev

import pytest
from hypothesis import assume, given, strategies as st

from _util import item
from physrl.dataset import Source, shuffle_options
from physrl.reward import (
    EmptySequence,
    GroupTooSmall,
    IncompleteGroup,
    LengthMismatch,
    RewardError,
    UnknownQuestion,
    accuracy_reward,
    answer_matches,
    extract_answer,
    format_reward,
    grpo_advantages,
    kl_penalty,
    parse_response,
    score_groups,
    score_response,
    total_reward,
)
from physrl.rng import SeededRng

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "reward_fixtures.json").read_text())


def fixture_item(case):
    return item(texts=case["options"], correct=case["correct_label"], id=case["case"])


@pytest.mark.parametrize("case", FIXTURES, ids=[c["case"] + ":" + c["note"] for c in FIXTURES])
def test_hand_labelled_rewards(case):
    b = score_response(case["response"], fixture_item(case))
    assert (b.accuracy, b.format) == (case["accuracy"], case["format"])
    assert b.total == pytest.approx(1.0 * case["accuracy"] + 0.1 * case["format"])


def test_fixture_suite_size():
    assert len(FIXTURES) >= 50


def test_parse_examples():
    p = parse_response("<think>t</think> <answer>A</answer>")
    assert (p.think, p.answer, p.strict_format_ok) == ("t", "A", True)
    p = parse_response("The answer is A")
    assert (p.think, p.answer, p.strict_format_ok) == (None, None, False)
    p = parse_response("<answer>A</answer> x <answer>B</answer>")
    assert (p.answer, p.strict_format_ok) == ("B", False)


def test_format_examples():
    assert format_reward(parse_response("<think>t</think> <answer>A</answer>")) == 1
    assert format_reward(parse_response("<answer>A</answer><think>t</think>")) == 0
    assert format_reward(parse_response("<think>t</think> <answer>A</answer> more")) == 0


def test_lenient_format_mode():
    p = parse_response("Sure. <think>t</think> <answer>A</answer> done")
    assert format_reward(p, "strict") == 0
    assert format_reward(p, "lenient") == 1
    assert format_reward(parse_response("<answer>A</answer>"), "lenient") == 0


@given(st.text(max_size=80))
def test_format_one_implies_both_segments(text):
    p = parse_response(text)
    if format_reward(p) == 1:
        assert p.think is not None and p.answer is not None


@given(st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=30),
       st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=30))
def test_segments_are_exact_inner_text(think, answer):
    p = parse_response(f"<think>{think}</think> <answer>{answer}</answer>")
    assert (p.think, p.answer, p.strict_format_ok) == (think, answer, True)


def test_accuracy_examples():
    it = item(("w", "x", "y", "z"), "B")
    assert accuracy_reward(parse_response("<answer>B</answer>"), it) == 1
    assert accuracy_reward(parse_response("<answer>the answer is none</answer>"), it) == 0
    assert accuracy_reward(parse_response("<answer>b.</answer>"), it) == 1
    assert accuracy_reward(parse_response("no tags"), it) == 0


def test_exact_set_mode():
    it = item(("Frame 3, Frame 7", "Frame 2, Frame 5", "Frame 4, Frame 9", "Frame 6, Frame 8"), "A", source=Source.PUZZLE)
    assert answer_matches("Frame 7, Frame 3", it, "exact_set")
    assert answer_matches("frame 3 and frame 7", it, "exact_set")
    assert not answer_matches("Frame 3", it, "exact_set")
    assert not answer_matches("Frame 3, Frame 7, Frame 9", it, "exact_set")
    assert not answer_matches("nothing", it, "exact_set")


def test_lenient_extraction_falls_back_to_last_letter():
    it = item(("w", "x", "y", "z"), "C")
    p = parse_response("I think A is wrong, so the answer is C.")
    assert extract_answer(p, it, "strict") is None
    assert extract_answer(p, it, "lenient") == "C"
    assert accuracy_reward(p, it, extraction="lenient") == 1
    assert extract_answer(parse_response("<answer>B</answer> C"), it, "lenient") == "B"


def test_total_reward_examples():
    assert total_reward(1, 1, (1.0, 0.1)) == pytest.approx(1.1)
    assert total_reward(0, 1, (1.0, 0.1)) == pytest.approx(0.1)
    assert total_reward(1, 0, (1.0, 0.0)) == 1.0
    with pytest.raises(RewardError):
        total_reward(1, 1, (-1.0, 0.1))


# -- advantages -----------------------------------------------------------------

def oracle_advantages(rewards):
    m = fmean(rewards)
    s = pstdev(rewards)
    return [0.0] * len(rewards) if s < 1e-12 else [(r - m) / s for r in rewards]


def test_advantage_examples():
    assert grpo_advantages([1, 0]).advantages == pytest.approx([1.0, -1.0], abs=1e-12)
    g = grpo_advantages([1, 0, 0])
    assert g.advantages == pytest.approx([math.sqrt(2), -1 / math.sqrt(2), -1 / math.sqrt(2)], abs=1e-6)
    assert g.advantages == pytest.approx([1.414214, -0.707107, -0.707107], abs=1e-6)
    z = grpo_advantages([0.5, 0.5, 0.5])
    assert z.degenerate and z.advantages == (0.0, 0.0, 0.0)


def test_group_too_small():
    with pytest.raises(GroupTooSmall):
        grpo_advantages([1.0])


reward_lists = st.lists(st.one_of(st.sampled_from([0.0, 0.1, 1.0, 1.1]),
                                  st.floats(-100, 100, allow_nan=False)), min_size=2, max_size=64)


@given(reward_lists)
def test_advantage_invariants(rewards):
    g = grpo_advantages(rewards)
    assert len(g.rewards) == len(g.advantages) == len(rewards)
    if g.degenerate:
        assert all(a == 0.0 for a in g.advantages)
    else:
        assert abs(fmean(g.advantages)) <= 1e-9
        assert abs(pstdev(g.advantages) - 1) <= 1e-9
    assert g.advantages == pytest.approx(oracle_advantages(rewards), abs=1e-9)


@given(reward_lists, st.floats(0.01, 100), st.floats(-100, 100))
def test_affine_invariance(rewards, a, b):
    base = grpo_advantages(rewards)
    assume(not base.degenerate and pstdev(rewards) > 1e-6)
    moved = grpo_advantages([a * r + b for r in rewards])
    assert moved.advantages == pytest.approx(base.advantages, abs=1e-9)


# -- KL ------------------------------------------------------------------------------

def test_kl_examples():
    lp = [-0.5, -1.0, -2.0]
    assert kl_penalty(lp, lp) == 0.0
    for n in (1, 7, 100):
        policy = [-1.0] * n
        ref = [-0.9] * n
        assert kl_penalty(policy, ref) == pytest.approx(math.exp(0.1) - 1.1, abs=1e-7)
    assert math.exp(0.1) - 1.1 == pytest.approx(0.0051709, abs=1e-7)


def test_kl_errors():
    with pytest.raises(LengthMismatch):
        kl_penalty([0.0], [0.0, 0.0])
    with pytest.raises(EmptySequence):
        kl_penalty([], [])


@given(st.lists(st.tuples(st.floats(-20, 0), st.floats(-20, 0)), min_size=1, max_size=50))
def test_kl_non_negative(pairs):
    p, q = zip(*pairs)
    assert kl_penalty(p, q) >= 0.0


# -- properties over items ---------------------------------------------------------

@given(st.integers(0, 2**64 - 1), st.integers(0, 3))
def test_text_answers_survive_shuffling(seed, which):
    it = item(("red ball", "blue ball", "green cube", "yellow cone"), "ABCD"[which])
    response = f"<think>t</think> <answer>{it.correct_text}</answer>"
    shuffled = shuffle_options(it, SeededRng(seed))
    assert score_response(response, it) == score_response(response, shuffled)


@given(st.text(max_size=60))
def test_scoring_is_deterministic(text):
    it = item(("w", "x", "y", "z"), "B")
    assert score_response(text, it) == score_response(text, it)


# -- cohort scoring -------------------------------------------------------------------

def test_score_groups_records():
    items = {"q1": item(("yes", "no"), "A", id="q1")}
    good = "<think>t</think> <answer>A</answer>"
    bad = "<think>t</think> <answer>B</answer>"
    recs = [{"question_id": "q1", "response_text": t} for t in (good, bad, good)]
    out = list(score_groups(recs, items, group_size=3))
    assert [r["kind"] for r in out] == ["response"] * 3 + ["group"]
    assert [r["total"] for r in out[:3]] == pytest.approx([1.1, 0.1, 1.1])
    assert out[3]["advantages"] == pytest.approx(oracle_advantages([1.1, 0.1, 1.1]))


def test_score_groups_errors():
    items = {"q1": item(id="q1")}
    with pytest.raises(IncompleteGroup):
        list(score_groups([{"question_id": "q1", "response_text": "x"}] * 3, items, 2))
    with pytest.raises(UnknownQuestion):
        list(score_groups([{"question_id": "zz", "response_text": "x"}] * 2, items, 2))
    with pytest.raises(GroupTooSmall):
        list(score_groups([], items, 1))
