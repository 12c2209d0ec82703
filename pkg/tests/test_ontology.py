from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from physrl.ontology import (
    SUBCATEGORIES,
    Agent,
    Capability,
    Category,
    CommonSenseTag,
    EmbodiedTag,
    MismatchedPair,
    Subcategory,
    UnknownCategory,
    UnknownSubcategory,
    all_tags,
    category_histogram,
    parse_common_sense_tag,
    parse_rendered,
)


def test_time_causality():
    tag = parse_common_sense_tag("Time", "Causality")
    assert tag == CommonSenseTag(Category.TIME, Subcategory.CAUSALITY)


def test_case_insensitive():
    assert parse_common_sense_tag("space", "relationship") == CommonSenseTag(Category.SPACE, Subcategory.RELATIONSHIP)


def test_mismatched_pair():
    with pytest.raises(MismatchedPair):
        parse_common_sense_tag("Space", "Causality")


def test_unknown_names():
    with pytest.raises(UnknownCategory):
        parse_common_sense_tag("Biology", "Causality")
    with pytest.raises(UnknownSubcategory):
        parse_common_sense_tag("Time", "Weather")
    with pytest.raises(UnknownCategory):
        parse_common_sense_tag("", "Causality")


def test_multiword_names():
    tag = parse_common_sense_tag("Fundamental Physics", "Object Permanence")
    assert tag.subcategory is Subcategory.OBJECT_PERMANENCE
    assert parse_common_sense_tag("fundamental_physics", "anti-physics").subcategory is Subcategory.ANTI_PHYSICS


def test_taxonomy_sizes():
    per = {c: sum(1 for s in Subcategory if s.category is c) for c in Category}
    assert per == {Category.SPACE: 4, Category.TIME: 5, Category.FUNDAMENTAL_PHYSICS: 7}
    assert sum(len(v) for v in SUBCATEGORIES.values()) == 16 == len(all_tags())
    assert len(Capability) == 4 and len(Agent) == 5


def test_constructor_rejects_mismatch():
    with pytest.raises(MismatchedPair):
        CommonSenseTag(Category.SPACE, Subcategory.CAUSALITY)


@given(st.sampled_from(list(Subcategory)))
def test_parse_render_identity(sub):
    tag = CommonSenseTag(sub.category, sub)
    assert parse_rendered(tag.render()) == tag
    assert CommonSenseTag.from_dict(tag.to_dict()) == tag


@given(st.sampled_from(list(Capability)), st.sampled_from(list(Agent)))
def test_embodied_roundtrip(cap, agent):
    tag = EmbodiedTag(cap, agent)
    assert EmbodiedTag.from_dict(tag.to_dict()) == tag


def test_histogram_examples():
    zero = {Category.SPACE: 0, Category.TIME: 0, Category.FUNDAMENTAL_PHYSICS: 0}
    assert category_histogram([]) == zero
    space = CommonSenseTag(Category.SPACE, Subcategory.AFFORDANCE)
    time = CommonSenseTag(Category.TIME, Subcategory.ORDER)
    assert category_histogram([space] * 3 + [time]) == {**zero, Category.SPACE: 3, Category.TIME: 1}


@given(st.lists(st.sampled_from(all_tags())))
def test_histogram_sums_to_length(tags):
    h = category_histogram(tags)
    assert sum(h.values()) == len(tags)
    assert set(h) == set(Category)


def test_packaged_benchmark_histogram():
    from physrl.benchmark import synthetic_benchmark
    from physrl.dataset import Source

    tags = [t for it in synthetic_benchmark(0) if it.source is Source.COMMON_SENSE for t in it.common_sense_tags]
    assert category_histogram(tags) == {Category.SPACE: 80, Category.TIME: 298, Category.FUNDAMENTAL_PHYSICS: 226}
