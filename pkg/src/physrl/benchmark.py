"""Deterministic synthetic benchmark with the curated benchmark's shape.

The real benchmark clips are not redistributable; this builds a stand-in
with the same per-source counts, the same common-sense category split and
binary/multiple-choice mix, so the validation and evaluation code paths
can be exercised end to end.
"""
from __future__ import annotations

from .dataset import Granularity, McqItem, Source, make_options, shuffle_options
from .ontology import SUBCATEGORIES, Agent, Capability, Category, CommonSenseTag, EmbodiedTag
from .rng import SeededRng

BENCHMARK_COUNTS: dict[str, int] = {
    "common_sense": 604,
    "bridge_v2": 100,
    "robovqa": 110,
    "robofail": 100,
    "agibot": 100,
    "holoassist": 100,
    "av": 100,
}

COMMON_SENSE_CATEGORY_COUNTS = {
    Category.SPACE: 80,
    Category.TIME: 298,
    Category.FUNDAMENTAL_PHYSICS: 226,
}
COMMON_SENSE_BINARY = 336

_EMBODIED = {
    Source.BRIDGE_V2: (Capability.PREDICT_ACTION_EFFECTS, Agent.ROBOT_ARM, Granularity.ACTION, False),
    Source.ROBOVQA: (Capability.RESPECT_PHYSICAL_CONSTRAINTS, Agent.ROBOT_ARM, Granularity.SUBTASK, True),
    Source.ROBOFAIL: (Capability.RESPECT_PHYSICAL_CONSTRAINTS, Agent.ROBOT_ARM, Granularity.SUBTASK, True),
    Source.AGIBOT: (Capability.PREDICT_ACTION_EFFECTS, Agent.HUMANOID_ROBOT, Granularity.SUBTASK, False),
    Source.HOLOASSIST: (Capability.PREDICT_ACTION_EFFECTS, Agent.HUMAN, Granularity.SUBTASK, False),
    Source.AV: (Capability.PREDICT_ACTION_EFFECTS, Agent.AUTONOMOUS_VEHICLE, Granularity.ACTION, False),
}

_ACTIONS = [
    "move the gripper left", "move the gripper right", "lift the cup", "open the drawer",
    "close the drawer", "pour the water", "turn right", "turn left", "change to right lane",
    "change to left lane", "pick up the sponge", "place the bowl on the plate", "tilt down",
    "grab the watering can", "wipe the table", "push the button", "stop at the crosswalk",
]


def _mcq_texts(rng: SeededRng, k: int) -> list[str]:
    return rng.sample(_ACTIONS, k)


def synthetic_common_sense(rng: SeededRng) -> list[McqItem]:
    tags = []
    for cat, n in COMMON_SENSE_CATEGORY_COUNTS.items():
        subs = SUBCATEGORIES[cat]
        tags.extend(CommonSenseTag(cat, subs[i % len(subs)]) for i in range(n))
    total = len(tags)
    binary = set(rng.sample(range(total), COMMON_SENSE_BINARY))
    items = []
    for i, tag in enumerate(tags):
        if i in binary:
            texts = ["Yes", "No"] if rng.bernoulli(0.5) else ["No", "Yes"]
        else:
            texts = [f"outcome {j} for clip {i}" for j in range(4)]
        item = McqItem(
            id=f"cs-{i:04d}",
            source=Source.COMMON_SENSE,
            media_ref=f"clip://common_sense/{i:04d}",
            question=f"[{tag.render()}] Question {i} about the clip.",
            options=make_options(texts),
            correct_label="A",
            common_sense_tags=(tag,),
        )
        items.append(shuffle_options(item, rng))
    return items


def synthetic_embodied(source: Source, count: int, rng: SeededRng) -> list[McqItem]:
    cap, agent, gran, binary = _EMBODIED[source]
    items = []
    for i in range(count):
        texts = ["Yes", "No"] if binary else _mcq_texts(rng, 4)
        item = McqItem(
            id=f"{source.value}-{i:04d}",
            source=source,
            media_ref=f"clip://{source.value}/{i:04d}",
            question=f"{source.value} clip {i}: what is the most plausible next {gran.value}?",
            options=make_options(texts),
            correct_label="A",
            embodied_tag=EmbodiedTag(cap, agent),
            granularity=gran,
        )
        items.append(shuffle_options(item, rng))
    return items


def synthetic_benchmark(seed: int = 0, counts: dict[str, int] | None = None) -> list[McqItem]:
    """Items for every source in ``counts`` (defaults to the curated benchmark's sizes)."""
    counts = dict(BENCHMARK_COUNTS if counts is None else counts)
    rng = SeededRng(seed)
    items: list[McqItem] = []
    for name, n in counts.items():
        src = Source(name)
        if src is Source.COMMON_SENSE:
            cs = synthetic_common_sense(rng)
            if n > len(cs):
                raise ValueError(f"at most {len(cs)} common-sense items available")
            items.extend(cs[:n])
        elif src in _EMBODIED:
            items.extend(synthetic_embodied(src, n, rng))
        else:
            raise ValueError(f"no synthetic generator for {name}")
    return items

