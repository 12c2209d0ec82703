"""Physical common-sense and embodied-reasoning taxonomies.

Machine names (``object_permanence``) are what goes into JSONL; display
names (``Object Permanence``) are what reports print.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable


class OntologyError(ValueError):
    pass


class UnknownCategory(OntologyError):
    pass


class UnknownSubcategory(OntologyError):
    pass


class MismatchedPair(OntologyError):
    pass


_SEPARATORS = re.compile(r"[\s_\-]+")


@lru_cache(maxsize=1024)
def _key(name: str) -> str:
    return _SEPARATORS.sub("", name.strip().lower())


class Category(str, Enum):
    SPACE = "space"
    TIME = "time"
    FUNDAMENTAL_PHYSICS = "fundamental_physics"

    @property
    def display(self) -> str:
        return _CATEGORY_DISPLAY[self]


_CATEGORY_DISPLAY = {
    Category.SPACE: "Space",
    Category.TIME: "Time",
    Category.FUNDAMENTAL_PHYSICS: "Fundamental Physics",
}


class Subcategory(str, Enum):
    RELATIONSHIP = "relationship"
    PLAUSIBILITY = "plausibility"
    AFFORDANCE = "affordance"
    ENVIRONMENT = "environment"
    ACTIONS = "actions"
    ORDER = "order"
    CAUSALITY = "causality"
    CAMERA = "camera"
    PLANNING = "planning"
    ATTRIBUTES = "attributes"
    STATES = "states"
    OBJECT_PERMANENCE = "object_permanence"
    MECHANICS = "mechanics"
    ELECTROMAGNETISM = "electromagnetism"
    THERMODYNAMICS = "thermodynamics"
    ANTI_PHYSICS = "anti_physics"

    @property
    def category(self) -> Category:
        return SUBCATEGORY_PARENT[self]

    @property
    def display(self) -> str:
        if self is Subcategory.ANTI_PHYSICS:
            return "Anti-Physics"
        return self.value.replace("_", " ").title()


SUBCATEGORIES: dict[Category, tuple[Subcategory, ...]] = {
    Category.SPACE: (
        Subcategory.RELATIONSHIP,
        Subcategory.PLAUSIBILITY,
        Subcategory.AFFORDANCE,
        Subcategory.ENVIRONMENT,
    ),
    Category.TIME: (
        Subcategory.ACTIONS,
        Subcategory.ORDER,
        Subcategory.CAUSALITY,
        Subcategory.CAMERA,
        Subcategory.PLANNING,
    ),
    Category.FUNDAMENTAL_PHYSICS: (
        Subcategory.ATTRIBUTES,
        Subcategory.STATES,
        Subcategory.OBJECT_PERMANENCE,
        Subcategory.MECHANICS,
        Subcategory.ELECTROMAGNETISM,
        Subcategory.THERMODYNAMICS,
        Subcategory.ANTI_PHYSICS,
    ),
}

SUBCATEGORY_PARENT: dict[Subcategory, Category] = {
    sub: cat for cat, subs in SUBCATEGORIES.items() for sub in subs
}

_CATEGORY_BY_KEY = {_key(c.value): c for c in Category}
_CATEGORY_BY_KEY.update({_key(c.display): c for c in Category})
_SUBCATEGORY_BY_KEY = {_key(s.value): s for s in Subcategory}


@dataclass(frozen=True)
class CommonSenseTag:
    category: Category
    subcategory: Subcategory

    def __post_init__(self) -> None:
        if self.subcategory.category is not self.category:
            raise MismatchedPair(
                f"{self.subcategory.display} belongs to {self.subcategory.category.display}, "
                f"not {self.category.display}"
            )

    def render(self) -> str:
        return f"{self.category.display}: {self.subcategory.display}"

    def to_dict(self) -> dict[str, str]:
        return {"category": self.category.value, "subcategory": self.subcategory.value}

    @classmethod
    def from_dict(cls, d: dict) -> "CommonSenseTag":
        return parse_common_sense_tag(d["category"], d["subcategory"])


def parse_common_sense_tag(category_name: str, subcategory_name: str) -> CommonSenseTag:
    """Look up a tag by name, ignoring case, spaces, hyphens and underscores."""
    if not category_name or not category_name.strip():
        raise UnknownCategory("empty category name")
    if not subcategory_name or not subcategory_name.strip():
        raise UnknownSubcategory("empty subcategory name")
    cat = _CATEGORY_BY_KEY.get(_key(category_name))
    if cat is None:
        raise UnknownCategory(category_name)
    sub = _SUBCATEGORY_BY_KEY.get(_key(subcategory_name))
    if sub is None:
        raise UnknownSubcategory(subcategory_name)
    return CommonSenseTag(cat, sub)


def parse_rendered(text: str) -> CommonSenseTag:
    """Inverse of :meth:`CommonSenseTag.render`."""
    cat, sep, sub = text.partition(":")
    if not sep:
        raise OntologyError(f"expected 'Category: Subcategory', got {text!r}")
    return parse_common_sense_tag(cat, sub)


def all_tags() -> list[CommonSenseTag]:
    return [CommonSenseTag(cat, sub) for cat, subs in SUBCATEGORIES.items() for sub in subs]


def category_histogram(tags: Iterable[CommonSenseTag]) -> dict[Category, int]:
    counts = {cat: 0 for cat in Category}
    for tag in tags:
        counts[tag.category] += 1
    return counts


class Capability(str, Enum):
    PROCESS_SENSORY_INPUTS = "process_sensory_inputs"
    PREDICT_ACTION_EFFECTS = "predict_action_effects"
    RESPECT_PHYSICAL_CONSTRAINTS = "respect_physical_constraints"
    LEARN_FROM_INTERACTIONS = "learn_from_interactions"


class Agent(str, Enum):
    HUMAN = "human"
    ANIMAL = "animal"
    ROBOT_ARM = "robot_arm"
    HUMANOID_ROBOT = "humanoid_robot"
    AUTONOMOUS_VEHICLE = "autonomous_vehicle"


@dataclass(frozen=True)
class EmbodiedTag:
    capability: Capability
    agent: Agent

    def to_dict(self) -> dict[str, str]:
        return {"capability": self.capability.value, "agent": self.agent.value}

    @classmethod
    def from_dict(cls, d: dict) -> "EmbodiedTag":
        try:
            cap = _CAPABILITY_KEYS[_key(d["capability"])]
            agent = _AGENT_KEYS[_key(d["agent"])]
        except KeyError as exc:
            raise OntologyError(f"unknown embodied tag field {exc}") from None
        return cls(cap, agent)


_CAPABILITY_KEYS = {_key(c.value): c for c in Capability}
_AGENT_KEYS = {_key(a.value): a for a in Agent}
