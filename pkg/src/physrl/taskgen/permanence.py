"""Object-permanence scenes as abstract event logs, with labels and MCQs."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Optional

from ..dataset import McqItem, Source, make_options
from ..rng import SeededRng

DEFAULT_CLIP_END = 10.0

OBJECT_NAMES = [
    "akita black bowl", "cookies", "glazed rim porcelain ramekin", "plate", "wooden cabinet",
    "flat stove", "red mug", "white yellow mug", "alphabet soup", "cream cheese", "tomato sauce",
    "ketchup", "butter", "milk", "chocolate pudding", "orange juice", "basket", "wine bottle",
    "black book", "moka pot",
]


class InvalidLog(ValueError):
    pass


class EventKind(str, Enum):
    VISIBLE = "visible"
    OCCLUDED_START = "occluded_start"
    OCCLUDED_END = "occluded_end"
    REMOVED = "removed"


# order of same-object events sharing a timestamp
_KIND_RANK = {
    EventKind.OCCLUDED_START: 0,
    EventKind.REMOVED: 1,
    EventKind.OCCLUDED_END: 2,
    EventKind.VISIBLE: 3,
}


@dataclass(frozen=True)
class SceneEvent:
    time: float
    object: str
    kind: EventKind

    def to_dict(self) -> dict:
        return {"time": self.time, "object": self.object, "kind": self.kind.value}


@dataclass(frozen=True)
class SceneEventLog:
    objects: tuple[str, ...]
    events: tuple[SceneEvent, ...]
    clip_end: float = DEFAULT_CLIP_END
    camera_note: str = ""
    scene_id: str = ""

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "objects": list(self.objects),
            "events": [e.to_dict() for e in self.events],
            "clip_end": self.clip_end,
            "camera_note": self.camera_note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneEventLog":
        events = tuple(SceneEvent(float(e["time"]), e["object"], EventKind(e["kind"])) for e in d["events"])
        return cls(
            objects=tuple(d["objects"]),
            events=events,
            clip_end=float(d.get("clip_end", DEFAULT_CLIP_END)),
            camera_note=d.get("camera_note", ""),
            scene_id=d.get("scene_id", ""),
        )


@dataclass(frozen=True)
class PermanenceConfig:
    object_count: int = 5
    occlusion_probability: float = 0.5
    removal_probability: float = 0.5
    clip_end: float = DEFAULT_CLIP_END

    def __post_init__(self) -> None:
        if self.object_count < 1:
            raise ValueError("object_count must be >= 1")
        for name in ("occlusion_probability", "removal_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.clip_end <= 0:
            raise ValueError("clip_end must be positive")


@lru_cache(maxsize=1)
def _template() -> tuple[str, str]:
    text = resources.files("physrl").joinpath("templates/permanence.txt").read_text(encoding="utf-8")
    framing, question = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    return framing, question


def camera_framing() -> str:
    return _template()[0]


def log_problems(log: SceneEventLog) -> list[str]:
    """Replay the log and list every invariant it breaks."""
    out = []
    known = set(log.objects)
    if len(known) != len(log.objects):
        out.append("object names are not unique")
    occluded: dict[str, bool] = {o: False for o in known}
    removed: set[str] = set()
    awaiting_visible: set[str] = set()
    prev = 0.0
    for i, ev in enumerate(log.events):
        where = f"event {i} ({ev.object}, {ev.kind.value})"
        if not 0.0 <= ev.time <= log.clip_end:
            out.append(f"{where}: time {ev.time} outside [0, {log.clip_end}]")
        if ev.time < prev:
            out.append(f"{where}: time goes backwards")
        prev = max(prev, ev.time)
        if ev.object not in known:
            out.append(f"{where}: unknown object")
            continue
        if ev.object in awaiting_visible and ev.kind is not EventKind.VISIBLE:
            out.append(f"{where}: object must be visible again after its occlusion ends")
        awaiting_visible.discard(ev.object)
        if ev.object in removed and ev.kind is not EventKind.OCCLUDED_END:
            out.append(f"{where}: object was already removed")
            continue
        if ev.kind is EventKind.VISIBLE:
            if occluded[ev.object]:
                out.append(f"{where}: visible while occluded")
        elif ev.kind is EventKind.OCCLUDED_START:
            if occluded[ev.object]:
                out.append(f"{where}: already occluded")
            occluded[ev.object] = True
        elif ev.kind is EventKind.OCCLUDED_END:
            if not occluded[ev.object]:
                out.append(f"{where}: occlusion end without a start")
            occluded[ev.object] = False
            if ev.object not in removed:
                awaiting_visible.add(ev.object)
        elif ev.kind is EventKind.REMOVED:
            if not occluded[ev.object]:
                out.append(f"{where}: removed while not occluded")
            removed.add(ev.object)
    for obj in sorted(awaiting_visible):
        out.append(f"{obj}: occlusion ended but the object never became visible")
    for obj in sorted(known):
        if not occluded[obj]:
            continue
        if obj in removed:
            out.append(f"{obj}: removed inside an occlusion that never ends")
        else:
            out.append(f"{obj}: still occluded at clip end without being removed")
    return out


def label_permanence(log: SceneEventLog) -> bool:
    """True when some object is gone by the end of the clip (a permanence violation)."""
    bad = log_problems(log)
    if bad:
        raise InvalidLog("; ".join(bad))
    present = {o: True for o in log.objects}
    for ev in log.events:
        if ev.kind is EventKind.REMOVED:
            present[ev.object] = False
    return not all(present.values())


def _object_names(n: int, rng: SeededRng) -> list[str]:
    if n <= len(OBJECT_NAMES):
        return rng.sample(OBJECT_NAMES, n)
    names = list(OBJECT_NAMES)
    names += [f"{OBJECT_NAMES[i % len(OBJECT_NAMES)]} {i // len(OBJECT_NAMES) + 1}" for i in range(len(OBJECT_NAMES), n)]
    rng.shuffle(names)
    return names


def gen_permanence_scene(config: PermanenceConfig, rng: SeededRng, scene_id: str = "") -> SceneEventLog:
    """Synthesize one orbiting-camera scene.

    Each object may be occluded up to twice; once fully occluded it may be
    removed, in which case it never becomes visible again. Surviving objects
    always reappear before the clip ends.
    """
    T = config.clip_end
    names = _object_names(config.object_count, rng)
    events: list[SceneEvent] = []
    for obj in names:
        events.append(SceneEvent(0.0, obj, EventKind.VISIBLE))
        cursor = 0.1 * T
        for _ in range(2):
            if cursor > 0.6 * T or not rng.bernoulli(config.occlusion_probability):
                break
            start = round(rng.uniform(cursor, 0.6 * T), 3)
            end = round(start + rng.uniform(0.05 * T, 0.25 * T), 3)
            events.append(SceneEvent(start, obj, EventKind.OCCLUDED_START))
            if rng.bernoulli(config.removal_probability):
                gone = round(start + (end - start) * rng.uniform(0.2, 0.8), 3)
                events.append(SceneEvent(gone, obj, EventKind.REMOVED))
                events.append(SceneEvent(end, obj, EventKind.OCCLUDED_END))
                break
            events.append(SceneEvent(end, obj, EventKind.OCCLUDED_END))
            events.append(SceneEvent(end, obj, EventKind.VISIBLE))
            cursor = end + 0.05 * T
    events.sort(key=lambda e: (e.time, _KIND_RANK[e.kind]))
    return SceneEventLog(tuple(names), tuple(events), T, camera_framing(), scene_id)


def permanence_to_mcq(log: SceneEventLog, item_id: Optional[str] = None) -> McqItem:
    framing, question = _template()
    violated = label_permanence(log)
    listing = ", ".join(log.objects)
    text = f"{framing}\n\nThe objects in the scene are: {listing}.\n\n{question}"
    return McqItem(
        id=item_id or f"permanence-{log.scene_id or 'scene'}",
        source=Source.OBJECT_PERMANENCE,
        media_ref=f"sim://{log.scene_id or 'scene'}",
        question=text,
        options=make_options(["Yes", "No"]),
        correct_label="A" if violated else "B",
    )
