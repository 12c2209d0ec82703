"""Spatial puzzles: 2x2 patch grids shuffled among distractor images."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import comb
from typing import Optional, Sequence, Union

from ..dataset import McqItem, Source, make_options
from ..rng import SeededRng


class PuzzleError(ValueError):
    pass


class WrongArity(PuzzleError):
    pass


class NotEnoughDistractors(PuzzleError):
    pass


class Position(str, Enum):
    TOP_LEFT = "top_left"
    TOP_RIGHT = "top_right"
    BOTTOM_LEFT = "bottom_left"
    BOTTOM_RIGHT = "bottom_right"


class Direction(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    TOP = "top"
    BOTTOM = "bottom"


POSITIONS = (Position.TOP_LEFT, Position.TOP_RIGHT, Position.BOTTOM_LEFT, Position.BOTTOM_RIGHT)

NEIGHBOR: dict[Position, dict[Direction, Position]] = {
    Position.TOP_LEFT: {Direction.RIGHT: Position.TOP_RIGHT, Direction.BOTTOM: Position.BOTTOM_LEFT},
    Position.TOP_RIGHT: {Direction.LEFT: Position.TOP_LEFT, Direction.BOTTOM: Position.BOTTOM_RIGHT},
    Position.BOTTOM_LEFT: {Direction.TOP: Position.TOP_LEFT, Direction.RIGHT: Position.BOTTOM_RIGHT},
    Position.BOTTOM_RIGHT: {Direction.TOP: Position.TOP_RIGHT, Direction.LEFT: Position.BOTTOM_LEFT},
}


@dataclass(frozen=True)
class PatchGrid:
    image_id: str
    patches: dict[Position, str]

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "patches": [self.patches[p] for p in POSITIONS]}

    @classmethod
    def from_dict(cls, d: dict) -> "PatchGrid":
        return split_into_patches(d["image_id"], d["patches"])


def split_into_patches(image_id: str, quadrant_descriptors: Sequence[str]) -> PatchGrid:
    """Assign descriptors to TL, TR, BL, BR in that order."""
    if len(quadrant_descriptors) != 4:
        raise WrongArity(f"need 4 quadrant descriptors, got {len(quadrant_descriptors)}")
    return PatchGrid(image_id, dict(zip(POSITIONS, quadrant_descriptors)))


@dataclass(frozen=True)
class DirectionTask:
    direction: Direction


@dataclass(frozen=True)
class SameImageTask:
    k: int

    def __post_init__(self) -> None:
        if self.k not in (2, 3):
            raise PuzzleError("SameImage k must be 2 or 3")


PuzzleTask = Union[DirectionTask, SameImageTask]


@dataclass(frozen=True)
class Frame:
    index: int
    image_id: str
    position: Position
    descriptor: str

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "image_id": self.image_id,
            "position": self.position.value,
            "descriptor": self.descriptor,
        }


@dataclass(frozen=True)
class PuzzleInstance:
    frames: tuple[Frame, ...]
    task: PuzzleTask
    mcq: McqItem
    ground_truth_frames: frozenset[int]
    target_image_id: str
    anchor_index: int = 1

    def frame(self, index: int) -> Frame:
        return self.frames[index - 1]

    def truth_record(self) -> dict:
        """Hidden provenance, written to the audit sidecar."""
        if isinstance(self.task, DirectionTask):
            task = {"kind": "direction", "direction": self.task.direction.value}
        else:
            task = {"kind": "same_image", "k": self.task.k}
        return {
            "id": self.mcq.id,
            "target_image_id": self.target_image_id,
            "task": task,
            "anchor_index": self.anchor_index,
            "ground_truth_frames": sorted(self.ground_truth_frames),
            "frames": [f.to_dict() for f in self.frames],
        }


def frame_label(indices) -> str:
    return ", ".join(f"Frame {i}" for i in sorted(indices))


def _question(frames: Sequence[Frame], task: PuzzleTask) -> str:
    n = len(frames)
    listing = "\n".join(f"Frame {f.index}: {f.descriptor}" for f in frames)
    if isinstance(task, DirectionTask):
        ask = (
            f"Each of the {n} frames is one quadrant of some image. Which frame belongs "
            f"directly to the {task.direction.value} of Frame 1 in its original image?"
        )
    else:
        ask = (
            f"Each of the {n} frames is one quadrant of some image. Which {task.k} frames "
            f"were cut from the same image as Frame 1?"
        )
    return f"{listing}\n\n{ask}"


def gen_puzzle(
    target: PatchGrid,
    distractors: Sequence[PatchGrid],
    task: PuzzleTask,
    rng: SeededRng,
    item_id: Optional[str] = None,
) -> PuzzleInstance:
    """Build one shuffled puzzle with a 4-option MCQ.

    Frame 1 is the anchor patch of ``target``; every other patch of the
    target and of the distractor images is shuffled into frames 2..N.
    """
    ids = [target.image_id] + [d.image_id for d in distractors]
    if len(set(ids)) != len(ids):
        raise PuzzleError("distractor image ids must be distinct from the target and each other")

    if isinstance(task, DirectionTask):
        anchors = [p for p in POSITIONS if task.direction in NEIGHBOR[p]]
    else:
        anchors = list(POSITIONS)
    anchor = anchors[rng.below(len(anchors))]

    rest = [(target.image_id, p, target.patches[p]) for p in POSITIONS if p != anchor]
    for d in distractors:
        rest.extend((d.image_id, p, d.patches[p]) for p in POSITIONS)
    rng.shuffle(rest)
    frames = (Frame(1, target.image_id, anchor, target.patches[anchor]),) + tuple(
        Frame(i, img, pos, desc) for i, (img, pos, desc) in enumerate(rest, start=2)
    )

    target_frames = [f.index for f in frames[1:] if f.image_id == target.image_id]
    distractor_frames = [f.index for f in frames[1:] if f.image_id != target.image_id]

    if isinstance(task, DirectionTask):
        want = NEIGHBOR[anchor][task.direction]
        answer = next(f.index for f in frames if f.image_id == target.image_id and f.position == want)
        truth = frozenset([answer])
        if len(distractor_frames) < 2:
            raise NotEnoughDistractors("direction puzzles need at least 2 distractor-image frames")
        wrong = rng.sample(distractor_frames, 2)
        pool = [i for i in target_frames + distractor_frames if i != answer and i not in wrong]
        wrong.append(pool[rng.below(len(pool))])
        choices = [truth] + [frozenset([w]) for w in wrong]
    else:
        k = task.k
        truth = frozenset(rng.sample(target_frames, k))
        choices = [truth] + _wrong_sets(target_frames, distractor_frames, k, 3, rng)

    order = rng.permutation(4)
    texts = [frame_label(choices[o]) for o in order]
    options = make_options(texts)
    correct = options[order.index(0)].label
    mcq = McqItem(
        id=item_id or f"puzzle-{target.image_id}",
        source=Source.PUZZLE,
        media_ref=f"puzzle://{target.image_id}/" + "+".join(ids[1:]),
        question=_question(frames, task),
        options=options,
        correct_label=correct,
    ).check()
    return PuzzleInstance(frames, task, mcq, truth, target.image_id)


def _wrong_sets(target_frames, distractor_frames, k, count, rng: SeededRng) -> list[frozenset[int]]:
    """``count`` distinct k-sets, each containing at least one distractor-image frame."""
    if not distractor_frames:
        raise NotEnoughDistractors(f"same-image({k}) options need distractor-image frames")
    pool = target_frames + distractor_frames
    available = comb(len(pool), k) - comb(len(target_frames), k)
    if available < count:
        raise NotEnoughDistractors(f"only {available} wrong {k}-sets exist, need {count}")
    out: list[frozenset[int]] = []
    while len(out) < count:
        # one guaranteed distractor frame, the rest from the whole pool
        first = distractor_frames[rng.below(len(distractor_frames))]
        others = rng.sample([i for i in pool if i != first], k - 1)
        cand = frozenset([first, *others])
        if cand not in out:
            out.append(cand)
    return out


_SCENES = ["kitchen", "beach", "garage", "forest trail", "office", "street corner", "gym", "living room",
           "harbor", "snowy field", "workshop", "airport hall"]
_THINGS = ["a red mug", "a bicycle wheel", "a window frame", "a potted plant", "a shelf edge", "a lamp",
           "a dog's tail", "a barbell", "a door handle", "tree branches", "a car bumper", "a stack of books"]


def synthetic_grid(image_id: str, rng: SeededRng) -> PatchGrid:
    """Placeholder grid whose quadrants share a scene word, for demos and tests."""
    scene = rng.choice(_SCENES)
    things = rng.sample(_THINGS, 4)
    return split_into_patches(image_id, [f"{scene}: {t}" for t in things])
