"""Arrow-of-time questions from clips and their reversals."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from ..dataset import McqItem, Source, make_options
from ..rng import SeededRng

AOT_QUESTION = "Is this clip playing forward in time, or is it reversed?"


class Playback(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    playback: Playback
    motion_summary: str = ""

    def to_dict(self) -> dict:
        return {"clip_id": self.clip_id, "playback": self.playback.value, "motion_summary": self.motion_summary}

    @classmethod
    def from_dict(cls, d: dict) -> "ClipRecord":
        return cls(d["clip_id"], Playback(d.get("playback", "forward")), d.get("motion_summary", ""))


def reverse_clip(clip: ClipRecord) -> ClipRecord:
    flipped = Playback.BACKWARD if clip.playback is Playback.FORWARD else Playback.FORWARD
    return replace(clip, playback=flipped)


def balance_playback(clips: Sequence[ClipRecord], rng: SeededRng) -> list[ClipRecord]:
    """Reverse randomly chosen majority clips until the two directions differ by at most one."""
    clips = list(clips)
    fwd = [i for i, c in enumerate(clips) if c.playback is Playback.FORWARD]
    bwd = [i for i, c in enumerate(clips) if c.playback is Playback.BACKWARD]
    major = fwd if len(fwd) > len(bwd) else bwd
    flips = abs(len(fwd) - len(bwd)) // 2
    for i in rng.sample(major, flips):
        clips[i] = reverse_clip(clips[i])
    return clips


def _media_digest(clip: ClipRecord) -> str:
    # opaque per-rendering id that does not reveal the playback direction
    return hashlib.sha1(f"{clip.clip_id}|{clip.playback.value}".encode()).hexdigest()[:12]


def clip_to_mcq(clip: ClipRecord) -> McqItem:
    options = make_options([Playback.FORWARD.value, Playback.BACKWARD.value])
    correct = "A" if clip.playback is Playback.FORWARD else "B"
    question = AOT_QUESTION
    if clip.motion_summary:
        question = f"Clip content: {clip.motion_summary}\n\n{AOT_QUESTION}"
    return McqItem(
        id=f"aot-{clip.clip_id}-{clip.playback.value}",
        source=Source.AOT,
        media_ref=f"clip://{clip.clip_id}/{_media_digest(clip)}",
        question=question,
        options=options,
        correct_label=correct,
    )


def gen_aot_mcqs(clips: Sequence[ClipRecord], rng: SeededRng) -> list[McqItem]:
    """One binary forward/backward question per clip, label counts balanced within one."""
    if not clips:
        raise ValueError("no clips")
    return [clip_to_mcq(c) for c in balance_playback(clips, rng)]
