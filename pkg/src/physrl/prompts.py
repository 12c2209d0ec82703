"""Rendering MCQ items into chat prompts, and reading them back."""
from __future__ import annotations

import re
from typing import Optional

from .dataset import McqItem, Option

INSTRUCTION = (
    "Think it through inside <think></think>, then give only the letter of your "
    "choice inside <answer></answer>."
)

_OPTION_LINE = re.compile(r"^([A-F]): (.*)$")


def render_prompt(item: McqItem) -> str:
    opts = "\n".join(f"{o.label}: {o.text}" for o in item.options)
    return f"Media: {item.media_ref}\n\n{item.question}\n\nOptions:\n{opts}\n\n{INSTRUCTION}"


def render_messages(item: McqItem, system: Optional[str] = None) -> list[dict[str, str]]:
    msgs = []
    if system:
        msgs.append({"role": "system", "content": system})
    msgs.append({"role": "user", "content": render_prompt(item)})
    return msgs


def prompt_key(item: McqItem) -> str:
    """Identity of the posed question, independent of option order."""
    return f"{item.media_ref}\n{item.question}"


def parse_prompt(text: str) -> tuple[str, list[Option]]:
    """Inverse of :func:`render_prompt`: ``(prompt_key, options)``."""
    head, sep, tail = text.rpartition("\n\nOptions:\n")
    if not sep or not head.startswith("Media: "):
        raise ValueError("not a rendered MCQ prompt")
    media, _, question = head[len("Media: "):].partition("\n\n")
    options = []
    for line in tail.split("\n"):
        m = _OPTION_LINE.match(line)
        if not m:
            break
        options.append(Option(m.group(1), m.group(2)))
    return f"{media}\n{question}", options
