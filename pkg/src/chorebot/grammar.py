"""Closed command grammar: parse skill text to commands and render them back.

The vocabulary, synonym table, and noun lexicon live in ``data/grammar.json``
so the set of accepted phrasings is inspectable and extensible without code
changes. Anything outside the grammar raises :class:`OutOfGrammar` -- a
deliberate hard failure so that a high-level backend emitting unusable
commands is observable instead of silently coerced.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Any, Optional

from .domain import SkillCommand


class OutOfGrammar(ValueError):
    """Raised when text cannot be parsed against the closed grammar."""

    def __init__(self, text: str, reason: str = "no pattern matched"):
        self.text = text
        self.reason = reason
        super().__init__(f"out of grammar: {text!r} ({reason})")


@lru_cache(maxsize=1)
def _spec() -> dict[str, Any]:
    raw = resources.files("chorebot.data").joinpath("grammar.json").read_text()
    return json.loads(raw)


def skill_list() -> list[str]:
    """All bundled skill strings (the closed vocabulary the executor was 'trained' on)."""
    return list(_spec()["skill_list"])


def object_lexicon() -> frozenset[str]:
    return frozenset(_spec()["object_lexicon"])


def normalize(text: str) -> str:
    text = text.lower().strip()
    text = re.sub(r"[.,!?\"“”]", "", text)
    text = re.sub(r"\s+", " ", text)
    return text


def _strip_articles(phrase: str) -> str:
    spec = _spec()
    words = phrase.split()
    while words and words[0] in spec["articles"]:
        words = words[1:]
    phrase = " ".join(words)
    for prefix in spec["measure_prefixes"]:
        if phrase.startswith(prefix + " "):
            phrase = phrase[len(prefix) + 1 :]
            phrase = _strip_articles(phrase)
            break
    return phrase


def lexicon_phrase(phrase: str) -> Optional[str]:
    """Normalize an object noun phrase against the closed lexicon (plural-tolerant)."""
    phrase = _strip_articles(phrase.strip().lower())
    lexicon = object_lexicon()
    if phrase in lexicon:
        return phrase
    if phrase.endswith("s") and phrase[:-1] in lexicon:
        return phrase[:-1]
    return None


def _destination(phrase: str) -> Optional[str]:
    phrase = _strip_articles(phrase.strip())
    return _spec()["destinations"].get(phrase)


_ARM_MOVE = re.compile(
    r"^move the (?P<arm>left|right) arm"
    r"(?: to the (?P<lateral>left|right)| (?P<vertical>higher|lower)"
    r"| (?P<toward>towards? me)| (?P<away>away from me))$"
)

_PLACE_BACK = re.compile(
    r"^(?:put|place) (?P<obj>.+?) back(?: down| on(?: the)? (?P<dest>.+))?$"
)

_PLACE = re.compile(
    r"^(?:put|place|drop) (?P<obj>.+?) (?:in|into|to|on|onto) (?P<dest>.+)$"
)

_PLACE_IT = re.compile(r"^(?:put|place|drop) it (?:in|into|to|on|onto) (?P<dest>.+)$")

_PICK = re.compile(r"^(?:pick up|grasp|grab) (?P<obj>.+)$")


def parse_command(text: str) -> SkillCommand:
    """Parse one atomic command; raises :class:`OutOfGrammar` otherwise."""
    norm = normalize(text)
    if not norm:
        raise OutOfGrammar(text, "empty")
    spec = _spec()

    fixed = spec["fixed_phrases"].get(norm)
    if fixed is not None:
        return SkillCommand(raw_text=text, **fixed)

    m = _ARM_MOVE.match(norm)
    if m:
        if m.group("lateral"):
            direction = m.group("lateral")
        elif m.group("vertical"):
            direction = m.group("vertical")
        elif m.group("toward"):
            direction = "toward_user"
        else:
            direction = "away_from_user"
        return SkillCommand(kind="move", direction=direction, arm=m.group("arm"), raw_text=text)

    m = _PICK.match(norm)
    if m:
        phrase = lexicon_phrase(m.group("obj"))
        if phrase is None:
            raise OutOfGrammar(text, f"unknown object {m.group('obj')!r}")
        return SkillCommand(kind="pick", object_phrase=phrase, raw_text=text)

    m = _PLACE_BACK.match(norm)
    if m and " back" in norm:
        phrase = lexicon_phrase(m.group("obj"))
        if phrase is None:
            raise OutOfGrammar(text, f"unknown object {m.group('obj')!r}")
        dest = _destination(m.group("dest")) if m.group("dest") else "table"
        if dest is None:
            raise OutOfGrammar(text, f"unknown destination {m.group('dest')!r}")
        return SkillCommand(kind="place", object_phrase=phrase, destination=dest, raw_text=text)

    m = _PLACE_IT.match(norm)
    if m:
        dest = _destination(m.group("dest"))
        if dest is None:
            raise OutOfGrammar(text, f"unknown destination {m.group('dest')!r}")
        return SkillCommand(kind="place", destination=dest, raw_text=text)

    m = _PLACE.match(norm)
    if m:
        phrase = lexicon_phrase(m.group("obj"))
        dest = _destination(m.group("dest"))
        if phrase is None:
            raise OutOfGrammar(text, f"unknown object {m.group('obj')!r}")
        if dest is None:
            raise OutOfGrammar(text, f"unknown destination {m.group('dest')!r}")
        return SkillCommand(kind="place", object_phrase=phrase, destination=dest, raw_text=text)

    raise OutOfGrammar(text)


def render_command(cmd: SkillCommand) -> str:
    """Canonical surface form; ``parse_command(render_command(c)) == c``."""
    spec = _spec()
    if cmd.kind == "home":
        return "go back to home position"
    if cmd.kind == "done":
        return "done"
    if cmd.kind == "rotate":
        return "rotate clockwise" if cmd.rotation == "cw" else "rotate counterclockwise"
    if cmd.kind == "gripper":
        return f"{cmd.gripper_action} gripper"
    if cmd.kind == "move":
        if cmd.arm:
            if cmd.direction in ("left", "right"):
                return f"move the {cmd.arm} arm to the {cmd.direction}"
            if cmd.direction in ("higher", "lower"):
                return f"move the {cmd.arm} arm {cmd.direction}"
            if cmd.direction == "toward_user":
                return f"move the {cmd.arm} arm towards me"
            return f"move the {cmd.arm} arm away from me"
        if cmd.direction in ("left", "right"):
            return f"move to the {cmd.direction}"
        if cmd.direction in ("higher", "lower"):
            return f"go {cmd.direction}"
        if cmd.direction == "toward_user":
            return "move towards me"
        return "move away from me"
    if cmd.kind == "pick":
        return f"pick up the {cmd.object_phrase}"
    if cmd.kind == "place":
        dest = cmd.destination or "bussing_bin"
        if dest in spec["surfaces"]:
            return f"put {cmd.object_phrase} back on the {dest}"
        phrase = spec["destination_phrases"].get(dest, dest)
        if cmd.object_phrase is None:
            if dest == "trash_bin":
                return "throw it in the trash"
            return f"place it to {phrase}"
        if dest == "sandwich_stack":
            return f"place {cmd.object_phrase} on the sandwich"
        return f"place {cmd.object_phrase} to {phrase}"
    raise ValueError(f"unrenderable command kind: {cmd.kind!r}")


def parses(text: str) -> bool:
    try:
        parse_command(text)
        return True
    except OutOfGrammar:
        return False
