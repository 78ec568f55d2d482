"""Synthetic interaction generation from labeled demonstration segments.

Given an episode's skill segments, imagine the user prompt that could have
led to each skill, plus the robot's spoken reply: a template bank keyed by
(task, scenario type) fills slots from the segment's scene and skill label,
conditioned on the episode's prior skills so no record contradicts what
already happened. Also houses the segmentation utilities that recover
movement-primitive segments from raw action traces.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from . import grammar
from .domain import (
    Episode,
    Frame,
    SceneState,
    Segment,
    SkillCommand,
    SyntheticInteraction,
    RESPONSE_TYPES,
    SCENARIO_TYPES,
    stable_seed,
)
from .reasoner import default_goal, parse_goal
from .simenv import TaskCatalog, apply_skill_effect, goal_pending, load_task

# Movement-primitive extraction constants: a window qualifies when one action
# dimension's cumulative displacement exceeds the threshold and dominates all
# others by the ratio, with gripper dimensions untouched throughout.
DISPLACEMENT_THRESHOLD = 0.5
DOMINANCE_RATIO = 3.0
_EPS = 1e-9

# dim -> (arm, axis); positive lateral reads "to the right", positive vertical
# reads "higher".
PRIMITIVE_AXES = {
    "ur5e": ({0: (None, "lateral"), 2: (None, "vertical")}, frozenset({6})),
    "bimanual_arx": (
        {0: ("left", "lateral"), 2: ("left", "vertical"), 7: ("right", "lateral"), 9: ("right", "vertical")},
        frozenset({6, 13}),
    ),
    "mobile_arx": (
        {0: ("left", "lateral"), 2: ("left", "vertical"), 7: ("right", "lateral"), 9: ("right", "vertical")},
        frozenset({6, 13}),
    ),
}

RESPONSE_DISTRIBUTION = (
    ("simple_confirmation", 0.5),
    ("clarification", 0.2),
    ("error_handling", 0.1),
    ("none", 0.2),
)


class NoTemplate(ValueError):
    def __init__(self, task: str, scenario: str):
        self.task = task
        self.scenario = scenario
        super().__init__(f"no template for ({task}, {scenario})")


def _primitive_phrase(arm: Optional[str], axis: str, positive: bool) -> str:
    if axis == "lateral":
        direction = "right" if positive else "left"
    else:
        direction = "higher" if positive else "lower"
    return grammar.render_command(SkillCommand(kind="move", direction=direction, arm=arm))


def extract_motion_primitives(episode: Episode) -> list[Segment]:
    """Recover single-axis movement windows from raw action traces.

    Actions are per-step displacement commands; a maximal run of motion frames
    becomes a segment when one mapped dimension's cumulative displacement
    clears the threshold and dominates every other dimension 3:1, with the
    gripper dimensions quiet.
    """
    catalog = TaskCatalog.for_task(episode.task)
    axes, gripper_dims = PRIMITIVE_AXES[catalog.profile.name]
    actions = [f.action for f in episode.frames]
    if not actions:
        return []
    dim = len(actions[0])

    def moving(a: Sequence[float]) -> bool:
        return any(abs(a[d]) > _EPS for d in range(dim) if d not in gripper_dims)

    segments: list[Segment] = []
    i = 0
    while i < len(actions):
        if not moving(actions[i]):
            i += 1
            continue
        j = i
        while j + 1 < len(actions) and moving(actions[j + 1]):
            j += 1
        window = actions[i : j + 1]
        if not any(abs(a[g]) > _EPS for a in window for g in gripper_dims):
            cum = [sum(a[d] for a in window) for d in range(dim)]
            ranked = sorted(
                (d for d in range(dim) if d not in gripper_dims),
                key=lambda d: abs(cum[d]),
                reverse=True,
            )
            dominant = ranked[0]
            runner_up = abs(cum[ranked[1]]) if len(ranked) > 1 else 0.0
            if (
                abs(cum[dominant]) >= DISPLACEMENT_THRESHOLD
                and abs(cum[dominant]) >= DOMINANCE_RATIO * runner_up
                and dominant in axes
            ):
                arm, axis = axes[dominant]
                segments.append(Segment(i, j, _primitive_phrase(arm, axis, cum[dominant] > 0)))
        i = j + 1
    return segments


@dataclass(frozen=True)
class SegmentContext:
    """Everything the generator may condition on for one labeled segment."""

    episode_id: str
    task: str
    frame_index: int
    scene: SceneState
    prior_skills: tuple[str, ...]
    skill_label: str


def _skill_item(label: str) -> Optional[str]:
    try:
        cmd = grammar.parse_command(label)
    except grammar.OutOfGrammar:
        return None
    return cmd.object_phrase


def _prior_items(prior_skills: Iterable[str]) -> set[str]:
    items = set()
    for label in prior_skills:
        item = _skill_item(label)
        if item:
            items.add(item)
    return items


def _scene_item_names(scene: SceneState) -> list[str]:
    seen = []
    for obj in sorted(scene.objects, key=lambda o: o.id):
        name = obj.display_name.lower()
        if name not in seen:
            seen.append(name)
    return seen


def _item_attrs(scene: SceneState, name: str) -> frozenset[str]:
    for obj in scene.objects:
        if obj.display_name.lower() == name:
            return obj.attributes
    return frozenset()


def _avoid_candidates(ctx: SegmentContext) -> list[str]:
    item = _skill_item(ctx.skill_label)
    blocked = {item} | _prior_items(ctx.prior_skills) | {"bread"}
    return [n for n in _scene_item_names(ctx.scene) if n not in blocked]


def _constraint_candidates(ctx: SegmentContext) -> list[tuple[str, str, str]]:
    """(prompt, confirmation, tag) choices consistent with skill and priors."""
    item = _skill_item(ctx.skill_label)
    involved = ({item} if item else set()) | _prior_items(ctx.prior_skills)
    involved_attrs = frozenset().union(*(_item_attrs(ctx.scene, n) for n in involved)) if involved else frozenset()
    out: list[tuple[str, str, str]] = []
    if ctx.task == "sandwich_making":
        base = _sandwich_request(ctx)
        pinned = "with" in base
        if "dairy" not in involved_attrs:
            prompt = (
                f"{base} I'm lactose intolerant"
                if pinned
                else "Can you make a sandwich for me? I'm lactose intolerant"
            )
            out.append((prompt, "Sure, I won't put cheese on it.", "lactose"))
        if "meat" not in involved_attrs:
            prompt = (
                f"{base} Vegetarian please."
                if pinned
                else "Can you make me a vegetarian sandwich?"
            )
            out.append((prompt, "Sure, a vegetarian sandwich.", "vegetarian"))
        for avoid in _avoid_candidates(ctx):
            out.append(
                (
                    f"{base} I'm allergic to {avoid}",
                    f"Sure, no {avoid}.",
                    f"allergy:{avoid}",
                )
            )
    elif ctx.task == "grocery_shopping":
        if item:
            for attr in ("sweet", "salty"):
                if attr not in involved_attrs:
                    out.append(
                        (
                            f"Can you get me some {item}? Nothing {attr} though.",
                            f"Sure, nothing {attr}.",
                            f"no-{attr}",
                        )
                    )
    return out


def _stacked_ingredients(scene: SceneState) -> list[str]:
    """Non-bread ingredient names already on the stack, bottom to top."""
    out = []
    for obj in scene.in_container("sandwich_stack"):
        name = obj.display_name.lower()
        if name != "bread" and name not in out:
            out.append(name)
    return out


def _listing(names: Sequence[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _sandwich_request(ctx: SegmentContext) -> str:
    """The base sandwich request consistent with this segment's scene.

    A bread pick over a non-empty stack is the closing slice: the implied
    order must list exactly the stacked ingredients, or a judge would expect
    more filling first.
    """
    item = _skill_item(ctx.skill_label)
    stacked = _stacked_ingredients(ctx.scene)
    if item == "bread" and stacked:
        return f"Can you make me a sandwich with {_listing(stacked)}?"
    return "Can you make me a sandwich?"


def _direct_request_candidates(ctx: SegmentContext) -> list[tuple[str, str]]:
    item = _skill_item(ctx.skill_label)
    if item is None:
        return []
    if ctx.task == "sandwich_making":
        if item == "bread":
            return [(_sandwich_request(ctx), "Sure, one sandwich coming up.")]
        return [
            (f"Can you add some {item} for me?", f"Sure, adding {item}."),
            (f"Could you put some {item} on my sandwich?", f"Sure, {item} it is."),
        ]
    if ctx.task == "grocery_shopping":
        out = [
            (f"Can you get me some {item}?", f"Sure, getting {item}."),
            (f"Hey robot, can you grab me some {item}?", f"On it, one {item}."),
        ]
        attrs = _item_attrs(ctx.scene, item)
        # Attribute-level requests only make sense while nothing matching has
        # been fetched yet: one sweet thing in the basket fills the request.
        fetched = frozenset().union(
            *(
                o.attributes
                for o in ctx.scene.objects
                if o.location.kind != "surface"
            ),
            frozenset(),
        )
        if "sweet" in attrs and "sweet" not in fetched:
            out.append(("Can you get me something sweet?", f"Sure, how about {item}?"))
        if "drink" in attrs and "drink" not in fetched:
            out.append(("Can you grab me something to drink?", f"Sure, a {item}."))
        return out
    # table bussing: a bare atomic request
    return [(f"pick up the {item}", f"Sure, picking up the {item}.")]


def _negative_candidates(ctx: SegmentContext) -> list[tuple[str, str]]:
    item = _skill_item(ctx.skill_label)
    if ctx.task == "table_bussing":
        if item is None:
            return []
        attrs_class = None
        for obj in ctx.scene.objects:
            name = obj.display_name.lower()
            if name == item or name.endswith(" " + item):
                attrs_class = obj.object_class
                break
        if attrs_class == "trash":
            return [
                (
                    "can you clean up only the trash, but not dishes?",
                    "Sure, just the trash.",
                )
            ]
        if attrs_class in ("dish", "utensil"):
            return [
                (
                    "can you clean up only the dishes, but not trash?",
                    "Sure, just the dishes.",
                )
            ]
        return []
    avoid = _avoid_candidates(ctx)
    if not avoid or item is None:
        return []
    out = []
    for a in avoid:
        if ctx.task == "sandwich_making":
            base = _sandwich_request(ctx)
            if "with" in base:
                out.append((f"{base} No {a} please.", f"Sure, no {a}."))
            else:
                out.append((f"Can you make me a sandwich without {a}?", f"Sure, no {a}."))
        else:
            out.append((f"No {a} please, just get me some {item}.", f"Okay, no {a}."))
    return out


def _correction_candidates(ctx: SegmentContext) -> list[tuple[str, str]]:
    item = _skill_item(ctx.skill_label)
    if item is None or item == "bread":
        return []
    priors = sorted(_prior_items(ctx.prior_skills) - {item, "bread"})
    if not priors:
        return []
    out = []
    for prior in priors:
        if ctx.task == "sandwich_making":
            out.append(
                (
                    f"Can you make me a sandwich with {item} instead of {prior}?",
                    f"Okay, {item} instead of {prior}.",
                )
            )
        elif ctx.task == "grocery_shopping":
            out.append(
                (
                    f"Actually, get me some {item} instead of {prior}.",
                    f"Okay, swapping {prior} for {item}.",
                )
            )
    return out


def _candidates(ctx: SegmentContext, scenario: str) -> list[tuple[str, str]]:
    if scenario == "direct_request":
        return _direct_request_candidates(ctx)
    if scenario == "negative_task":
        return _negative_candidates(ctx)
    if scenario == "specific_constraint":
        return [(p, c) for p, c, _ in _constraint_candidates(ctx)]
    if scenario == "situated_correction":
        return _correction_candidates(ctx)
    return []


def applicable_scenarios(ctx: SegmentContext, scenarios: Sequence[str] = SCENARIO_TYPES) -> list[str]:
    return [s for s in scenarios if _candidates(ctx, s)]


def _draw_response(rng: random.Random) -> str:
    roll = rng.random()
    acc = 0.0
    for name, p in RESPONSE_DISTRIBUTION:
        acc += p
        if roll < acc:
            return name
    return "none"


def generate_interaction(
    ctx: SegmentContext, scenario: str, rng: random.Random
) -> SyntheticInteraction:
    """Produce one (user prompt, robot utterance) pair for a labeled segment."""
    if scenario not in SCENARIO_TYPES:
        raise NoTemplate(ctx.task, scenario)
    options = _candidates(ctx, scenario)
    if not options:
        raise NoTemplate(ctx.task, scenario)
    prompt, confirmation = options[rng.randrange(len(options))]
    response_type = _draw_response(rng)
    item = _skill_item(ctx.skill_label) or "that"
    if response_type == "simple_confirmation":
        utterance: Optional[str] = confirmation
    elif response_type == "clarification":
        utterance = f"Just to check, you want the {item}?"
    elif response_type == "error_handling":
        utterance = f"The {item} is tricky to grab, give me a second."
    else:
        utterance = None
    return SyntheticInteraction(
        episode_id=ctx.episode_id,
        frame_index=ctx.frame_index,
        prior_skills=ctx.prior_skills,
        skill_label=ctx.skill_label,
        scenario_type=scenario,
        user_prompt=prompt,
        robot_utterance=utterance,
        response_type=response_type,
    )


def segment_contexts(episode: Episode) -> list[SegmentContext]:
    contexts = []
    priors: list[str] = []
    for seg in episode.segments:
        contexts.append(
            SegmentContext(
                episode_id=episode.id,
                task=episode.task,
                frame_index=seg.start_frame,
                scene=episode.frames[seg.start_frame].scene,
                prior_skills=tuple(priors),
                skill_label=seg.label,
            )
        )
        priors.append(seg.label)
    return contexts


def build_dataset(
    episodes: Sequence[Episode],
    per_segment: int = 3,
    seed: int = 0,
    scenarios: Sequence[str] = SCENARIO_TYPES,
    out_path: Optional[str] = None,
) -> list[SyntheticInteraction]:
    """Generate ``per_segment`` interactions for every labeled segment.

    Deterministic under ``seed``; scenario types are sampled uniformly over
    those with applicable templates for each segment. Every record passes
    :func:`validate_interaction` by construction (asserted).
    """
    rng = random.Random(seed)
    records: list[SyntheticInteraction] = []
    for episode in episodes:
        catalog = TaskCatalog.for_task(episode.task)
        for ctx in segment_contexts(episode):
            available = applicable_scenarios(ctx, scenarios)
            if not available:
                continue
            for _ in range(per_segment):
                scenario = available[rng.randrange(len(available))]
                record = generate_interaction(ctx, scenario, rng)
                problems = validate_interaction(record, ctx.scene, catalog)
                if problems:
                    raise AssertionError(f"generator produced invalid record: {problems}")
                records.append(record)
    if out_path is not None:
        with open(out_path, "w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return records


def load_dataset(path: str) -> list[SyntheticInteraction]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SyntheticInteraction.from_dict(json.loads(line)))
    return records


def validate_interaction(
    record: SyntheticInteraction,
    scene: Optional[SceneState] = None,
    catalog: Optional[TaskCatalog] = None,
) -> list[str]:
    """Quality gate: taxonomy membership, grounding, and prior-skill consistency."""
    violations: list[str] = []
    if record.scenario_type not in SCENARIO_TYPES:
        violations.append(f"unknown scenario_type: {record.scenario_type}")
    if record.response_type not in RESPONSE_TYPES:
        violations.append(f"unknown response_type: {record.response_type}")
    if record.response_type == "none" and record.robot_utterance is not None:
        violations.append("response_type 'none' with an utterance")
    if record.response_type != "none" and not record.robot_utterance:
        violations.append(f"response_type {record.response_type} without an utterance")
    if not grammar.parses(record.skill_label):
        violations.append(f"skill label out of grammar: {record.skill_label!r}")

    def catalog_names(cat: TaskCatalog) -> set[str]:
        names: set[str] = set()
        params = cat.params
        for key in ("base_objects", "shelf_items", "ingredient_types"):
            for spec in params.get(key, []):
                names.add(spec["display_name"].lower())
        for pool in params.get("pools", {}).values():
            for spec in pool:
                names.add(spec["display_name"].lower())
        if "bread" in params:
            names.add("bread")
        return names

    all_catalogs = [
        TaskCatalog.for_task(t)
        for t in ("table_bussing", "sandwich_making", "grocery_shopping")
    ]
    scan_vocabulary = set().union(*(catalog_names(c) for c in all_catalogs))
    valid_names = catalog_names(catalog) if catalog is not None else set(scan_vocabulary)
    if scene is not None:
        valid_names |= set(_scene_item_names(scene))

    prompt_l = record.user_prompt.lower()
    for name in sorted(scan_vocabulary):
        if _mentions(prompt_l, name) and name not in valid_names:
            violations.append(f"prompt names an object outside the scene and catalog: {name}")
    if scene is not None:
        item = _skill_item(record.skill_label)
        if item is not None:
            grounded = any(
                o.display_name.lower() == item
                or o.display_name.lower().endswith(" " + item)
                or o.object_class == item
                for o in scene.objects
            )
            if not grounded:
                violations.append(f"skill target not in scene: {item}")

    # Prior-skill consistency: the prompt's constraints must not contradict
    # the skill it supposedly led to, nor (diet-wise) the episode so far. A
    # situated correction legitimately excludes a prior item by name; that is
    # the revision being expressed, not an inconsistency.
    if catalog is not None:
        goal = parse_goal(record.user_prompt, catalog)
        item = _skill_item(record.skill_label)
        excluded_names = {n.lower() for n in (goal.exclude.names or frozenset())}
        if item and item in excluded_names:
            violations.append(f"prompt excludes the skill's own target: {item}")
        if record.scenario_type != "situated_correction":
            for name in _prior_items(record.prior_skills):
                if name in excluded_names:
                    violations.append(f"prompt excludes {name} already used by the episode")
        involved = _prior_items(record.prior_skills)
        if item:
            involved.add(item)
        for name in involved:
            attrs = _item_attrs(scene, name) if scene is not None else frozenset()
            if attrs & goal.forbidden_attributes:
                violations.append(f"prompt forbids attributes of {name}")
    return violations


def _mentions(text: str, name: str) -> bool:
    import re

    return re.search(rf"\b{re.escape(name)}s?\b", text) is not None


# ---------------------------------------------------------------------------
# bundled demonstration episodes
# ---------------------------------------------------------------------------


def demo_episodes(task: str, count: int = 10, seed: int = 0) -> list[Episode]:
    """Deterministic pick/place demonstration episodes with skill segments.

    Each episode plays a goal to completion (a random ingredient subset for
    sandwiches, a random shopping list for groceries) and records one frame at
    each segment boundary, so every segment's start frame carries the scene
    the skill was decided in.
    """
    catalog = TaskCatalog.for_task(task)
    episodes = []
    for index in range(count):
        rng = random.Random(stable_seed(seed, task, index))
        scene, robot, goal = load_task(task, seed * 1000 + index)
        goal = _demo_goal(task, scene, rng, catalog)
        frames: list[Frame] = []
        segments: list[Segment] = []
        t = 0.0
        zero = tuple(0.0 for _ in range(catalog.profile.action_dim))
        safety = 0
        while safety < 100:
            safety += 1
            pending = goal_pending(scene, goal)
            if pending.to_place:
                obj, dest = pending.to_place[0]
                phrase = grammar.lexicon_phrase(obj.display_name.lower()) or obj.display_name.lower()
                cmd = SkillCommand(kind="place", object_phrase=phrase, destination=dest)
                resolved = obj.id
            elif pending.to_pick:
                obj = pending.to_pick[0]
                phrase = grammar.lexicon_phrase(obj.display_name.lower()) or obj.display_name.lower()
                cmd = SkillCommand(kind="pick", object_phrase=phrase)
                resolved = obj.id
            else:
                break
            start = len(frames)
            frames.append(Frame(t, scene, robot, zero))
            t += 0.5
            scene = apply_skill_effect(scene, cmd, "success", catalog.profile, resolved).with_time(t)
            segments.append(Segment(start, start, grammar.render_command(cmd)))
        frames.append(Frame(t, scene, robot, zero))
        episodes.append(
            Episode(
                id=f"{task}_demo_{index:03d}",
                task=task,
                frames=tuple(frames),
                segments=tuple(segments),
                goal_annotation=_demo_annotation(task),
            )
        )
    return episodes


def _demo_goal(task, scene, rng, catalog):
    goal = default_goal(catalog)
    if task == "sandwich_making":
        types = [s["display_name"].lower() for s in catalog.params["ingredient_types"]]
        chosen = rng.sample(types, rng.randint(2, 4))
        required = {"bread": 2}
        for name in chosen:
            required[name] = 1
        return type(goal)(
            destination_map=goal.destination_map,
            required_items=required,
        )
    if task == "grocery_shopping":
        names = sorted({o.display_name.lower() for o in scene.objects})
        chosen = rng.sample(names, min(rng.randint(2, 3), len(names)))
        return type(goal)(
            destination_map=goal.destination_map,
            required_items={name: 1 for name in chosen},
        )
    return goal


def _demo_annotation(task: str) -> str:
    return {
        "table_bussing": "clean up the table",
        "sandwich_making": "make a sandwich",
        "grocery_shopping": "collect the shopping order",
    }[task]


def save_episodes(episodes: Sequence[Episode], path: str) -> None:
    with open(path, "w") as fh:
        for episode in episodes:
            fh.write(json.dumps(episode.to_dict(), sort_keys=True) + "\n")


def load_episodes(path: str) -> list[Episode]:
    episodes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                episodes.append(Episode.from_dict(json.loads(line)))
    return episodes
