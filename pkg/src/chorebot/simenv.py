"""Deterministic symbolic simulators for the three household task domains.

Scenes are drawn from per-task catalogs (``data/tasks.json``, overridable via
``load_catalog_file``), skill effects are discrete object moves, and goal
satisfaction is a pure predicate over the scene. Everything is a function of
(seed, inputs); there is no hidden state.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Optional

from .domain import (
    Fixtures,
    GoalSpec,
    Location,
    ObjectFilter,
    RobotProfile,
    RobotState,
    SceneObject,
    SceneState,
    SkillCommand,
    required_key_for,
)

TASKS = ("table_bussing", "sandwich_making", "grocery_shopping")


class UnknownTask(ValueError):
    pass


class EffectError(ValueError):
    """A skill effect could not be applied (occupied gripper, bad destination, ...)."""


@dataclass(frozen=True)
class TaskCatalog:
    """Per-task fixture names, object pools, and default routing."""

    task: str
    profile: RobotProfile
    fixtures: Fixtures
    primary_surface: str
    destination_map: Mapping[str, str]
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def for_task(cls, task: str) -> "TaskCatalog":
        return _bundled_catalogs()[_checked_task(task)]


def _checked_task(task: str) -> str:
    if task not in TASKS:
        raise UnknownTask(f"unknown task: {task!r}")
    return task


def _catalog_from_config(task: str, cfg: Mapping[str, Any]) -> TaskCatalog:
    return TaskCatalog(
        task=task,
        profile=RobotProfile.by_name(cfg["profile"]),
        fixtures=Fixtures(
            tuple(cfg["fixtures"]["surfaces"]), tuple(cfg["fixtures"]["containers"])
        ),
        primary_surface=cfg["primary_surface"],
        destination_map=dict(cfg["destination_map"]),
        params=cfg,
    )


def load_catalog_file(path: str) -> dict[str, TaskCatalog]:
    """Load task catalogs from a JSON config file (same schema as the bundled one)."""
    with open(path) as fh:
        raw = json.load(fh)
    return {task: _catalog_from_config(task, cfg) for task, cfg in raw.items()}


_CATALOG_CACHE: dict[str, TaskCatalog] = {}


def _bundled_catalogs() -> dict[str, TaskCatalog]:
    if not _CATALOG_CACHE:
        raw = json.loads(resources.files("chorebot.data").joinpath("tasks.json").read_text())
        for task, cfg in raw.items():
            _CATALOG_CACHE[task] = _catalog_from_config(task, cfg)
    return _CATALOG_CACHE


def _make_object(index: int, spec: Mapping[str, Any], location: Location) -> SceneObject:
    return SceneObject(
        id=f"obj_{index:02d}",
        display_name=spec["display_name"],
        object_class=spec["object_class"],
        attributes=frozenset(spec["attributes"]),
        color_tags=frozenset(spec["color_tags"]),
        location=location,
    )


def load_task(
    task: str, seed: int, catalog: Optional[TaskCatalog] = None
) -> tuple[SceneState, RobotState, GoalSpec]:
    """Draw a deterministic scene for ``task`` from ``seed``.

    Returns the scene, the robot at its home configuration, and the task's
    default goal (the unconstrained behavior a bare prompt falls back to).
    A catalog from :func:`load_catalog_file` may replace the bundled one.
    """
    if catalog is None:
        catalog = TaskCatalog.for_task(task)
    else:
        _checked_task(task)
    rng = random.Random(seed)
    params = catalog.params
    surface = Location.surface(catalog.primary_surface)
    objects: list[SceneObject] = []

    if task == "table_bussing":
        for spec in params["base_objects"]:
            objects.append(_make_object(len(objects), spec, surface))
        lo, hi = params["extras_per_side"]
        k = rng.randint(lo, hi)
        for pool_name in ("trash", "dishware"):
            pool = params["pools"][pool_name]
            for spec in rng.sample(pool, k):
                objects.append(_make_object(len(objects), spec, surface))
        goal = GoalSpec(
            destination_map=catalog.destination_map,
            include=ObjectFilter(classes=frozenset({"trash", "dish", "utensil"})),
        )
    elif task == "sandwich_making":
        bread = params["bread"]
        for _ in range(bread["count"]):
            objects.append(_make_object(len(objects), bread, surface))
        lo, hi = params["pieces_per_type"]
        required: dict[str, int] = {"bread": 2}
        for spec in params["ingredient_types"]:
            for _ in range(rng.randint(lo, hi)):
                objects.append(_make_object(len(objects), spec, surface))
            required[spec["display_name"].lower()] = 1
        goal = GoalSpec(destination_map=catalog.destination_map, required_items=required)
    elif task == "grocery_shopping":
        lo, hi = params["items_per_type"]
        for spec in params["shelf_items"]:
            for _ in range(rng.randint(lo, hi)):
                objects.append(_make_object(len(objects), spec, surface))
        goal = GoalSpec(
            destination_map=catalog.destination_map,
            include=ObjectFilter(classes=frozenset({"grocery"})),
        )
    else:
        raise UnknownTask(f"unknown task: {task!r}")

    scene = SceneState(tuple(objects), catalog.fixtures, 0.0)
    robot = RobotState.home(catalog.profile)
    return scene, robot, goal


class ObjectNotFound(LookupError):
    def __init__(self, phrase: str):
        self.phrase = phrase
        super().__init__(f"no object matches {phrase!r}")


def match_object(
    scene: SceneState,
    phrase: str,
    location_kinds: Optional[tuple[str, ...]] = None,
) -> SceneObject:
    """Ground a noun phrase in the scene.

    Matching order: exact display name, head-noun suffix ("container" matches
    "food container"), then object-class noun ("trash"). Ties break to the
    smallest id, so resolution is total and deterministic. ``location_kinds``
    restricts candidates (e.g. only surface objects are pickable).
    """
    phrase_l = phrase.lower().strip()
    candidates = [
        o
        for o in scene.objects
        if location_kinds is None or o.location.kind in location_kinds
    ]
    candidates.sort(key=lambda o: o.id)
    for obj in candidates:
        if obj.display_name.lower() == phrase_l:
            return obj
    for obj in candidates:
        if obj.display_name.lower().endswith(" " + phrase_l):
            return obj
    for obj in candidates:
        if obj.object_class == phrase_l:
            return obj
    raise ObjectNotFound(phrase)


def _free_arm(scene: SceneState, profile: RobotProfile) -> Optional[str]:
    arms = ("single",) if profile.name == "ur5e" else ("left", "right")
    held = scene.held_ids()
    for arm in arms:
        if arm not in held:
            return arm
    return None


def apply_skill_effect(
    scene: SceneState,
    command: SkillCommand,
    outcome: str,
    profile: Optional[RobotProfile] = None,
    resolved_object_id: Optional[str] = None,
) -> SceneState:
    """Apply a completed skill's discrete effect; failure leaves the scene unchanged."""
    if outcome == "failure":
        return scene
    if command.kind == "pick":
        if profile is None:
            profile = RobotProfile.by_name("ur5e")
        arm = _free_arm(scene, profile)
        if arm is None:
            raise EffectError("gripper occupied")
        if resolved_object_id is not None:
            obj = scene.object_by_id(resolved_object_id)
        else:
            obj = match_object(scene, command.object_phrase or "", ("surface", "container"))
        return scene.with_object_moved(obj.id, Location.gripper(arm))
    if command.kind == "place":
        held = scene.held_ids()
        if not held:
            raise EffectError("gripper empty")
        if resolved_object_id is not None and resolved_object_id in held.values():
            object_id = resolved_object_id
        elif command.object_phrase:
            held_objs = sorted(
                (scene.object_by_id(i) for i in held.values()), key=lambda o: o.id
            )
            object_id = None
            phrase = command.object_phrase.lower()
            for obj in held_objs:
                if (
                    obj.display_name.lower() == phrase
                    or obj.display_name.lower().endswith(" " + phrase)
                    or obj.object_class == phrase
                ):
                    object_id = obj.id
                    break
            if object_id is None:
                object_id = held_objs[0].id
        else:
            object_id = held[sorted(held)[0]]
        destination = command.destination or "bussing_bin"
        if destination in scene.fixtures.containers:
            loc = Location.container(destination)
        elif destination in scene.fixtures.surfaces:
            loc = Location.surface(destination)
        else:
            raise EffectError(f"unknown destination: {destination!r}")
        return scene.with_object_moved(object_id, loc)
    # move / rotate / gripper / home / done: no object-level effect
    return scene


@dataclass(frozen=True)
class PendingWork:
    """What the goal still demands of the scene: picks to start, placements to finish."""

    to_pick: tuple[SceneObject, ...]
    to_place: tuple[tuple[SceneObject, str], ...]

    @property
    def done(self) -> bool:
        return not self.to_pick and not self.to_place


def _effective(obj: SceneObject, reclassified: Mapping[str, str]) -> SceneObject:
    new_class = reclassified.get(obj.id)
    if new_class is None:
        return obj
    return SceneObject(obj.id, obj.display_name, new_class, obj.attributes, obj.color_tags, obj.location)


def goal_pending(
    scene: SceneState,
    goal: GoalSpec,
    excluded_ids: frozenset[str] = frozenset(),
    reclassified: Mapping[str, str] = {},
) -> PendingWork:
    """Canonical pending-work computation shared by the reasoner and the judge.

    For required-items goals with a stacked destination (the sandwich), pick
    order is staged: bottom bread, then ingredients, then the top bread.
    """
    objs = sorted((_effective(o, reclassified) for o in scene.objects), key=lambda o: o.id)
    usable = [o for o in objs if o.id not in excluded_ids and not goal.excludes(o)]

    to_place: list[tuple[SceneObject, str]] = []
    for obj in usable:
        if obj.location.kind == "gripper" and goal.includes(obj):
            dest = _destination_for(obj, goal)
            if dest is not None:
                to_place.append((obj, dest))

    if goal.required_items:
        to_pick = _required_to_pick(usable, goal)
    else:
        to_pick = []
        for obj in usable:
            if obj.location.kind != "surface" or not goal.includes(obj):
                continue
            dest = _destination_for(obj, goal)
            if dest is not None:
                to_pick.append(obj)
    if goal.halt:
        to_pick = []
    return PendingWork(tuple(to_pick), tuple(to_place))


def _destination_for(obj: SceneObject, goal: GoalSpec) -> Optional[str]:
    return goal.destination_map.get(obj.object_class)


def _required_to_pick(usable: list[SceneObject], goal: GoalSpec) -> list[SceneObject]:
    """Surface objects that can still satisfy an unfilled required key.

    Every eligible candidate is listed (any of them is an admissible next
    pick); callers wanting a deterministic choice take the first, which is the
    id-smallest since ``usable`` arrives id-sorted.
    """
    remaining = dict(goal.required_items)
    stacked = "sandwich_stack" in goal.destination_map.values()
    # Consume quota for items already placed or in hand.
    for obj in usable:
        if obj.location.kind == "surface":
            continue
        key = required_key_for(obj, remaining)
        if key and remaining.get(key, 0) > 0:
            remaining[key] -= 1
    candidates: list[SceneObject] = []
    for obj in usable:
        if obj.location.kind != "surface":
            continue
        key = required_key_for(obj, remaining)
        if key and remaining.get(key, 0) > 0:
            candidates.append(obj)
    if not stacked:
        return candidates
    # Sandwich staging: bread first, ingredients, then the closing bread.
    breads = [o for o in candidates if o.display_name.lower() == "bread"]
    others = [o for o in candidates if o.display_name.lower() != "bread"]
    stack_started = remaining.get("bread", 0) < goal.required_items.get("bread", 0)
    if not stack_started:
        return breads
    if others:
        return others
    return breads


def goal_satisfied(
    scene: SceneState,
    goal: GoalSpec,
    excluded_ids: frozenset[str] = frozenset(),
    reclassified: Mapping[str, str] = {},
) -> bool:
    """True iff all demanded placements are done and nothing excluded was displaced.

    'Not displaced' is judged as 'still on a surface': every bundled catalog
    starts all objects on surfaces, so any excluded object found in a gripper
    or container was necessarily touched.
    """
    pending = goal_pending(scene, goal, excluded_ids, reclassified)
    if not pending.done:
        return False
    if goal.required_items and not goal.halt:
        if not _stack_valid(scene, goal, excluded_ids, reclassified):
            return False
    for obj in scene.objects:
        eff = _effective(obj, reclassified)
        if (obj.id in excluded_ids or goal.excludes(eff)) and obj.location.kind != "surface":
            return False
    return True


def _stack_valid(
    scene: SceneState,
    goal: GoalSpec,
    excluded_ids: frozenset[str],
    reclassified: Mapping[str, str],
) -> bool:
    if "sandwich_stack" not in goal.destination_map.values():
        return True
    stack = scene.in_container("sandwich_stack")
    if not stack:
        return not goal.required_items
    if stack[0].display_name.lower() != "bread" or stack[-1].display_name.lower() != "bread":
        return False
    for obj in stack:
        eff = _effective(obj, reclassified)
        if obj.id in excluded_ids or goal.excludes(eff):
            return False
    return True
