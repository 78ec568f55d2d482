"""Shared data model: scenes, commands, events, goals, and episode records.

Every type here is an immutable value with a stable JSON form (``to_dict`` /
``from_dict``), so sessions can be logged, replayed, and shipped over the
gateway protocol without extra adapters. Enums are lower_snake_case strings
on the wire; vectors are plain arrays of 64-bit floats.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional


def stable_seed(*parts: Any) -> int:
    """Derive a process-independent RNG seed from mixed parts.

    Python's built-in hash of strings is randomized per process, so anything
    reproducible across runs (event-log hashes, generated datasets) must not
    seed through it.
    """
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")

OBJECT_CLASSES = ("trash", "dish", "utensil", "ingredient", "grocery")

ATTRIBUTE_LEXICON = frozenset(
    {"sweet", "salty", "drink", "vegetarian", "dairy", "meat", "fragile"}
)

COLOR_PALETTE = frozenset(
    {
        "white",
        "black",
        "red",
        "green",
        "blue",
        "yellow",
        "yellowish",
        "brown",
        "orange",
        "purple",
        "pink",
        "clear",
        "silver",
    }
)

ARMS = ("single", "left", "right")

MOVE_DIRECTIONS = (
    "left",
    "right",
    "higher",
    "lower",
    "toward_user",
    "away_from_user",
)

SCENARIO_TYPES = (
    "negative_task",
    "situated_correction",
    "specific_constraint",
    "direct_request",
)

RESPONSE_TYPES = ("simple_confirmation", "clarification", "error_handling", "none")


@dataclass(frozen=True)
class RobotProfile:
    """Robot embodiment: joint-space and camera dimensions.

    The three supported rigs have fixed dimensions; ``by_name`` is the only
    sanctioned constructor for them.
    """

    name: str
    config_dim: int
    action_dim: int
    camera_count: int

    _FIXED = {
        "ur5e": (7, 7, 2),
        "bimanual_arx": (14, 14, 3),
        "mobile_arx": (14, 16, 3),
    }

    @classmethod
    def by_name(cls, name: str) -> "RobotProfile":
        try:
            config_dim, action_dim, camera_count = cls._FIXED[name]
        except KeyError:
            raise ValueError(f"unknown robot profile: {name!r}") from None
        return cls(name, config_dim, action_dim, camera_count)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "config_dim": self.config_dim,
            "action_dim": self.action_dim,
            "camera_count": self.camera_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RobotProfile":
        profile = cls.by_name(data["name"])
        declared = (data["config_dim"], data["action_dim"], data["camera_count"])
        if declared != cls._FIXED[profile.name]:
            raise ValueError(f"profile dimensions {declared} do not match {profile.name}")
        return profile


@dataclass(frozen=True)
class Location:
    """Where an object is: a named surface, a named container, or a gripper arm."""

    kind: str  # surface | container | gripper
    name: Optional[str] = None
    arm: Optional[str] = None

    @classmethod
    def surface(cls, name: str) -> "Location":
        return cls("surface", name=name)

    @classmethod
    def container(cls, name: str) -> "Location":
        return cls("container", name=name)

    @classmethod
    def gripper(cls, arm: str) -> "Location":
        if arm not in ARMS:
            raise ValueError(f"unknown arm: {arm!r}")
        return cls("gripper", arm=arm)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "gripper":
            return {"kind": "gripper", "arm": self.arm}
        return {"kind": self.kind, "name": self.name}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Location":
        kind = data["kind"]
        if kind == "gripper":
            return cls.gripper(data["arm"])
        if kind in ("surface", "container"):
            return cls(kind, name=data["name"])
        raise ValueError(f"unknown location kind: {kind!r}")


@dataclass(frozen=True)
class SceneObject:
    """One manipulable item in the scene."""

    id: str
    display_name: str
    object_class: str
    attributes: frozenset[str] = frozenset()
    color_tags: frozenset[str] = frozenset()
    location: Location = Location.surface("table")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "display_name": self.display_name,
            "object_class": self.object_class,
            "attributes": sorted(self.attributes),
            "color_tags": sorted(self.color_tags),
            "location": self.location.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SceneObject":
        return cls(
            id=data["id"],
            display_name=data["display_name"],
            object_class=data["object_class"],
            attributes=frozenset(data["attributes"]),
            color_tags=frozenset(data["color_tags"]),
            location=Location.from_dict(data["location"]),
        )


@dataclass(frozen=True)
class Fixtures:
    """Valid surface and container names for the active task."""

    surfaces: tuple[str, ...]
    containers: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"surfaces": list(self.surfaces), "containers": list(self.containers)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Fixtures":
        return cls(tuple(data["surfaces"]), tuple(data["containers"]))

    def valid(self, loc: Location) -> bool:
        if loc.kind == "surface":
            return loc.name in self.surfaces
        if loc.kind == "container":
            return loc.name in self.containers
        return loc.kind == "gripper"


@dataclass(frozen=True)
class SceneState:
    """Symbolic snapshot of the workspace at one instant of virtual time.

    ``objects`` keeps placement order: objects moved into a container are
    appended last, which is what gives stacked fixtures (the sandwich) a
    well-defined bottom-to-top order. Enumeration for decision-making sorts
    by id instead.
    """

    objects: tuple[SceneObject, ...]
    fixtures: Fixtures
    time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "objects": [o.to_dict() for o in self.objects],
            "fixtures": self.fixtures.to_dict(),
            "time": float(self.time),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SceneState":
        return cls(
            objects=tuple(SceneObject.from_dict(o) for o in data["objects"]),
            fixtures=Fixtures.from_dict(data["fixtures"]),
            time=float(data["time"]),
        )

    def object_by_id(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(object_id)

    def held_ids(self) -> dict[str, str]:
        """Map arm -> object id for every occupied gripper."""
        held: dict[str, str] = {}
        for obj in self.objects:
            if obj.location.kind == "gripper":
                held[obj.location.arm or "single"] = obj.id
        return held

    def in_container(self, name: str) -> tuple[SceneObject, ...]:
        """Objects in a container, bottom to top (placement order)."""
        return tuple(
            o
            for o in self.objects
            if o.location.kind == "container" and o.location.name == name
        )

    def with_object_moved(self, object_id: str, location: Location) -> "SceneState":
        """Return a copy with one object relocated (appended last, see class doc)."""
        moved = None
        rest = []
        for obj in self.objects:
            if obj.id == object_id:
                moved = SceneObject(
                    id=obj.id,
                    display_name=obj.display_name,
                    object_class=obj.object_class,
                    attributes=obj.attributes,
                    color_tags=obj.color_tags,
                    location=location,
                )
            else:
                rest.append(obj)
        if moved is None:
            raise KeyError(object_id)
        return SceneState(tuple(rest) + (moved,), self.fixtures, self.time)

    def with_time(self, time: float) -> "SceneState":
        return SceneState(self.objects, self.fixtures, time)


@dataclass(frozen=True)
class RobotState:
    """Joint configuration plus per-arm gripper opening fractions."""

    profile: RobotProfile
    q: tuple[float, ...]
    gripper_open: Mapping[str, float]

    @classmethod
    def home(cls, profile: RobotProfile) -> "RobotState":
        arms = ("single",) if profile.name == "ur5e" else ("left", "right")
        return cls(profile, (0.0,) * profile.config_dim, {a: 1.0 for a in arms})

    def to_dict(self) -> dict[str, Any]:
        return {
            "profile": self.profile.to_dict(),
            "q": [float(v) for v in self.q],
            "gripper_open": {a: float(v) for a, v in sorted(self.gripper_open.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RobotState":
        return cls(
            profile=RobotProfile.from_dict(data["profile"]),
            q=tuple(float(v) for v in data["q"]),
            gripper_open=dict(data["gripper_open"]),
        )

    def with_gripper(self, arm: str, fraction: float) -> "RobotState":
        updated = dict(self.gripper_open)
        updated[arm] = fraction
        return RobotState(self.profile, self.q, updated)


@dataclass(frozen=True)
class ActionChunk:
    """A fixed-horizon block of consecutive action vectors for one command."""

    command_id: str
    actions: tuple[tuple[float, ...], ...]
    start_step: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "command_id": self.command_id,
            "actions": [[float(v) for v in a] for a in self.actions],
            "start_step": self.start_step,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ActionChunk":
        return cls(
            command_id=data["command_id"],
            actions=tuple(tuple(float(v) for v in a) for a in data["actions"]),
            start_step=int(data["start_step"]),
        )


@dataclass(frozen=True)
class SkillCommand:
    """Parsed atomic command from the closed grammar.

    ``raw_text`` preserves the surface string the command was parsed from and
    is excluded from equality: two parses of synonymous phrasings compare
    equal, and parse(render(cmd)) == cmd holds for every variant.
    """

    kind: str  # pick | place | move | rotate | gripper | home | done
    object_phrase: Optional[str] = None
    destination: Optional[str] = None
    direction: Optional[str] = None
    arm: Optional[str] = None
    rotation: Optional[str] = None  # cw | ccw
    gripper_action: Optional[str] = None  # open | close
    raw_text: str = field(default="", compare=False)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind, "raw_text": self.raw_text}
        for key in ("object_phrase", "destination", "direction", "arm", "rotation", "gripper_action"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SkillCommand":
        return cls(
            kind=data["kind"],
            object_phrase=data.get("object_phrase"),
            destination=data.get("destination"),
            direction=data.get("direction"),
            arm=data.get("arm"),
            rotation=data.get("rotation"),
            gripper_action=data.get("gripper_action"),
            raw_text=data.get("raw_text", ""),
        )


@dataclass(frozen=True)
class UserEvent:
    """A user-side event: initial/replacement prompt, mid-task interjection, or resume."""

    kind: str  # prompt | interjection | resume
    text: Optional[str] = None
    time: float = 0.0

    @classmethod
    def prompt(cls, text: str, time: float = 0.0) -> "UserEvent":
        return cls("prompt", text, time)

    @classmethod
    def interjection(cls, text: str, time: float = 0.0) -> "UserEvent":
        return cls("interjection", text, time)

    @classmethod
    def resume(cls, time: float = 0.0) -> "UserEvent":
        return cls("resume", None, time)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind, "time": float(self.time)}
        if self.text is not None:
            data["text"] = self.text
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UserEvent":
        return cls(data["kind"], data.get("text"), float(data["time"]))


@dataclass(frozen=True)
class HighLevelDecision:
    """One high-level output: the next atomic command text plus an optional spoken reply."""

    skill_text: str
    utterance: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"skill_text": self.skill_text}
        if self.utterance is not None:
            data["utterance"] = self.utterance
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "HighLevelDecision":
        return cls(data["skill_text"], data.get("utterance"))


@dataclass(frozen=True)
class Frame:
    """One recorded control step of a demonstration episode."""

    t: float
    scene: SceneState
    q: RobotState
    action: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": float(self.t),
            "scene": self.scene.to_dict(),
            "q": self.q.to_dict(),
            "action": [float(v) for v in self.action],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Frame":
        return cls(
            t=float(data["t"]),
            scene=SceneState.from_dict(data["scene"]),
            q=RobotState.from_dict(data["q"]),
            action=tuple(float(v) for v in data["action"]),
        )


@dataclass(frozen=True)
class Segment:
    """A labeled skill window within an episode, inclusive frame bounds."""

    start_frame: int
    end_frame: int
    label: str

    def to_dict(self) -> dict[str, Any]:
        return {"start_frame": self.start_frame, "end_frame": self.end_frame, "label": self.label}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Segment":
        return cls(int(data["start_frame"]), int(data["end_frame"]), data["label"])


@dataclass(frozen=True)
class Episode:
    """A demonstration episode: frames plus skill segments and a coarse goal note."""

    id: str
    task: str
    frames: tuple[Frame, ...]
    segments: tuple[Segment, ...]
    goal_annotation: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "task": self.task,
            "frames": [f.to_dict() for f in self.frames],
            "segments": [s.to_dict() for s in self.segments],
            "goal_annotation": self.goal_annotation,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Episode":
        return cls(
            id=data["id"],
            task=data["task"],
            frames=tuple(Frame.from_dict(f) for f in data["frames"]),
            segments=tuple(Segment.from_dict(s) for s in data["segments"]),
            goal_annotation=data.get("goal_annotation", ""),
        )


@dataclass(frozen=True)
class SyntheticInteraction:
    """One generated (user prompt, robot utterance) pair for a labeled segment."""

    episode_id: str
    frame_index: int
    prior_skills: tuple[str, ...]
    skill_label: str
    scenario_type: str
    user_prompt: str
    robot_utterance: Optional[str]
    response_type: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "episode_id": self.episode_id,
            "frame_index": self.frame_index,
            "prior_skills": list(self.prior_skills),
            "skill_label": self.skill_label,
            "scenario_type": self.scenario_type,
            "user_prompt": self.user_prompt,
            "robot_utterance": self.robot_utterance,
            "response_type": self.response_type,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SyntheticInteraction":
        return cls(
            episode_id=data["episode_id"],
            frame_index=int(data["frame_index"]),
            prior_skills=tuple(data["prior_skills"]),
            skill_label=data["skill_label"],
            scenario_type=data["scenario_type"],
            user_prompt=data["user_prompt"],
            robot_utterance=data.get("robot_utterance"),
            response_type=data["response_type"],
        )


@dataclass(frozen=True)
class ObjectFilter:
    """Serializable predicate over scene objects.

    All present fields must hold (AND); within a field, membership is enough
    (OR). ``without_*`` fields invert the test. An empty filter matches
    nothing unless ``match_all`` is set.
    """

    classes: Optional[frozenset[str]] = None
    names: Optional[frozenset[str]] = None
    attributes: Optional[frozenset[str]] = None
    color_tags: Optional[frozenset[str]] = None
    without_classes: Optional[frozenset[str]] = None
    without_names: Optional[frozenset[str]] = None
    without_attributes: Optional[frozenset[str]] = None
    without_color_tags: Optional[frozenset[str]] = None
    match_all: bool = False

    def is_empty(self) -> bool:
        return not self.match_all and all(
            getattr(self, f) is None
            for f in (
                "classes",
                "names",
                "attributes",
                "color_tags",
                "without_classes",
                "without_names",
                "without_attributes",
                "without_color_tags",
            )
        )

    def matches(self, obj: SceneObject) -> bool:
        if self.is_empty():
            return False
        name = obj.display_name.lower()
        if self.classes is not None and obj.object_class not in self.classes:
            return False
        if self.names is not None and name not in {n.lower() for n in self.names}:
            return False
        if self.attributes is not None and not (obj.attributes & self.attributes):
            return False
        if self.color_tags is not None and not (obj.color_tags & self.color_tags):
            return False
        if self.without_classes is not None and obj.object_class in self.without_classes:
            return False
        if self.without_names is not None and name in {n.lower() for n in self.without_names}:
            return False
        if self.without_attributes is not None and (obj.attributes & self.without_attributes):
            return False
        if self.without_color_tags is not None and (obj.color_tags & self.without_color_tags):
            return False
        return True

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {}
        for key in (
            "classes",
            "names",
            "attributes",
            "color_tags",
            "without_classes",
            "without_names",
            "without_attributes",
            "without_color_tags",
        ):
            value = getattr(self, key)
            if value is not None:
                data[key] = sorted(value)
        if self.match_all:
            data["match_all"] = True
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ObjectFilter":
        kwargs: dict[str, Any] = {}
        for key in (
            "classes",
            "names",
            "attributes",
            "color_tags",
            "without_classes",
            "without_names",
            "without_attributes",
            "without_color_tags",
        ):
            if key in data:
                kwargs[key] = frozenset(data[key])
        return cls(match_all=bool(data.get("match_all", False)), **kwargs)


@dataclass(frozen=True)
class GoalSpec:
    """Ground-truth task intent: what goes where, what must not be touched.

    ``required_items`` maps object names to wanted counts; keys of the form
    ``attr:<flag>`` are attribute-level requests satisfied by any object
    carrying that flag. ``exclude`` always wins over ``include``.
    """

    destination_map: Mapping[str, str] = field(default_factory=dict)
    include: ObjectFilter = ObjectFilter()
    exclude: ObjectFilter = ObjectFilter()
    required_items: Mapping[str, int] = field(default_factory=dict)
    forbidden_attributes: frozenset[str] = frozenset()
    halt: bool = False

    def excludes(self, obj: SceneObject) -> bool:
        if self.exclude.matches(obj):
            return True
        return bool(obj.attributes & self.forbidden_attributes)

    def includes(self, obj: SceneObject) -> bool:
        if self.excludes(obj):
            return False
        if self.required_items:
            return _matches_required(obj, self.required_items)
        return self.include.matches(obj)

    def to_dict(self) -> dict[str, Any]:
        return {
            "destination_map": dict(sorted(self.destination_map.items())),
            "include_predicate": self.include.to_dict(),
            "exclude_predicate": self.exclude.to_dict(),
            "required_items": dict(sorted(self.required_items.items())),
            "forbidden_attributes": sorted(self.forbidden_attributes),
            "halt": self.halt,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GoalSpec":
        return cls(
            destination_map=dict(data.get("destination_map", {})),
            include=ObjectFilter.from_dict(data.get("include_predicate", {})),
            exclude=ObjectFilter.from_dict(data.get("exclude_predicate", {})),
            required_items={k: int(v) for k, v in data.get("required_items", {}).items()},
            forbidden_attributes=frozenset(data.get("forbidden_attributes", [])),
            halt=bool(data.get("halt", False)),
        )


def _matches_required(obj: SceneObject, required: Mapping[str, int]) -> bool:
    name = obj.display_name.lower()
    for key in required:
        if key.startswith("attr:"):
            if key[5:] in obj.attributes:
                return True
        elif key.lower() == name:
            return True
    return False


def required_key_for(obj: SceneObject, required: Mapping[str, int]) -> Optional[str]:
    """Which required_items key this object can satisfy; exact names win over attr tags."""
    name = obj.display_name.lower()
    for key in required:
        if not key.startswith("attr:") and key.lower() == name:
            return key
    for key in required:
        if key.startswith("attr:") and key[5:] in obj.attributes:
            return key
    return None


def validate_scene(scene: SceneState, profile: RobotProfile) -> list[str]:
    """Check scene invariants; returns human-readable violations (empty = valid)."""
    violations: list[str] = []
    seen_ids: set[str] = set()
    arm_load: dict[str, int] = {}
    valid_arms = {"single"} if profile.name == "ur5e" else {"left", "right"}
    for obj in scene.objects:
        if obj.id in seen_ids:
            violations.append(f"duplicate object id: {obj.id}")
        seen_ids.add(obj.id)
        if obj.object_class not in OBJECT_CLASSES:
            violations.append(f"unknown object class: {obj.object_class}")
        for attr in obj.attributes:
            if attr not in ATTRIBUTE_LEXICON:
                violations.append(f"unknown attribute: {attr}")
        for tag in obj.color_tags:
            if tag not in COLOR_PALETTE:
                violations.append("unknown color tag")
        loc = obj.location
        if loc.kind == "gripper":
            if loc.arm not in valid_arms:
                violations.append(f"gripper arm {loc.arm!r} not on profile {profile.name}")
            arm_load[loc.arm or "single"] = arm_load.get(loc.arm or "single", 0) + 1
        elif not scene.fixtures.valid(loc):
            violations.append(f"location {loc.name!r} not in fixture catalog")
    for arm, count in sorted(arm_load.items()):
        if count > 1:
            violations.append("gripper capacity exceeded")
    return violations


def validate_robot_state(state: RobotState) -> list[str]:
    violations: list[str] = []
    if len(state.q) != state.profile.config_dim:
        violations.append(
            f"q has {len(state.q)} entries, profile {state.profile.name} needs {state.profile.config_dim}"
        )
    for arm, fraction in state.gripper_open.items():
        if not 0.0 <= fraction <= 1.0:
            violations.append(f"gripper_open[{arm}] out of [0, 1]: {fraction}")
    return violations


def validate_goal(goal: GoalSpec, scene: SceneState) -> list[str]:
    """Report objects caught by both include and exclude (exclude wins at runtime)."""
    conflicts = []
    for obj in scene.objects:
        if goal.include.matches(obj) and goal.excludes(obj):
            conflicts.append(f"object {obj.id} matches both include and exclude")
    return conflicts


def validate_events(events: Iterable[UserEvent]) -> list[str]:
    violations = []
    last = None
    for event in events:
        if last is not None and event.time < last:
            violations.append(f"event time decreases: {event.time} after {last}")
        last = event.time
    return violations
