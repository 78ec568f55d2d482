"""Command execution: timed action-chunk streams with a modeled inference latency.

Commands are executed as canned trajectories -- smooth deterministic functions
of progress, shaped ``(H, action_dim)`` per chunk. Only the stream's timing
and shape contracts matter to the rest of the system; the session loop applies
the discrete scene effect when the final chunk's playback span elapses.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional

from .domain import ActionChunk, RobotProfile, RobotState, SceneObject, SceneState, SkillCommand, stable_seed
from .simenv import ObjectNotFound, match_object

# Pick/place skills span one to three seconds; bare movement primitives are a
# fixed half second (a config knob on the executor, not derived from data).
SKILL_DURATION_RANGE_S = (1.0, 3.0)
PRIMITIVE_DURATION_S = 0.5


def resolve_object(scene: SceneState, phrase: str) -> SceneObject:
    """Ground a command noun phrase in the scene; ties break to the smallest id."""
    return match_object(scene, phrase)


@dataclass(frozen=True)
class LatencyModel:
    """Inference-time constants for both policy levels (milliseconds / Hz)."""

    per_chunk_inference_ms: float = 86.0
    control_rate_hz: float = 50.0
    highlevel_prefill_ms: float = 47.0
    highlevel_per_token_ms: float = 13.2

    def __post_init__(self) -> None:
        for name in (
            "per_chunk_inference_ms",
            "control_rate_hz",
            "highlevel_prefill_ms",
            "highlevel_per_token_ms",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def chunk_span_s(self, h: int) -> float:
        """Wall time one chunk's actions cover at the control rate."""
        return h / self.control_rate_hz

    def chunk_latency_s(self) -> float:
        return self.per_chunk_inference_ms / 1000.0

    def highlevel_latency_s(self, token_count: int) -> float:
        return (self.highlevel_prefill_ms + token_count * self.highlevel_per_token_ms) / 1000.0

    def realtime_feasible(self, h: int) -> bool:
        """Inference for the next chunk fits inside the current chunk's playback."""
        return self.per_chunk_inference_ms < 1000.0 * h / self.control_rate_hz

    def to_dict(self) -> dict:
        return {
            "per_chunk_inference_ms": self.per_chunk_inference_ms,
            "control_rate_hz": self.control_rate_hz,
            "highlevel_prefill_ms": self.highlevel_prefill_ms,
            "highlevel_per_token_ms": self.highlevel_per_token_ms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LatencyModel":
        return cls(**{k: float(v) for k, v in data.items()})


class FailedStart(Exception):
    """The skill could not begin (unresolvable object, occupied gripper, ...)."""

    def __init__(self, command: SkillCommand, reason: str):
        self.command = command
        self.reason = reason
        super().__init__(f"skill failed to start: {reason}")


class ChunkAfterComplete(RuntimeError):
    pass


@dataclass
class ExecutionPlan:
    """One command's execution schedule; outcome is pre-drawn at start."""

    command: SkillCommand
    command_id: str
    resolved_object_id: Optional[str]
    duration: float
    chunks_total: int
    outcome: str  # success | failure
    chunks_emitted: int = 0
    start_step: int = 0
    cancelled: bool = field(default=False, compare=False)

    @property
    def complete(self) -> bool:
        return self.chunks_emitted >= self.chunks_total


class LowLevelExecutor:
    """Turns parsed commands into plans and streams their action chunks."""

    def __init__(
        self,
        profile: RobotProfile,
        latency: LatencyModel | None = None,
        h: int = 10,
        seed: int = 0,
        failure_probability: float = 0.0,
        primitive_duration_s: float = PRIMITIVE_DURATION_S,
    ):
        self.profile = profile
        self.latency = latency or LatencyModel()
        self.h = h
        self.failure_probability = failure_probability
        self.primitive_duration_s = primitive_duration_s
        self.rng = random.Random(stable_seed(seed, "lowlevel"))

    def begin_skill(
        self,
        scene: SceneState,
        command: SkillCommand,
        command_id: str = "cmd",
        rng: random.Random | None = None,
    ) -> ExecutionPlan:
        """Resolve the command against the scene and lay out its chunk schedule.

        Raises :class:`FailedStart` when the command cannot begin; the caller
        reports it and the skill becomes a no-op.
        """
        rng = rng or self.rng
        resolved: Optional[str] = None
        if command.kind == "pick":
            held = scene.held_ids()
            arms = ("single",) if self.profile.name == "ur5e" else ("left", "right")
            if all(arm in held for arm in arms):
                raise FailedStart(command, "gripper occupied")
            try:
                resolved = match_object(scene, command.object_phrase or "", ("surface",)).id
            except ObjectNotFound as exc:
                raise FailedStart(command, f"object not found: {exc.phrase!r}") from exc
        elif command.kind == "place":
            held = scene.held_ids()
            if not held:
                raise FailedStart(command, "gripper empty")
            if command.object_phrase:
                resolved = self._match_held(scene, held, command.object_phrase)
                if resolved is None:
                    raise FailedStart(command, f"not holding {command.object_phrase!r}")
            else:
                resolved = held[sorted(held)[0]]
            dest = command.destination or ""
            if dest not in scene.fixtures.containers and dest not in scene.fixtures.surfaces:
                raise FailedStart(command, f"destination not in fixture catalog: {dest!r}")

        if command.kind in ("pick", "place"):
            duration = rng.uniform(*SKILL_DURATION_RANGE_S)
        elif command.kind == "done":
            duration = 0.0
        else:
            duration = self.primitive_duration_s
        chunks_total = math.ceil(duration * self.latency.control_rate_hz / self.h)
        outcome = "failure" if rng.random() < self.failure_probability else "success"
        return ExecutionPlan(
            command=command,
            command_id=command_id,
            resolved_object_id=resolved,
            duration=duration,
            chunks_total=chunks_total,
            outcome=outcome,
        )

    @staticmethod
    def _match_held(scene: SceneState, held: dict[str, str], phrase: str) -> Optional[str]:
        phrase_l = phrase.lower()
        for obj in sorted((scene.object_by_id(i) for i in held.values()), key=lambda o: o.id):
            name = obj.display_name.lower()
            if name == phrase_l or name.endswith(" " + phrase_l) or obj.object_class == phrase_l:
                return obj.id
        return None

    def next_chunk(self, plan: ExecutionPlan, robot: RobotState) -> ActionChunk:
        """Emit the plan's next block of H action vectors."""
        if plan.complete:
            raise ChunkAfterComplete(plan.command_id)
        total_actions = max(plan.chunks_total * self.h, 1)
        dim = self.profile.action_dim
        sign = -1.0 if plan.command.kind == "place" else 1.0
        actions = []
        for j in range(self.h):
            g = plan.chunks_emitted * self.h + j
            p = min((g + 1) / total_actions, 1.0)
            envelope = math.sin(math.pi * p)
            actions.append(tuple(sign * envelope * 0.2 * (d + 1) / dim for d in range(dim)))
        chunk = ActionChunk(
            command_id=plan.command_id,
            actions=tuple(actions),
            start_step=plan.start_step + plan.chunks_emitted * self.h,
        )
        plan.chunks_emitted += 1
        return chunk
