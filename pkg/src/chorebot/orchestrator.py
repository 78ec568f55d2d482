"""Two-rate control loop over a virtual clock.

One session = one discrete-event loop: the high level is re-invoked when one
period (default 1 s) has elapsed or a user event arrives, its decision takes
effect after a modeled text-generation latency, and the low level streams
action chunks back-to-back, each charged its own inference latency. The loop
emits a totally ordered event log whose hash is reproducible from the seed.

Scheduling rules, in the order they matter:

* the high level runs at t=0, then at ``min(last + period, next user event)``;
  user events always trigger an immediate invocation;
* a decision's utterance is split off and logged, never forwarded down;
* a newly issued command preempts the active skill only if it differs from
  it; re-issuing the active command continues execution uninterrupted;
* a session ends when a home/done command completes with the goal check, or
  at the trial timeout.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from . import grammar
from .domain import GoalSpec, HighLevelDecision, SkillCommand, UserEvent
from .executor import ExecutionPlan, FailedStart, LatencyModel, LowLevelExecutor
from .grammar import OutOfGrammar
from .reasoner import DialogueContext, HierarchicalAgent, InterjectionEntry, default_goal
from .remote import BackendError, BackendMalformed, BackendTimeout, RemoteBackend, build_request
from .simenv import EffectError, TaskCatalog, apply_skill_effect, goal_satisfied, load_task
from . import reasoner

POLICIES = (
    "hierarchical_reference",
    "flat_passthrough",
    "oracle_scripted",
    "remote_backend",
    "reference_no_constraints",
)

EVENT_KINDS = (
    "user_event",
    "hl_invoked",
    "command_issued",
    "utterance",
    "chunk",
    "skill_done",
    "skill_failed",
    "gap_detected",
    "trial_end",
)


@dataclass
class SessionConfig:
    task: str
    policy: str = "hierarchical_reference"
    seed: int = 0
    latency: LatencyModel = field(default_factory=LatencyModel)
    h: int = 10
    highlevel_period_s: float = 1.0
    realtime: bool = False
    trial_timeout_s: float = 120.0
    failure_probability: float = 0.0
    remote_endpoint: Optional[str] = None
    remote_timeout_ms: float = 2000.0

    def __post_init__(self) -> None:
        if self.highlevel_period_s <= 0:
            raise ValueError("highlevel_period_s must be positive")
        if self.h < 1:
            raise ValueError("H must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy: {self.policy!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "policy": self.policy,
            "seed": self.seed,
            "latency": self.latency.to_dict(),
            "H": self.h,
            "highlevel_period_s": self.highlevel_period_s,
            "realtime": self.realtime,
            "trial_timeout_s": self.trial_timeout_s,
            "failure_probability": self.failure_probability,
            "remote_endpoint": self.remote_endpoint,
            "remote_timeout_ms": self.remote_timeout_ms,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SessionConfig":
        return cls(
            task=data["task"],
            policy=data.get("policy", "hierarchical_reference"),
            seed=int(data.get("seed", 0)),
            latency=LatencyModel.from_dict(data["latency"]) if "latency" in data else LatencyModel(),
            h=int(data.get("H", 10)),
            highlevel_period_s=float(data.get("highlevel_period_s", 1.0)),
            realtime=bool(data.get("realtime", False)),
            trial_timeout_s=float(data.get("trial_timeout_s", 120.0)),
            failure_probability=float(data.get("failure_probability", 0.0)),
            remote_endpoint=data.get("remote_endpoint"),
            remote_timeout_ms=float(data.get("remote_timeout_ms", 2000.0)),
        )


class EventLog:
    """Append-only ordered records; one JSON object per line on disk."""

    def __init__(self, records: Optional[list[dict[str, Any]]] = None):
        self.records: list[dict[str, Any]] = records or []

    def append(self, time: float, kind: str, payload: dict[str, Any]) -> dict[str, Any]:
        record = {"time": float(time), "seq": len(self.records), "kind": kind, "payload": payload}
        self.records.append(record)
        return record

    def of_kind(self, kind: str) -> list[dict[str, Any]]:
        return [r for r in self.records if r["kind"] == kind]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records)

    def hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())
            if self.records:
                fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "EventLog":
        records = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except ValueError as exc:
                    raise CorruptLog(path, lineno) from exc
        return cls(records)


class CorruptLog(ValueError):
    def __init__(self, path: str, lineno: int):
        self.path = path
        self.lineno = lineno
        super().__init__(f"corrupt event log {path}: line {lineno}")


class FlatPolicy:
    """Single-level baseline: the raw prompt is the command.

    The prompt is forwarded once; if the grammar rejects it, the policy falls
    back to the task's default unconstrained behavior. Interjections are
    ignored outright.
    """

    name = "flat_passthrough"

    def __init__(self, catalog: TaskCatalog):
        self.catalog = catalog
        self.goal = default_goal(catalog)
        self.ctx = DialogueContext()
        self._prompt: Optional[str] = None
        self._forwarded = False
        self._fellback = False
        self._completed = False

    def on_prompt(self, text: str, scene, time: float, gt_goal=None) -> None:
        self._prompt = text
        self._forwarded = False
        self._fellback = False
        self._completed = False

    def on_interjection(self, text: str, scene, time: float, gt_goal=None):
        return None  # no reaction to real-time feedback

    def on_resume(self, scene, time: float) -> None:
        pass

    def decide(self, scene, time: float) -> HighLevelDecision:
        if self._prompt is None or self._completed:
            return HighLevelDecision("go back to home position")
        if self._fellback:
            return reasoner.decide(scene, self.ctx, self.goal, self.catalog)
        if not self._forwarded:
            self._forwarded = True
        return HighLevelDecision(self._prompt)

    def notify_issued(self, cmd: SkillCommand, resolved_object_id: Optional[str]) -> None:
        self.ctx.prior_skills.append(grammar.render_command(cmd))

    def notify_rejected(self, text: str, reason: str) -> None:
        if self._prompt is not None and text == self._prompt:
            self._fellback = True  # revert to default behavior

    def notify_failed_start(self, cmd: SkillCommand, reason: str) -> Optional[str]:
        return None

    def notify_skill_done(self, cmd: SkillCommand, outcome: str) -> None:
        if not self._fellback and self._prompt is not None and outcome == "success":
            try:
                if grammar.parse_command(self._prompt) == cmd:
                    self._completed = True
            except OutOfGrammar:
                pass


class OraclePolicy(HierarchicalAgent):
    """Expert stand-in: reads the scripted trial's ground-truth goal directly."""

    def __init__(self, catalog: TaskCatalog):
        super().__init__(catalog)
        self.name = "oracle_scripted"

    def on_prompt(self, text: str, scene, time: float, gt_goal: Optional[GoalSpec] = None) -> None:
        super().on_prompt(text, scene, time)
        if gt_goal is not None:
            self.goal = gt_goal
            self._pending_utterance = "Sure."

    def on_interjection(self, text: str, scene, time: float, gt_goal: Optional[GoalSpec] = None):
        immediate = super().on_interjection(text, scene, time)
        if gt_goal is not None:
            self.goal = gt_goal
        return immediate


class RemotePolicy:
    """Adapter policy: each decision is one HTTP round-trip to a model endpoint."""

    name = "remote_backend"

    def __init__(self, catalog: TaskCatalog, endpoint: str, timeout_ms: float = 2000.0):
        self.catalog = catalog
        self.goal = default_goal(catalog)
        self.ctx = DialogueContext()
        self.backend = RemoteBackend(endpoint, timeout_ms)

    def on_prompt(self, text: str, scene, time: float, gt_goal=None) -> None:
        self.ctx.active_prompt = text

    def on_interjection(self, text: str, scene, time: float, gt_goal=None):
        self.ctx.interjection_stack.append(InterjectionEntry(text, time))
        return None

    def on_resume(self, scene, time: float) -> None:
        self.ctx.interjection_stack = [e for e in self.ctx.interjection_stack if not e.handled]

    def decide(self, scene, time: float) -> HighLevelDecision:
        request = build_request(self.catalog.task, scene, self.ctx)
        return self.backend.decide(request)

    def notify_issued(self, cmd: SkillCommand, resolved_object_id: Optional[str]) -> None:
        self.ctx.prior_skills.append(grammar.render_command(cmd))
        for entry in self.ctx.interjection_stack:
            entry.handled = True

    def notify_rejected(self, text: str, reason: str) -> None:
        pass

    def notify_failed_start(self, cmd: SkillCommand, reason: str) -> Optional[str]:
        return None

    def notify_skill_done(self, cmd: SkillCommand, outcome: str) -> None:
        pass


def make_policy(config: SessionConfig, catalog: TaskCatalog):
    if config.policy == "hierarchical_reference":
        return HierarchicalAgent(catalog)
    if config.policy == "reference_no_constraints":
        return HierarchicalAgent(catalog, ablate_constraints=True)
    if config.policy == "flat_passthrough":
        return FlatPolicy(catalog)
    if config.policy == "oracle_scripted":
        return OraclePolicy(catalog)
    if config.policy == "remote_backend":
        if not config.remote_endpoint:
            raise ValueError("remote_backend policy needs remote_endpoint")
        return RemotePolicy(catalog, config.remote_endpoint, config.remote_timeout_ms)
    raise ValueError(config.policy)


@dataclass
class _Active:
    command: SkillCommand
    plan: ExecutionPlan
    command_id: str
    last_chunk_time: Optional[float] = None


class Session:
    """One live or headless session; drive with ``step()`` or ``run_to_end()``."""

    def __init__(self, config: SessionConfig, script: Any = None):
        self.config = config
        self.catalog = TaskCatalog.for_task(config.task)
        self.scene, self.robot, _ = load_task(config.task, config.seed)
        self.executor = LowLevelExecutor(
            self.catalog.profile,
            config.latency,
            config.h,
            seed=config.seed,
            failure_probability=config.failure_probability,
        )
        self.policy = make_policy(config, self.catalog)
        self.log = EventLog()
        self.now = 0.0
        self.ended = False
        self._heap: list[tuple[float, int, str, Any]] = []
        self._seq = 0
        self._next_periodic = 0.0
        self._active: Optional[_Active] = None
        self._last_attempt: Optional[tuple[SkillCommand, float]] = None
        self._decisions = 0
        self._commands = 0
        self._skills_done = 0
        self._watch_command: list[Any] = []
        self._watch_done: list[Any] = []
        self._push(config.trial_timeout_s, "timeout", None)
        if script is not None:
            self._arm_script(script)

    # ------------------------------------------------------------------
    # event plumbing
    # ------------------------------------------------------------------

    def _push(self, time: float, kind: str, data: Any) -> None:
        heapq.heappush(self._heap, (time, self._seq, kind, data))
        self._seq += 1

    def _arm_script(self, script: Any) -> None:
        for step in script.steps:
            if step.trigger_kind == "at_time":
                event = UserEvent(step.event.kind, step.event.text, step.at_time)
                self._push(step.at_time, "user", (event, step.gt_goal))
            elif step.trigger_kind == "on_command_matching":
                self._watch_command.append([step, False])
            elif step.trigger_kind == "on_skill_done":
                self._watch_done.append([step, False])
            else:
                raise ValueError(f"unknown trigger kind: {step.trigger_kind!r}")

    def submit_event(self, event: UserEvent, gt_goal: Optional[GoalSpec] = None) -> None:
        """Inject a live user event; times in the past are clamped to now."""
        at = max(event.time, self.now)
        self._push(at, "user", (UserEvent(event.kind, event.text, at), gt_goal))

    def peek_next_time(self) -> Optional[float]:
        if self.ended:
            return None
        heap_t = self._heap[0][0] if self._heap else math.inf
        return min(heap_t, self._next_periodic)

    def step(self) -> bool:
        """Process exactly one scheduled event; False once the session ended."""
        if self.ended:
            return False
        heap_t = self._heap[0][0] if self._heap else math.inf
        if heap_t <= self._next_periodic:
            time, _, kind, data = heapq.heappop(self._heap)
            self.now = time
            if kind == "user":
                self._process_user(*data)
            elif kind == "cmd_effect":
                self._process_effect(*data)
            elif kind == "chunk":
                self._process_chunk(data)
            elif kind == "complete":
                self._process_complete(data)
            elif kind == "timeout":
                self._end_trial("timeout")
        else:
            self.now = self._next_periodic
            self._invoke_highlevel(self.now, None)
            self._next_periodic = self.now + self.config.highlevel_period_s
        return not self.ended

    def run_to_end(self) -> EventLog:
        while self.step():
            pass
        return self.log

    # ------------------------------------------------------------------
    # event handlers
    # ------------------------------------------------------------------

    def _process_user(self, event: UserEvent, gt_goal: Optional[GoalSpec]) -> None:
        self.log.append(self.now, "user_event", event.to_dict())
        scene = self.scene.with_time(self.now)
        immediate: Optional[HighLevelDecision] = None
        if event.kind == "prompt":
            self.policy.on_prompt(event.text or "", scene, self.now, gt_goal)
        elif event.kind == "interjection":
            immediate = self.policy.on_interjection(event.text or "", scene, self.now, gt_goal)
        elif event.kind == "resume":
            self.policy.on_resume(scene, self.now)
        else:
            raise ValueError(f"unknown user event kind: {event.kind!r}")
        self._invoke_highlevel(self.now, immediate)
        self._next_periodic = self.now + self.config.highlevel_period_s

    def _invoke_highlevel(self, t: float, immediate: Optional[HighLevelDecision]) -> None:
        self.log.append(t, "hl_invoked", {})
        decision_id = f"dec_{self._decisions:04d}"
        self._decisions += 1
        scene = self.scene.with_time(t)
        try:
            decision = immediate if immediate is not None else self.policy.decide(scene, t)
        except BackendTimeout:
            self.log.append(
                t,
                "command_issued",
                {"decision_id": decision_id, "skill_text": "", "error": "backend_timeout", "changed": False},
            )
            return
        except (BackendMalformed, BackendError) as exc:
            self.log.append(
                t,
                "command_issued",
                {"decision_id": decision_id, "skill_text": "", "error": "backend_malformed", "changed": False},
            )
            return
        skill_text = decision.skill_text
        utterance = decision.utterance
        if utterance and utterance in skill_text:
            skill_text = skill_text.replace(utterance, "").strip()
        tokens = len((skill_text + " " + utterance).split()) if utterance else len(skill_text.split())
        latency_s = self.config.latency.highlevel_latency_s(tokens)
        self._push(t + latency_s, "cmd_effect", (HighLevelDecision(skill_text, utterance), decision_id, t))

    def _process_effect(self, decision: HighLevelDecision, decision_id: str, invoked_at: float) -> None:
        if decision.utterance:
            self.log.append(self.now, "utterance", {"text": decision.utterance, "decision_id": decision_id})
        try:
            cmd = grammar.parse_command(decision.skill_text)
        except OutOfGrammar as exc:
            self.log.append(
                self.now,
                "command_issued",
                {
                    "decision_id": decision_id,
                    "skill_text": decision.skill_text,
                    "error": "out_of_grammar",
                    "detail": exc.reason,
                    "changed": False,
                },
            )
            self.policy.notify_rejected(decision.skill_text, "out_of_grammar")
            return

        if self._active is not None and not self._active.plan.cancelled and cmd == self._active.command:
            self.log.append(
                self.now,
                "command_issued",
                {
                    "decision_id": decision_id,
                    "skill_text": decision.skill_text,
                    "command_id": self._active.command_id,
                    "changed": False,
                },
            )
            return

        # A decision computed before the matching skill finished is stale by the
        # time its latency elapses; re-executing it would act on an old scene.
        if (
            self._active is None
            and self._last_attempt is not None
            and cmd == self._last_attempt[0]
            and invoked_at < self._last_attempt[1]
        ):
            self.log.append(
                self.now,
                "command_issued",
                {
                    "decision_id": decision_id,
                    "skill_text": decision.skill_text,
                    "changed": False,
                    "stale": True,
                },
            )
            return

        preempted: Optional[str] = None
        if self._active is not None and not self._active.plan.cancelled:
            self._active.plan.cancelled = True
            preempted = self._active.command_id
            self._active = None

        command_id = f"cmd_{self._commands:04d}"
        self._commands += 1

        if cmd.kind == "done":
            self.log.append(
                self.now,
                "command_issued",
                {
                    "decision_id": decision_id,
                    "skill_text": decision.skill_text,
                    "command_id": command_id,
                    "command": cmd.to_dict(),
                    "changed": True,
                    "preempted": preempted,
                },
            )
            self.log.append(
                self.now,
                "skill_done",
                {"command_id": command_id, "command": cmd.to_dict(), "outcome": "success"},
            )
            self._end_trial("done")
            return

        try:
            plan = self.executor.begin_skill(self.scene, cmd, command_id)
        except FailedStart as exc:
            self.log.append(
                self.now,
                "command_issued",
                {
                    "decision_id": decision_id,
                    "skill_text": decision.skill_text,
                    "command_id": command_id,
                    "command": cmd.to_dict(),
                    "changed": True,
                    "preempted": preempted,
                },
            )
            self.log.append(
                self.now,
                "skill_failed",
                {"command_id": command_id, "reason": "failed_start", "detail": exc.reason},
            )
            self._last_attempt = (cmd, self.now)
            error_utterance = self.policy.notify_failed_start(cmd, exc.reason)
            if error_utterance:
                self.log.append(self.now, "utterance", {"text": error_utterance, "decision_id": decision_id})
            self._fire_command_triggers(decision.skill_text)
            return

        record = self.log.append(
            self.now,
            "command_issued",
            {
                "decision_id": decision_id,
                "skill_text": decision.skill_text,
                "command_id": command_id,
                "command": cmd.to_dict(),
                "resolved_object_id": plan.resolved_object_id,
                "changed": True,
                "preempted": preempted,
            },
        )
        self.policy.notify_issued(cmd, plan.resolved_object_id)
        first_chunk_at = self.now + self.config.latency.chunk_latency_s()
        plan.start_step = round(first_chunk_at * self.config.latency.control_rate_hz)
        self._active = _Active(cmd, plan, command_id)
        self._push(first_chunk_at, "chunk", self._active)
        self._fire_command_triggers(decision.skill_text)

    def _process_chunk(self, active: _Active) -> None:
        if active.plan.cancelled:
            return
        span = self.config.latency.chunk_span_s(self.config.h)
        if active.last_chunk_time is not None and self.now - active.last_chunk_time > span + 1e-9:
            self.log.append(
                self.now,
                "gap_detected",
                {"command_id": active.command_id, "delta": self.now - active.last_chunk_time},
            )
        chunk = self.executor.next_chunk(active.plan, self.robot)
        self.log.append(
            self.now,
            "chunk",
            {
                "command_id": active.command_id,
                "index": active.plan.chunks_emitted - 1,
                "start_step": chunk.start_step,
                "span_s": span,
            },
        )
        active.last_chunk_time = self.now
        if not active.plan.complete:
            next_at = self.now + max(span, self.config.latency.chunk_latency_s())
            self._push(next_at, "chunk", active)
        else:
            self._push(self.now + span, "complete", active)

    def _process_complete(self, active: _Active) -> None:
        if active.plan.cancelled:
            return
        plan = active.plan
        outcome = plan.outcome
        detail = None
        if outcome == "success":
            try:
                self.scene, self.robot = apply_completion(
                    self.scene,
                    self.robot,
                    plan.command,
                    plan.resolved_object_id,
                    self.catalog.profile,
                    self.now,
                )
            except EffectError as exc:
                outcome = "failure"
                detail = str(exc)
        if outcome == "success":
            self.log.append(
                self.now,
                "skill_done",
                {
                    "command_id": active.command_id,
                    "command": plan.command.to_dict(),
                    "resolved_object_id": plan.resolved_object_id,
                    "outcome": "success",
                },
            )
            self._skills_done += 1
        else:
            self.log.append(
                self.now,
                "skill_failed",
                {
                    "command_id": active.command_id,
                    "command": plan.command.to_dict(),
                    "resolved_object_id": plan.resolved_object_id,
                    "reason": detail or "outcome_failure",
                },
            )
        self.policy.notify_skill_done(plan.command, outcome)
        self._active = None
        self._last_attempt = (plan.command, self.now)
        self._fire_done_triggers()
        if plan.command.kind == "home" and outcome == "success":
            self._end_trial("done")

    def _fire_command_triggers(self, skill_text: str) -> None:
        for slot in self._watch_command:
            step, fired = slot
            if fired:
                continue
            if step.pattern is not None and step.pattern in skill_text:
                slot[1] = True
                event = UserEvent(step.event.kind, step.event.text, self.now)
                self._push(self.now, "user", (event, step.gt_goal))

    def _fire_done_triggers(self) -> None:
        for slot in self._watch_done:
            step, fired = slot
            if fired:
                continue
            if step.count is not None and self._skills_done >= step.count:
                slot[1] = True
                event = UserEvent(step.event.kind, step.event.text, self.now)
                self._push(self.now, "user", (event, step.gt_goal))

    def _end_trial(self, reason: str) -> None:
        if self.ended:
            return
        excluded = frozenset(getattr(getattr(self.policy, "ctx", None), "excluded_ids", set()))
        reclassified = dict(getattr(getattr(self.policy, "ctx", None), "reclassified", {}))
        satisfied = goal_satisfied(self.scene, self.policy.goal, excluded, reclassified)
        # The config rides along so a log file is replayable on its own.
        self.log.append(
            self.now,
            "trial_end",
            {"reason": reason, "goal_satisfied": satisfied, "config": self.config.to_dict()},
        )
        self.ended = True


def apply_completion(scene, robot, command: SkillCommand, resolved_object_id, profile, now: float):
    """Apply a successful skill's scene effect plus the gripper bookkeeping.

    Shared by the live session and log replay so both project identical
    states from the same records.
    """
    holding_arm = None
    if command.kind == "place" and resolved_object_id is not None:
        for arm, object_id in scene.held_ids().items():
            if object_id == resolved_object_id:
                holding_arm = arm
    scene = apply_skill_effect(scene, command, "success", profile, resolved_object_id).with_time(now)
    if command.kind == "pick" and resolved_object_id is not None:
        arm = scene.object_by_id(resolved_object_id).location.arm or "single"
        robot = robot.with_gripper(arm, 0.0)
    if command.kind == "place" and holding_arm is not None:
        robot = robot.with_gripper(holding_arm, 1.0)
    return scene, robot


def run_session(config: SessionConfig, script: Any = None) -> EventLog:
    """Run one headless session to completion and return its event log."""
    return Session(config, script).run_to_end()


def detect_gaps(log: EventLog) -> list[dict[str, Any]]:
    """Find starved chunk streams.

    A gap exists when consecutive chunks of one command start further apart
    than one chunk's playback span (chunks of different skills are legitimately
    separated by the high-level cadence). Each chunk record carries its span.
    """
    chunks_by_command: dict[str, list[dict[str, Any]]] = {}
    for record in log.records:
        if record["kind"] == "chunk":
            chunks_by_command.setdefault(record["payload"]["command_id"], []).append(record)
    gaps: list[dict[str, Any]] = []
    for command_id, records in sorted(chunks_by_command.items()):
        records.sort(key=lambda r: (r["time"], r["seq"]))
        for a, b in zip(records, records[1:]):
            span = float(a["payload"]["span_s"])
            delta = b["time"] - a["time"]
            if delta > span + 1e-9:
                gaps.append(
                    {"command_id": command_id, "time": b["time"], "delta": delta, "span": span}
                )
    return gaps
