"""Metrics, automated judging, scripted-user trials, and the benchmark harness.

A trial is judged by replaying its event log against an independent
ground-truth state: the judge tracks its own goal timeline (from the script),
its own exclusion/reclassification state (from the canonical interjection
semantics), and its own scene reconstruction (from the logged effects). Every
*newly issued* command gets one mark; rejected decisions (out-of-grammar,
backend failures) are marked incorrect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from . import grammar
from .domain import GoalSpec, SceneState, SkillCommand, UserEvent
from .orchestrator import EventLog, SessionConfig, run_session
from .reasoner import (
    DialogueContext,
    apply_effect_to_goal,
    interjection_effect,
    parse_goal,
)
from .simenv import TaskCatalog, apply_skill_effect, goal_pending, load_task, match_object, ObjectNotFound


class EmptyGoal(ValueError):
    pass


# ---------------------------------------------------------------------------
# scripted users
# ---------------------------------------------------------------------------


@dataclass
class ScriptStep:
    """One scripted user action and when it fires."""

    trigger_kind: str  # at_time | on_command_matching | on_skill_done
    event: UserEvent
    at_time: float = 0.0
    pattern: Optional[str] = None
    count: Optional[int] = None
    gt_goal: Optional[GoalSpec] = None

    def to_dict(self) -> dict[str, Any]:
        trigger: dict[str, Any] = {"kind": self.trigger_kind}
        if self.trigger_kind == "at_time":
            trigger["time"] = self.at_time
        elif self.trigger_kind == "on_command_matching":
            trigger["pattern"] = self.pattern
        elif self.trigger_kind == "on_skill_done":
            trigger["count"] = self.count
        data: dict[str, Any] = {"trigger": trigger, "event": self.event.to_dict()}
        if self.gt_goal is not None:
            data["gt_goal"] = self.gt_goal.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptStep":
        trigger = data["trigger"]
        event = UserEvent.from_dict(data["event"])
        return cls(
            trigger_kind=trigger["kind"],
            event=event,
            at_time=float(trigger.get("time", 0.0)),
            pattern=trigger.get("pattern"),
            count=trigger.get("count"),
            gt_goal=GoalSpec.from_dict(data["gt_goal"]) if "gt_goal" in data else None,
        )


@dataclass
class UserScript:
    steps: list[ScriptStep] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UserScript":
        return cls([ScriptStep.from_dict(s) for s in data.get("steps", [])])


@dataclass
class SuiteTrial:
    seed: int
    script: UserScript

    def to_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, "script": self.script.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SuiteTrial":
        return cls(int(data["seed"]), UserScript.from_dict(data["script"]))


@dataclass
class Suite:
    name: str
    task: str
    trials: list[SuiteTrial]

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "task": self.task, "trials": [t.to_dict() for t in self.trials]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Suite":
        return cls(data["name"], data["task"], [SuiteTrial.from_dict(t) for t in data["trials"]])

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "Suite":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# judging
# ---------------------------------------------------------------------------


@dataclass
class JudgeContext:
    """The judge's own ground-truth dialogue state, independent of the policy."""

    dialogue: DialogueContext = field(default_factory=DialogueContext)
    expected_repair: Optional[SkillCommand] = None


def auto_judge(
    decision: SkillCommand | str,
    goal_now: GoalSpec,
    scene: SceneState,
    ctx: JudgeContext,
    catalog: TaskCatalog,
) -> bool:
    """Is this decision one of the currently admissible actions?"""
    if isinstance(decision, str):
        try:
            cmd = grammar.parse_command(decision)
        except grammar.OutOfGrammar:
            return False
    else:
        cmd = decision

    if ctx.expected_repair is not None:
        return cmd == ctx.expected_repair

    excluded = frozenset(ctx.dialogue.excluded_ids)
    reclassified = ctx.dialogue.reclassified
    pending = goal_pending(scene, goal_now, excluded, reclassified)

    if cmd.kind == "pick":
        try:
            obj = match_object(scene, cmd.object_phrase or "", ("surface",))
        except ObjectNotFound:
            return False
        return any(o.id == obj.id for o in pending.to_pick)

    if cmd.kind == "place":
        held = scene.held_ids()
        if not held:
            return False
        target = None
        if cmd.object_phrase:
            phrase = cmd.object_phrase.lower()
            for obj in sorted((scene.object_by_id(i) for i in held.values()), key=lambda o: o.id):
                name = obj.display_name.lower()
                if name == phrase or name.endswith(" " + phrase) or obj.object_class == phrase:
                    target = obj
                    break
        else:
            target = scene.object_by_id(held[sorted(held)[0]])
        if target is None:
            return False
        eff = replace(target, object_class=reclassified.get(target.id, target.object_class))
        rejected = target.id in excluded or goal_now.excludes(eff) or not goal_now.includes(eff)
        if rejected:
            # Putting a rejected held object back down is the one correct move.
            return cmd.destination == catalog.primary_surface
        return any(o.id == target.id and cmd.destination == dest for o, dest in pending.to_place)

    if cmd.kind in ("home", "done"):
        for arm, object_id in scene.held_ids().items():
            obj = scene.object_by_id(object_id)
            eff = replace(obj, object_class=reclassified.get(obj.id, obj.object_class))
            if object_id in excluded or goal_now.excludes(eff):
                return False
        return pending.done

    # Bare primitives are only admissible as demanded repairs, handled above.
    return False


def instruction_accuracy(marks: list[dict[str, Any]]) -> float:
    """Fraction of marked decisions judged correct."""
    if not marks:
        raise ValueError("no marks")
    return sum(1 for m in marks if m["correct"]) / len(marks)


def task_progress(
    final_scene: SceneState,
    goal: GoalSpec,
    excluded_ids: frozenset[str] = frozenset(),
    reclassified: Optional[dict[str, str]] = None,
) -> float:
    """Fraction of goal objects at their correct destination at trial end."""
    reclassified = reclassified or {}

    def effective(obj):
        return replace(obj, object_class=reclassified.get(obj.id, obj.object_class))

    if goal.required_items:
        total = sum(goal.required_items.values())
        if total == 0:
            if goal.halt:
                return 1.0
            raise EmptyGoal("goal requires nothing")
        remaining = dict(goal.required_items)
        placed = 0
        destinations = set(goal.destination_map.values())
        for obj in final_scene.objects:
            if obj.location.kind != "container" or obj.location.name not in destinations:
                continue
            eff = effective(obj)
            if obj.id in excluded_ids or goal.excludes(eff):
                continue  # forbidden item in the stack adds no progress
            from .domain import required_key_for

            key = required_key_for(eff, remaining)
            if key and remaining.get(key, 0) > 0:
                remaining[key] -= 1
                placed += 1
        return placed / total

    included = [
        o
        for o in final_scene.objects
        if o.id not in excluded_ids and goal.includes(effective(o))
    ]
    if not included:
        if goal.halt:
            return 1.0
        raise EmptyGoal("goal includes no objects")
    placed = 0
    for obj in included:
        dest = goal.destination_map.get(effective(obj).object_class)
        if dest and obj.location.kind == "container" and obj.location.name == dest:
            placed += 1
    return placed / len(included)


@dataclass
class TrialResult:
    task: str
    policy: str
    seed: int
    marks: list[dict[str, Any]]
    instruction_accuracy: float
    task_progress: float
    violations: int
    log_ref: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "policy": self.policy,
            "seed": self.seed,
            "marks": self.marks,
            "instruction_accuracy": self.instruction_accuracy,
            "task_progress": self.task_progress,
            "violations": self.violations,
            "log_ref": self.log_ref,
        }


def judge_log(
    log: EventLog,
    task: str,
    seed: int,
    script: UserScript,
    policy: str = "",
    log_ref: Optional[str] = None,
) -> TrialResult:
    """Replay a completed log against ground truth and score it."""
    catalog = TaskCatalog.for_task(task)
    scene, _, _ = load_task(task, seed)
    from .reasoner import default_goal

    goal = default_goal(catalog)
    ctx = JudgeContext()
    marks: list[dict[str, Any]] = []
    violations = 0
    step_queue = list(script.steps)

    def matching_step(event: dict[str, Any]) -> Optional[ScriptStep]:
        for i, step in enumerate(step_queue):
            if step.event.kind == event["kind"] and step.event.text == event.get("text"):
                return step_queue.pop(i)
        return None

    for record in log.records:
        kind = record["kind"]
        payload = record["payload"]
        if kind == "user_event":
            step = matching_step(payload)
            gt_goal = step.gt_goal if step else None
            if payload["kind"] == "prompt":
                goal = gt_goal if gt_goal is not None else parse_goal(payload.get("text", ""), catalog)
                ctx.dialogue.active_prompt = payload.get("text", "")
                ctx.expected_repair = None
            elif payload["kind"] == "interjection":
                effect = interjection_effect(
                    payload.get("text", ""), scene, ctx.dialogue, goal, catalog
                )
                ctx.dialogue.excluded_ids |= set(effect.exclude_ids)
                ctx.dialogue.reclassified.update(effect.reclassify)
                goal = gt_goal if gt_goal is not None else apply_effect_to_goal(goal, effect, scene)
                ctx.expected_repair = effect.repair
            elif payload["kind"] == "resume":
                ctx.expected_repair = None
        elif kind == "command_issued":
            error = payload.get("error")
            changed = payload.get("changed", False)
            if not error and not changed:
                continue
            if error:
                correct = False
                cmd = None
            else:
                cmd = SkillCommand.from_dict(payload["command"])
                correct = auto_judge(cmd, goal, scene, ctx, catalog)
            marks.append(
                {
                    "decision_id": payload.get("decision_id"),
                    "skill_text": payload.get("skill_text", ""),
                    "time": record["time"],
                    "correct": correct,
                }
            )
            if ctx.expected_repair is not None and not error:
                ctx.expected_repair = None
            if cmd is not None and cmd.kind == "pick" and payload.get("resolved_object_id"):
                ctx.dialogue.last_target_id = payload["resolved_object_id"]
        elif kind == "skill_done":
            cmd = SkillCommand.from_dict(payload["command"])
            resolved = payload.get("resolved_object_id")
            if cmd.kind == "pick" and resolved is not None:
                obj = scene.object_by_id(resolved)
                eff = replace(
                    obj, object_class=ctx.dialogue.reclassified.get(obj.id, obj.object_class)
                )
                if obj.id in ctx.dialogue.excluded_ids or goal.excludes(eff):
                    violations += 1
            if cmd.kind in ("pick", "place"):
                scene = apply_skill_effect(scene, cmd, "success", catalog.profile, resolved)

    ia = instruction_accuracy(marks) if marks else 0.0
    try:
        tp = task_progress(
            scene, goal, frozenset(ctx.dialogue.excluded_ids), ctx.dialogue.reclassified
        )
    except EmptyGoal:
        tp = 1.0 if goal.halt else 0.0
    return TrialResult(task, policy, seed, marks, ia, tp, violations, log_ref)


def run_trial(
    task: str,
    policy: str,
    trial: SuiteTrial,
    config_overrides: Optional[dict[str, Any]] = None,
) -> tuple[TrialResult, EventLog]:
    overrides = config_overrides or {}
    config = SessionConfig(task=task, policy=policy, seed=trial.seed, **overrides)
    log = run_session(config, trial.script)
    return judge_log(log, task, trial.seed, trial.script, policy=policy), log


# ---------------------------------------------------------------------------
# bundled suites
# ---------------------------------------------------------------------------

_BUSSING_PROMPTS = (
    "can you clean up only the trash, but not dishes?",
    "can you clean up only the dishes, but not trash?",
    "bus all the yellowish things",
)

_SANDWICH_PROMPTS = (
    "can you make me a vegetarian sandwich? I'm allergic to pickles",
    "hi robot, can you make me a sandwich with cheese, roast beef, and lettuce?",
    "can you make me a sandwich? I'm lactose intolerant",
)

_GROCERY_PROMPTS = (
    "hey robot, can you get me some Twix and Skittles?",
    "can you get me something sweet?",
    "can you grab me something to drink?",
    "hey robot, can you get me some chips? I'm preparing for a movie night",
)


def _prompt_step(text: str, catalog: TaskCatalog) -> ScriptStep:
    return ScriptStep(
        "at_time",
        UserEvent.prompt(text),
        at_time=0.0,
        gt_goal=parse_goal(text, catalog),
    )


def constrained_bussing_suite(trials: int = 20, base_seed: int = 0) -> Suite:
    catalog = TaskCatalog.for_task("table_bussing")
    out = []
    for i in range(trials):
        prompt = _BUSSING_PROMPTS[i % len(_BUSSING_PROMPTS)]
        out.append(SuiteTrial(base_seed + i, UserScript([_prompt_step(prompt, catalog)])))
    return Suite("constrained_bussing", "table_bussing", out)


def interjection_bussing_suite(trials: int = 20, base_seed: int = 0) -> Suite:
    catalog = TaskCatalog.for_task("table_bussing")
    out = []
    variants = ("not_trash", "leave_alone", "leave_rest")
    for i in range(trials):
        variant = variants[i % len(variants)]
        steps = [_prompt_step("can you clean up the table?", catalog)]
        if variant == "not_trash":
            steps.append(
                ScriptStep("on_skill_done", UserEvent.interjection("that's not trash"), count=1)
            )
            steps.append(ScriptStep("on_skill_done", UserEvent.resume(), count=2))
        elif variant == "leave_alone":
            steps.append(
                ScriptStep(
                    "on_command_matching", UserEvent.interjection("leave it alone"), pattern="pick up"
                )
            )
            steps.append(ScriptStep("on_skill_done", UserEvent.resume(), count=2))
        else:
            steps.append(
                ScriptStep("on_skill_done", UserEvent.interjection("leave the rest"), count=2)
            )
        out.append(SuiteTrial(base_seed + i, UserScript(steps)))
    return Suite("interjection_bussing", "table_bussing", out)


def constrained_sandwich_suite(trials: int = 20, base_seed: int = 0) -> Suite:
    catalog = TaskCatalog.for_task("sandwich_making")
    out = []
    for i in range(trials):
        if i % 4 == 3:
            steps = [_prompt_step("can you make me a sandwich?", catalog)]
            steps.append(
                ScriptStep("on_skill_done", UserEvent.interjection("that's all, no more"), count=4)
            )
        else:
            prompt = _SANDWICH_PROMPTS[i % len(_SANDWICH_PROMPTS)]
            steps = [_prompt_step(prompt, catalog)]
        out.append(SuiteTrial(base_seed + i, UserScript(steps)))
    return Suite("constrained_sandwich", "sandwich_making", out)


def grocery_requests_suite(trials: int = 20, base_seed: int = 0) -> Suite:
    catalog = TaskCatalog.for_task("grocery_shopping")
    out = []
    for i in range(trials):
        prompt = _GROCERY_PROMPTS[i % len(_GROCERY_PROMPTS)]
        steps = [_prompt_step(prompt, catalog)]
        if i % 2 == 1:
            steps.append(
                ScriptStep(
                    "on_skill_done", UserEvent.interjection("I also want some Kitkat"), count=2
                )
            )
        out.append(SuiteTrial(base_seed + i, UserScript(steps)))
    return Suite("grocery_requests", "grocery_shopping", out)


BUNDLED_SUITES = {
    "constrained_bussing": constrained_bussing_suite,
    "interjection_bussing": interjection_bussing_suite,
    "constrained_sandwich": constrained_sandwich_suite,
    "grocery_requests": grocery_requests_suite,
}


def bundled_suite(name: str, trials: int = 20, base_seed: int = 0) -> Suite:
    try:
        builder = BUNDLED_SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite: {name!r} (have {sorted(BUNDLED_SUITES)})") from None
    return builder(trials, base_seed)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def run_benchmark(
    policies: list[str],
    suites: list[Suite],
    trials_per_cell: int = 20,
    seed: int = 0,
    config_overrides: Optional[dict[str, Any]] = None,
) -> dict[str, Any]:
    """Per-(suite, policy) mean metrics plus the hierarchical-vs-flat gap."""
    cells: dict[str, dict[str, Any]] = {}
    for suite in suites:
        trials = suite.trials[:trials_per_cell]
        for policy in policies:
            results = [run_trial(suite.task, policy, t, config_overrides)[0] for t in trials]
            cells[f"{suite.name}/{policy}"] = {
                "suite": suite.name,
                "task": suite.task,
                "policy": policy,
                "trials": len(results),
                "mean_instruction_accuracy": sum(r.instruction_accuracy for r in results) / len(results),
                "mean_task_progress": sum(r.task_progress for r in results) / len(results),
                "total_violations": sum(r.violations for r in results),
                "per_trial": [
                    {
                        "seed": r.seed,
                        "instruction_accuracy": r.instruction_accuracy,
                        "task_progress": r.task_progress,
                        "violations": r.violations,
                    }
                    for r in results
                ],
            }
    report: dict[str, Any] = {"seed": seed, "cells": cells, "gaps": {}}
    for suite in suites:
        hi = cells.get(f"{suite.name}/hierarchical_reference")
        flat = cells.get(f"{suite.name}/flat_passthrough")
        if hi and flat:
            report["gaps"][suite.name] = (
                hi["mean_instruction_accuracy"] - flat["mean_instruction_accuracy"]
            )
    return report


def format_report(report: dict[str, Any]) -> str:
    """Plain-text table: one row per suite, one column group per policy."""
    cells = report["cells"]
    suites = sorted({c["suite"] for c in cells.values()})
    policies = sorted({c["policy"] for c in cells.values()})
    width = max(len(p) for p in policies) + 2
    lines = []
    header = "suite".ljust(24) + "".join(p.ljust(max(width, 18)) for p in policies)
    lines.append(header)
    lines.append("-" * len(header))
    for suite in suites:
        row = suite.ljust(24)
        for policy in policies:
            cell = cells.get(f"{suite}/{policy}")
            if cell is None:
                row += "-".ljust(max(width, 18))
            else:
                row += (
                    f"IA={cell['mean_instruction_accuracy']:.2f} "
                    f"TP={cell['mean_task_progress']:.2f} "
                    f"V={cell['total_violations']}"
                ).ljust(max(width, 18))
        lines.append(row)
    if report.get("gaps"):
        lines.append("")
        for suite, gap in sorted(report["gaps"].items()):
            lines.append(f"IA gap (hierarchical_reference - flat_passthrough) on {suite}: {gap:+.2f}")
    return "\n".join(lines)
