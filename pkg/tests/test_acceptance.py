"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Every tolerance is pinned here; nothing is calibrated elsewhere.
"""

from __future__ import annotations

import random
from fractions import Fraction

from chorebot import datagen, grammar
from chorebot.domain import GoalSpec, Location, MOVE_DIRECTIONS, ObjectFilter, SkillCommand, UserEvent
from chorebot.evaluation import (
    JudgeContext,
    ScriptStep,
    UserScript,
    auto_judge,
    bundled_suite,
    instruction_accuracy,
    run_trial,
    task_progress,
)
from chorebot.executor import LatencyModel
from chorebot.gateway import LogProjector, dump_frame, replay
from chorebot.orchestrator import SessionConfig, detect_gaps, run_session
from chorebot.reasoner import DialogueContext, interjection_effect, parse_goal
from chorebot.simenv import TaskCatalog, apply_skill_effect, goal_pending, load_task


def _ok(name: str) -> None:
    print(f"ACCEPTANCE {name}: PASS")


# -------------------------------------------------------------------------
# 1. Retrigger timing
# -------------------------------------------------------------------------


def test_criterion_1_retrigger_timing():
    log = run_session(SessionConfig(task="table_bussing", seed=3, trial_timeout_s=10.0))
    times = [r["time"] for r in log.of_kind("hl_invoked")]
    assert times == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]

    script = UserScript(
        [ScriptStep("at_time", UserEvent.interjection("leave it alone"), at_time=1.37)]
    )
    log = run_session(SessionConfig(task="table_bussing", seed=3, trial_timeout_s=10.0), script)
    times = [r["time"] for r in log.of_kind("hl_invoked")]
    assert 1.37 in times
    _ok("1 retrigger-timing")


# -------------------------------------------------------------------------
# 2. Real-time feasibility
# -------------------------------------------------------------------------


def test_criterion_2_realtime_feasibility():
    for suite_name in ("constrained_bussing", "interjection_bussing"):
        suite = bundled_suite(suite_name, trials=20)
        for trial in suite.trials:
            config = SessionConfig(task=suite.task, seed=trial.seed, trial_timeout_s=120.0)
            log = run_session(config, trial.script)
            assert detect_gaps(log) == [], f"gaps at defaults on {suite_name} seed {trial.seed}"
    suite = bundled_suite("constrained_bussing", trials=1)

    slow = SessionConfig(
        task="table_bussing",
        seed=0,
        trial_timeout_s=120.0,
        latency=LatencyModel(per_chunk_inference_ms=250.0),
    )
    log = run_session(slow, suite.trials[0].script)
    gaps = detect_gaps(log)
    chunk_counts: dict[str, int] = {}
    for record in log.of_kind("chunk"):
        cid = record["payload"]["command_id"]
        chunk_counts[cid] = chunk_counts.get(cid, 0) + 1
    gap_commands = {g["command_id"] for g in gaps}
    multi_chunk_skills = {cid for cid, n in chunk_counts.items() if n >= 2}
    assert multi_chunk_skills, "expected multi-chunk skills"
    assert multi_chunk_skills <= gap_commands, "every skill must starve at 250 ms"
    _ok("2 realtime-feasibility")


# -------------------------------------------------------------------------
# 3. Constrained-suite gap
# -------------------------------------------------------------------------


def test_criterion_3_constrained_suite_gap():
    suite = bundled_suite("constrained_bussing", trials=20)
    hier_ias = []
    flat_ias = []
    for trial in suite.trials:
        hier, _ = run_trial(suite.task, "hierarchical_reference", trial)
        assert hier.instruction_accuracy == 1.0, f"seed {trial.seed}"
        assert hier.task_progress == 1.0, f"seed {trial.seed}"
        assert hier.violations == 0, f"seed {trial.seed}"
        hier_ias.append(hier.instruction_accuracy)

        flat, _ = run_trial(suite.task, "flat_passthrough", trial)
        assert flat.violations >= 1, f"seed {trial.seed}"
        assert flat.instruction_accuracy <= 0.5, f"seed {trial.seed}"
        flat_ias.append(flat.instruction_accuracy)

    gap = sum(hier_ias) / len(hier_ias) - sum(flat_ias) / len(flat_ias)
    assert gap >= 0.4
    _ok(f"3 constrained-suite-gap (IA gap {gap:.2f})")


# -------------------------------------------------------------------------
# 4. Interjection handling
# -------------------------------------------------------------------------


def _first_changed_after(log, seq: int):
    for record in log.of_kind("command_issued"):
        if record["seq"] > seq and (record["payload"].get("changed") or record["payload"].get("error")):
            return record
    return None


def _scene_at(task: str, seed: int, log, upto_seq: int):
    scene, _, _ = load_task(task, seed)
    catalog = TaskCatalog.for_task(task)
    for record in log.of_kind("skill_done"):
        if record["seq"] >= upto_seq:
            break
        cmd = SkillCommand.from_dict(record["payload"]["command"])
        if cmd.kind in ("pick", "place"):
            scene = apply_skill_effect(
                scene, cmd, "success", catalog.profile, record["payload"].get("resolved_object_id")
            )
    return scene


def test_criterion_4_interjection_handling():
    suite = bundled_suite("interjection_bussing", trials=20)
    catalog = TaskCatalog.for_task(suite.task)
    for trial in suite.trials:
        result, log = run_trial(suite.task, "hierarchical_reference", trial)
        interjections = [
            r for r in log.of_kind("user_event") if r["payload"]["kind"] == "interjection"
        ]
        assert interjections, f"seed {trial.seed}: interjection never fired"
        record = interjections[0]
        text = record["payload"]["text"]

        # the judge's expected repair, computed independently from the log
        scene = _scene_at(suite.task, trial.seed, log, record["seq"])
        ctx = DialogueContext()
        picks = [
            r
            for r in log.of_kind("command_issued")
            if r["seq"] < record["seq"]
            and r["payload"].get("changed")
            and r["payload"].get("command", {}).get("kind") == "pick"
        ]
        if picks:
            ctx.last_target_id = picks[-1]["payload"].get("resolved_object_id")
        goal = trial.script.steps[0].gt_goal or parse_goal(
            log.of_kind("user_event")[0]["payload"]["text"], catalog
        )
        effect = interjection_effect(text, scene, ctx, goal, catalog)

        first_after = _first_changed_after(log, record["seq"])
        assert first_after is not None, f"seed {trial.seed}: no decision after interjection"
        issued_cmd = SkillCommand.from_dict(first_after["payload"]["command"])

        if effect.repair is not None:
            assert issued_cmd == effect.repair, (
                f"seed {trial.seed}: expected {effect.repair}, got {issued_cmd}"
            )
        else:
            excluded_names = {
                scene.object_by_id(i).display_name.lower() for i in effect.exclude_ids
            }
            if effect.halt:
                assert issued_cmd.kind in ("place", "home")
            else:
                assert issued_cmd.object_phrase not in excluded_names

        # interjection latency: the repair lands within one high-level cycle
        assert first_after["time"] <= record["time"] + 1.0 + 0.5  # cycle + modeled latency

        # after Resume the prior pending set is restored exactly: everything
        # pending before the interjection (minus its target) ends placed
        resumes = [r for r in log.of_kind("user_event") if r["payload"]["kind"] == "resume"]
        pending_before = {
            o.id
            for o in goal_pending(scene, goal).to_pick
        } | {o.id for o, _ in goal_pending(scene, goal).to_place}
        expected = pending_before - set(effect.exclude_ids)
        if resumes and not effect.halt:
            final_scene = _scene_at(suite.task, trial.seed, log, 10**9)
            placed = {
                o.id
                for o in final_scene.objects
                if o.location.kind == "container"
            }
            assert expected <= placed, f"seed {trial.seed}: pending set not restored"
            # nothing excluded sneaks into a container
            for object_id in effect.exclude_ids:
                assert final_scene.object_by_id(object_id).location.kind == "surface"
        assert result.instruction_accuracy == 1.0
    _ok("4 interjection-handling (20/20)")


# -------------------------------------------------------------------------
# 5. Ablation ordering
# -------------------------------------------------------------------------


def test_criterion_5_ablation_ordering():
    for name in ("constrained_bussing", "constrained_sandwich", "grocery_requests"):
        suite = bundled_suite(name, trials=20)
        hier = []
        ablated = []
        for trial in suite.trials:
            result = run_trial(suite.task, "hierarchical_reference", trial)[0]
            assert result.instruction_accuracy == 1.0, (name, trial.seed)
            hier.append(result.instruction_accuracy)
            ablated.append(
                run_trial(suite.task, "reference_no_constraints", trial)[0].instruction_accuracy
            )
        assert sum(ablated) / len(ablated) < sum(hier) / len(hier), name
    _ok("5 ablation-ordering")


# -------------------------------------------------------------------------
# 6. Metrics oracle
# -------------------------------------------------------------------------


def test_criterion_6_metrics_oracle():
    rng = random.Random(20240901)
    for fixture in range(10):
        total = rng.randint(1, 40)
        correct = rng.randint(0, total)
        marks = [{"correct": i < correct} for i in range(total)]
        assert instruction_accuracy(marks) == float(Fraction(correct, total))

        seed = rng.randint(0, 10_000)
        scene, _, _ = load_task("table_bussing", seed)
        goal = GoalSpec(
            destination_map={"trash": "trash_bin"},
            include=ObjectFilter(classes=frozenset({"trash"})),
        )
        trash = sorted((o for o in scene.objects if o.object_class == "trash"), key=lambda o: o.id)
        placed = rng.randint(0, len(trash))
        for obj in trash[:placed]:
            scene = scene.with_object_moved(obj.id, Location.container("trash_bin"))
        assert task_progress(scene, goal) == float(Fraction(placed, len(trash)))
    _ok("6 metrics-oracle")


# -------------------------------------------------------------------------
# 7. Datagen validity
# -------------------------------------------------------------------------


def test_criterion_7_datagen_validity():
    episodes = datagen.demo_episodes("sandwich_making", 10, 3) + datagen.demo_episodes(
        "grocery_shopping", 10, 3
    )
    records = datagen.build_dataset(episodes, per_segment=12, seed=11)
    assert len(records) >= 1000
    records = records[:1000] if len(records) > 1000 else records

    by_id = {e.id: e for e in episodes}
    scenario_counts: dict[str, int] = {}
    for record in records:
        episode = by_id[record.episode_id]
        scene = episode.frames[record.frame_index].scene
        catalog = TaskCatalog.for_task(episode.task)
        assert datagen.validate_interaction(record, scene, catalog) == []
        scenario_counts[record.scenario_type] = scenario_counts.get(record.scenario_type, 0) + 1
    for scenario in ("negative_task", "situated_correction", "specific_constraint", "direct_request"):
        assert scenario_counts.get(scenario, 0) >= 50, scenario_counts

    sample = random.Random(99).sample(records, 100)
    for record in sample:
        episode = by_id[record.episode_id]
        scene = episode.frames[record.frame_index].scene
        catalog = TaskCatalog.for_task(episode.task)
        goal = parse_goal(record.user_prompt, catalog)
        cmd = grammar.parse_command(record.skill_label)
        assert auto_judge(cmd, goal, scene, JudgeContext(), catalog)
    _ok(f"7 datagen-validity ({len(records)} records, {scenario_counts})")


# -------------------------------------------------------------------------
# 8. Determinism & replay
# -------------------------------------------------------------------------


def test_criterion_8_determinism_and_replay(tmp_path):
    script = UserScript(
        [
            ScriptStep(
                "at_time",
                UserEvent.prompt("clean up only the trash, but not dishes"),
                at_time=0.0,
            ),
            ScriptStep("on_skill_done", UserEvent.interjection("that's not trash"), count=1),
            ScriptStep("on_skill_done", UserEvent.resume(), count=2),
        ]
    )
    config = SessionConfig(task="table_bussing", seed=13, trial_timeout_s=120.0)
    a = run_session(config, script)
    b = run_session(config, script)
    assert a.hash() == b.hash()

    path = tmp_path / "trial.jsonl"
    a.save(str(path))
    projector = LogProjector("table_bussing", 13)
    live = [dump_frame(projector.initial_frame())]
    for record in a.records:
        live.extend(dump_frame(f) for f in projector.feed(record))
    replayed = [dump_frame(f) for f in replay(str(path))]
    assert replayed == live
    _ok("8 determinism-replay")


# -------------------------------------------------------------------------
# 9. Grammar coverage
# -------------------------------------------------------------------------


def test_criterion_9_grammar_coverage():
    for entry in grammar.skill_list():
        grammar.parse_command(entry)

    rng = random.Random(7)
    lexicon = sorted(grammar.object_lexicon())
    destinations = ["trash_bin", "bussing_bin", "recycling_bin", "basket", "sandwich_stack", "table", "shelf"]

    def random_command() -> SkillCommand:
        kind = rng.choice(["pick", "place", "place_it", "move", "rotate", "gripper", "home", "done"])
        if kind == "pick":
            return SkillCommand(kind="pick", object_phrase=rng.choice(lexicon))
        if kind == "place":
            return SkillCommand(
                kind="place", object_phrase=rng.choice(lexicon), destination=rng.choice(destinations)
            )
        if kind == "place_it":
            return SkillCommand(kind="place", destination=rng.choice(destinations[:5]))
        if kind == "move":
            return SkillCommand(
                kind="move",
                direction=rng.choice(MOVE_DIRECTIONS),
                arm=rng.choice([None, "left", "right"]),
            )
        if kind == "rotate":
            return SkillCommand(kind="rotate", rotation=rng.choice(["cw", "ccw"]))
        if kind == "gripper":
            return SkillCommand(kind="gripper", gripper_action=rng.choice(["open", "close"]))
        return SkillCommand(kind=kind)

    for _ in range(1000):
        cmd = random_command()
        assert grammar.parse_command(grammar.render_command(cmd)) == cmd
    _ok("9 grammar-coverage")
