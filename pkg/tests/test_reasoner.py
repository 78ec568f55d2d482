from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from chorebot import grammar
from chorebot.domain import Location, SkillCommand
from chorebot.reasoner import (
    DialogueContext,
    HierarchicalAgent,
    InterjectionEntry,
    decide,
    default_goal,
    handle_interjection,
    interjection_effect,
    interpret_prompt,
    parse_goal,
)
from chorebot.simenv import TaskCatalog, apply_skill_effect, load_task

BUSSING = TaskCatalog.for_task("table_bussing")
SANDWICH = TaskCatalog.for_task("sandwich_making")
GROCERY = TaskCatalog.for_task("grocery_shopping")


# --- parse_goal -----------------------------------------------------------


def test_only_trash_prompt():
    goal = parse_goal("clean up only the trash, but not dishes", BUSSING)
    assert goal.include.classes == frozenset({"trash"})
    assert goal.exclude.classes == frozenset({"dish", "utensil"})


def test_only_dishes_prompt():
    goal = parse_goal("can you clean up only the dishes, but not trash?", BUSSING)
    assert goal.include.classes == frozenset({"dish", "utensil"})
    assert goal.exclude.classes == frozenset({"trash"})


def test_yellowish_prompt():
    goal = parse_goal("bus all the yellowish things", BUSSING)
    assert goal.include.color_tags == frozenset({"yellowish"})
    assert goal.exclude.without_color_tags == frozenset({"yellowish"})


def test_vegetarian_allergy_prompt():
    goal = parse_goal("can you make me a vegetarian sandwich? I'm allergic to pickles", SANDWICH)
    assert goal.required_items["bread"] == 2
    assert "meat" in goal.forbidden_attributes
    assert "pickle" in {n.lower() for n in (goal.exclude.names or frozenset())}
    # vegetarian ingredients stay; meat items are filtered out of the order
    assert "roast beef" not in goal.required_items
    assert "ham" not in goal.required_items
    assert "pickle" not in goal.required_items
    assert "lettuce" in goal.required_items


def test_listed_ingredients_prompt():
    goal = parse_goal("can you make me a sandwich with cheese, roast beef, and lettuce?", SANDWICH)
    assert set(goal.required_items) == {"bread", "cheese", "roast beef", "lettuce"}


def test_lactose_intolerant_prompt():
    goal = parse_goal("can you make me a sandwich? I'm lactose intolerant", SANDWICH)
    assert "dairy" in goal.forbidden_attributes
    assert "cheese" not in goal.required_items


def test_grocery_requests():
    goal = parse_goal("hey robot, can you get me some Twix and Skittles?", GROCERY)
    assert set(goal.required_items) == {"twix", "skittles"}
    goal = parse_goal("can you get me something sweet?", GROCERY)
    assert set(goal.required_items) == {"attr:sweet"}
    goal = parse_goal("can you grab me something to drink?", GROCERY)
    assert set(goal.required_items) == {"attr:drink"}


def test_unrecognized_prompt_degrades_to_default_with_clarification():
    interp = interpret_prompt("do a backflip", BUSSING)
    assert not interp.recognized
    assert interp.goal == default_goal(BUSSING)
    assert interp.utterance  # clarification


# --- decide ---------------------------------------------------------------


def only_trash_goal():
    return parse_goal("clean up only the trash, but not dishes", BUSSING)


def test_decide_picks_first_trash_in_id_order():
    scene, _, _ = load_task("table_bussing", 7)
    decision = decide(scene, DialogueContext(), only_trash_goal(), BUSSING)
    first_trash = min(
        (o for o in scene.objects if o.object_class == "trash"), key=lambda o: o.id
    )
    cmd = grammar.parse_command(decision.skill_text)
    assert cmd.kind == "pick"
    assert cmd.object_phrase == first_trash.display_name.lower()


def test_decide_places_held_object_to_mapped_destination():
    scene, robot, goal = load_task("table_bussing", 7)
    bowl_like = next(o for o in scene.objects if o.object_class == "dish")
    scene = scene.with_object_moved(bowl_like.id, Location.gripper("single"))
    decision = decide(scene, DialogueContext(), goal, BUSSING)
    cmd = grammar.parse_command(decision.skill_text)
    assert cmd.kind == "place"
    assert cmd.destination == "bussing_bin"


def test_decide_emits_home_with_all_done_when_nothing_pending():
    scene, _, _ = load_task("table_bussing", 7)
    for obj in list(scene.objects):
        dest = "trash_bin" if obj.object_class == "trash" else "bussing_bin"
        scene = scene.with_object_moved(obj.id, Location.container(dest))
    decision = decide(scene, DialogueContext(), default_goal(BUSSING), BUSSING)
    assert decision.skill_text == "go back to home position"
    assert decision.utterance == "All done!"


def test_decide_is_deterministic():
    scene, _, _ = load_task("table_bussing", 11)
    goal = only_trash_goal()
    a = decide(scene, DialogueContext(), goal, BUSSING)
    b = decide(scene, DialogueContext(), goal, BUSSING)
    assert a == b


# --- interjections --------------------------------------------------------


def held_scene(seed=7):
    scene, robot, goal = load_task("table_bussing", seed)
    dish = next(o for o in scene.objects if o.object_class == "dish")
    return scene.with_object_moved(dish.id, Location.gripper("single")), dish, goal


def test_thats_not_trash_returns_held_object_to_table():
    scene, dish, goal = held_scene()
    ctx = DialogueContext()
    ctx.interjection_stack.append(InterjectionEntry("that's not trash", 1.0))
    ctx2, goal2, immediate = handle_interjection("that's not trash", scene, ctx, goal, BUSSING)
    cmd = grammar.parse_command(immediate.skill_text)
    assert cmd.kind == "place"
    assert cmd.destination == "table"
    assert dish.id in ctx2.excluded_ids
    assert ctx2.reclassified[dish.id] == "dish"


def test_leave_it_alone_excludes_last_target_and_moves_on():
    scene, _, goal = load_task("table_bussing", 7)
    first = min(scene.objects, key=lambda o: o.id)
    ctx = DialogueContext(last_target_id=first.id)
    ctx.interjection_stack.append(InterjectionEntry("leave it alone", 1.0))
    ctx2, goal2, immediate = handle_interjection("leave it alone", scene, ctx, goal, BUSSING)
    assert first.id in ctx2.excluded_ids
    cmd = grammar.parse_command(immediate.skill_text)
    assert cmd.kind == "pick"
    assert cmd.object_phrase != first.display_name.lower()


def test_leave_the_rest_halts_after_current_placement():
    scene, dish, goal = held_scene()
    ctx = DialogueContext()
    ctx.interjection_stack.append(InterjectionEntry("leave the rest", 2.0))
    ctx2, goal2, immediate = handle_interjection("leave the rest", scene, ctx, goal, BUSSING)
    assert goal2.halt
    cmd = grammar.parse_command(immediate.skill_text)
    assert cmd.kind == "place"  # finish the held object first
    after = apply_skill_effect(scene, cmd, "success", BUSSING.profile, dish.id)
    next_decision = decide(after, ctx2, goal2, BUSSING)
    assert next_decision.skill_text == "go back to home position"


def test_i_also_want_kitkat_appends_to_required_items():
    scene, _, _ = load_task("grocery_shopping", 3)
    goal = parse_goal("can you get me some Twix?", GROCERY)
    ctx = DialogueContext()
    ctx.interjection_stack.append(InterjectionEntry("I also want some Kitkat", 2.0))
    ctx2, goal2, _ = handle_interjection("I also want some Kitkat", scene, ctx, goal, GROCERY)
    assert goal2.required_items.get("kitkat") == 1
    assert goal2.required_items.get("twix") == 1
    assert ctx2.added_requests.get("kitkat") == 1


def test_allergy_interjection_extends_forbidden_and_confirms():
    scene, _, goal = load_task("sandwich_making", 3)
    ctx = DialogueContext()
    effect = interjection_effect("I'm lactose intolerant", scene, ctx, goal, SANDWICH)
    assert "dairy" in effect.forbidden
    assert effect.utterance == "Sure, I won't put cheese on it."


def test_atomic_interjection_executes_as_repair():
    scene, _, goal = load_task("table_bussing", 7)
    effect = interjection_effect("move to the left", scene, DialogueContext(), goal, BUSSING)
    assert effect.repair == SkillCommand(kind="move", direction="left")


def test_unmatched_interjection_is_clarification_only():
    scene, _, goal = load_task("table_bussing", 7)
    ctx = DialogueContext()
    ctx.interjection_stack.append(InterjectionEntry("what is the meaning of life", 1.0))
    ctx2, goal2, immediate = handle_interjection(
        "what is the meaning of life", scene, ctx, goal, BUSSING
    )
    assert goal2 == goal
    assert ctx2.excluded_ids == set()
    assert immediate.utterance and "rephrase" in immediate.utterance.lower()


def test_resume_pops_handled_entries_only():
    agent = HierarchicalAgent(BUSSING)
    scene, _, _ = load_task("table_bussing", 7)
    agent.on_interjection("leave the rest", scene, 1.0)
    assert agent.ctx.interjection_stack and agent.ctx.interjection_stack[0].handled
    agent.ctx.interjection_stack.append(InterjectionEntry("pending one", 2.0))
    agent.on_resume(scene, 3.0)
    assert [e.text for e in agent.ctx.interjection_stack] == ["pending one"]


# --- properties -----------------------------------------------------------

PROMPTS = (
    "clean up only the trash, but not dishes",
    "can you clean up only the dishes, but not trash?",
    "bus all the yellowish things",
)


_SAFETY_CASES = tuple(
    ("table_bussing", p) for p in PROMPTS
) + (
    ("sandwich_making", "can you make me a vegetarian sandwich? I'm allergic to pickles"),
    ("sandwich_making", "can you make me a sandwich? I'm lactose intolerant"),
    ("sandwich_making", "can you make me a sandwich with cheese, roast beef, and lettuce?"),
    ("grocery_shopping", "can you get me some Twix and Skittles?"),
    ("grocery_shopping", "can you get me something sweet?"),
    ("grocery_shopping", "can you get me some chips? Nothing sweet though."),
)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 60), st.sampled_from(_SAFETY_CASES))
def test_constraint_safety_no_pick_ever_targets_excluded(seed, case):
    task, prompt = case
    catalog = TaskCatalog.for_task(task)
    scene, robot, _ = load_task(task, seed)
    goal = parse_goal(prompt, catalog)
    ctx = DialogueContext()
    for _ in range(4 * len(scene.objects) + 2):
        decision = decide(scene, ctx, goal, catalog)
        cmd = grammar.parse_command(decision.skill_text)
        if cmd.kind == "home":
            break
        if cmd.kind == "pick":
            from chorebot.simenv import match_object

            target = match_object(scene, cmd.object_phrase or "", ("surface",))
            assert not goal.excludes(target), f"picked excluded {target.display_name}"
            scene = apply_skill_effect(scene, cmd, "success", robot.profile, target.id)
        elif cmd.kind == "place":
            scene = apply_skill_effect(scene, cmd, "success", robot.profile)
    else:
        pytest.fail("never reached home")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 60), st.sampled_from(PROMPTS))
def test_liveness_reaches_done_within_bound(seed, prompt):
    scene, robot, _ = load_task("table_bussing", seed)
    goal = parse_goal(prompt, BUSSING)
    include_count = sum(1 for o in scene.objects if goal.includes(o))
    ctx = DialogueContext()
    decisions = 0
    while True:
        decision = decide(scene, ctx, goal, BUSSING)
        decisions += 1
        cmd = grammar.parse_command(decision.skill_text)
        if cmd.kind == "home":
            break
        scene = apply_skill_effect(scene, cmd, "success", robot.profile)
        assert decisions <= 2 * include_count + 1
    assert decisions <= 2 * include_count + 1
