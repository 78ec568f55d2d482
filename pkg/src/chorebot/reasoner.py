"""Rule-based high-level reasoner: prompts and interjections to atomic commands.

This is the reference stand-in for a fine-tuned vision-language model. It
grounds a prompt into a :class:`~chorebot.domain.GoalSpec` over the closed
lexicon, keeps explicit dialogue memory (:class:`DialogueContext`), and emits
one admissible atomic command per invocation. The same grounding helpers are
used by the evaluation judge, which is what makes scripted trials exactly
checkable.

``decide`` is a pure function of (scene, context, goal); all state changes go
through the explicit ``apply_*`` entry points.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

from . import grammar
from .domain import GoalSpec, HighLevelDecision, ObjectFilter, SceneObject, SceneState, SkillCommand
from .simenv import TaskCatalog, goal_pending

_QUANTITY_WORDS = {"a": 1, "an": 1, "one": 1, "some": 1, "two": 2, "three": 3, "four": 4}

_DIET_RULES = (
    # (pattern, forbidden attribute, spoken confirmation)
    (re.compile(r"\bvegetarian\b"), "meat", "Sure, a vegetarian one, no meat."),
    (re.compile(r"\blactose\b|\bdairy[- ]?free\b|\bno dairy\b"), "dairy", "Sure, I won't put cheese on it."),
)

_EXCLUDE_PATTERNS = (
    re.compile(r"allergic to (?P<item>[a-z ]+?)(?:$| so| please| and\b)"),
    re.compile(r"\bwithout (?:any )?(?P<item>[a-z ]+?)(?:$| please| and\b)"),
    re.compile(r"\bno (?P<item>[a-z ]+?)(?:$| please| though\b| and\b)"),
    re.compile(r"\bdon'?t (?:put|add|use|include) (?:any )?(?P<item>[a-z ]+?)(?:$| please| on\b| in\b)"),
    re.compile(r"\bi don'?t like (?:the )?(?P<item>[a-z ]+?)(?:$| please)"),
    re.compile(r"\bhold the (?P<item>[a-z ]+?)(?:$| please)"),
    re.compile(r"\binstead of (?:the )?(?P<item>[a-z ]+?)(?:$| please)"),
)

_ATTR_EXCLUDES = (
    (re.compile(r"nothing sweet|no sweets|nothing sugary"), "sweet"),
    (re.compile(r"nothing salty|no salty snacks"), "salty"),
)

_ATTR_REQUESTS = (
    (re.compile(r"(?:something|anything) sweet"), "sweet"),
    (re.compile(r"(?:something|anything) (?:to drink|drinkable)"), "drink"),
    (re.compile(r"(?:something|anything) salty"), "salty"),
)


@dataclass
class InterjectionEntry:
    text: str
    time: float
    handled: bool = False

    def to_dict(self) -> dict:
        return {"text": self.text, "time": self.time, "handled": self.handled}


@dataclass
class DialogueContext:
    """Explicit dialogue memory carried across high-level invocations."""

    active_prompt: str = ""
    interjection_stack: list[InterjectionEntry] = field(default_factory=list)
    prior_skills: list[str] = field(default_factory=list)
    held_objects: dict[str, str] = field(default_factory=dict)
    reclassified: dict[str, str] = field(default_factory=dict)
    excluded_ids: set[str] = field(default_factory=set)
    added_requests: dict[str, int] = field(default_factory=dict)
    last_target_id: Optional[str] = None
    saved_prompt: Optional[str] = None

    def copy(self) -> "DialogueContext":
        return DialogueContext(
            active_prompt=self.active_prompt,
            interjection_stack=[replace(e) for e in self.interjection_stack],
            prior_skills=list(self.prior_skills),
            held_objects=dict(self.held_objects),
            reclassified=dict(self.reclassified),
            excluded_ids=set(self.excluded_ids),
            added_requests=dict(self.added_requests),
            last_target_id=self.last_target_id,
            saved_prompt=self.saved_prompt,
        )

    def unhandled(self) -> Optional[InterjectionEntry]:
        for entry in self.interjection_stack:
            if not entry.handled:
                return entry
        return None


@dataclass(frozen=True)
class PromptInterpretation:
    goal: GoalSpec
    utterance: Optional[str]
    recognized: bool


def _normalize(text: str) -> str:
    text = text.lower()
    text = re.sub(r"[.,!?\"]", "", text)
    text = text.replace("’", "'")
    return re.sub(r"\s+", " ", text).strip()


def _singular(item: str) -> str:
    item = item.strip()
    lexicon = grammar.object_lexicon()
    if item in lexicon:
        return item
    if item.endswith("s") and item[:-1] in lexicon:
        return item[:-1]
    return item


def _known_items(catalog: TaskCatalog) -> list[str]:
    """Object names this task's prompts may mention, longest first."""
    names: set[str] = set()
    params = catalog.params
    for key in ("base_objects", "shelf_items", "ingredient_types"):
        for spec in params.get(key, []):
            names.add(spec["display_name"].lower())
    for pool in params.get("pools", {}).values():
        for spec in pool:
            names.add(spec["display_name"].lower())
    if "bread" in params:
        names.add("bread")
    return sorted(names, key=len, reverse=True)


def _find_requests(norm: str, catalog: TaskCatalog) -> dict[str, int]:
    """Extract item requests with quantities ('some Twix and Skittles' -> 1 each)."""
    requests: dict[str, int] = {}
    for name in _known_items(catalog):
        for m in re.finditer(rf"\b{re.escape(name)}s?\b", norm):
            preceding = norm[: m.start()].strip().split()
            count = _QUANTITY_WORDS.get(preceding[-1], 1) if preceding else 1
            requests[name] = max(requests.get(name, 0), count)
    for pattern, attr in _ATTR_REQUESTS:
        if pattern.search(norm):
            requests[f"attr:{attr}"] = requests.get(f"attr:{attr}", 0) + 1
    return requests


def _find_exclusions(norm: str, catalog: TaskCatalog) -> tuple[set[str], set[str], list[str]]:
    """Exclusion phrases -> (excluded names, forbidden attributes, confirmations)."""
    names: set[str] = set()
    forbidden: set[str] = set()
    confirmations: list[str] = []
    for pattern, attr, confirmation in _DIET_RULES:
        if pattern.search(norm):
            forbidden.add(attr)
            confirmations.append(confirmation)
    for pattern, attr in _ATTR_EXCLUDES:
        if pattern.search(norm):
            forbidden.add(attr)
            confirmations.append(f"Sure, nothing {attr}.")
    known = _known_items(catalog)
    for pattern in _EXCLUDE_PATTERNS:
        for m in pattern.finditer(norm):
            item = _singular(m.group("item"))
            if item in known or _singular(item) in known:
                names.add(_singular(item))
                confirmations.append(f"Sure, no {item}.")
            elif item in ("sweet", "anything sweet"):
                forbidden.add("sweet")
                confirmations.append("Sure, nothing sweet.")
    return names, forbidden, confirmations


def default_goal(catalog: TaskCatalog) -> GoalSpec:
    """The task's unconstrained behavior (what a bare or unparsed prompt means)."""
    if catalog.task == "table_bussing":
        return GoalSpec(
            destination_map=catalog.destination_map,
            include=ObjectFilter(classes=frozenset({"trash", "dish", "utensil"})),
        )
    if catalog.task == "sandwich_making":
        required = {"bread": 2}
        for spec in catalog.params["ingredient_types"]:
            required[spec["display_name"].lower()] = 1
        return GoalSpec(destination_map=catalog.destination_map, required_items=required)
    return GoalSpec(
        destination_map=catalog.destination_map,
        include=ObjectFilter(classes=frozenset({"grocery"})),
    )


def interpret_prompt(prompt: str, catalog: TaskCatalog) -> PromptInterpretation:
    norm = _normalize(prompt)
    task = catalog.task

    # An atomic in-grammar command used as the whole prompt is a direct request.
    if grammar.parses(prompt):
        cmd = grammar.parse_command(prompt)
        if cmd.kind == "pick" and cmd.object_phrase:
            goal = GoalSpec(
                destination_map=catalog.destination_map,
                required_items={cmd.object_phrase: 1},
            )
            return PromptInterpretation(goal, "Sure.", True)

    if task == "table_bussing":
        base = default_goal(catalog)
        if "only" in norm:
            # Which class noun follows "only" first decides the include set.
            after = norm[norm.index("only") :]
            trash_at = after.find("trash")
            dish_at = after.find("dish")
            if trash_at >= 0 and (dish_at < 0 or trash_at < dish_at):
                goal = GoalSpec(
                    destination_map=catalog.destination_map,
                    include=ObjectFilter(classes=frozenset({"trash"})),
                    exclude=ObjectFilter(classes=frozenset({"dish", "utensil"})),
                )
                return PromptInterpretation(goal, "Sure, just the trash. I'll leave the dishes.", True)
            if dish_at >= 0:
                goal = GoalSpec(
                    destination_map=catalog.destination_map,
                    include=ObjectFilter(classes=frozenset({"dish", "utensil"})),
                    exclude=ObjectFilter(classes=frozenset({"trash"})),
                )
                return PromptInterpretation(goal, "Sure, just the dishes. I'll leave the trash.", True)
        if "yellowish" in norm or "yellow" in norm:
            goal = GoalSpec(
                destination_map=catalog.destination_map,
                include=ObjectFilter(color_tags=frozenset({"yellowish"})),
                exclude=ObjectFilter(without_color_tags=frozenset({"yellowish"})),
            )
            return PromptInterpretation(goal, "Sure, just the yellowish things.", True)
        if any(w in norm for w in ("clean", "clear", "bus", "tidy")):
            return PromptInterpretation(base, "On it, clearing the table.", True)
        return PromptInterpretation(base, "Sorry, could you say that differently?", False)

    if task == "sandwich_making":
        if "sandwich" not in norm and "make me" not in norm:
            return PromptInterpretation(
                default_goal(catalog), "Sorry, could you say that differently?", False
            )
        excluded_names, forbidden, confirmations = _find_exclusions(norm, catalog)
        listed = _requested_ingredients(norm, catalog)
        required = {"bread": 2}
        if listed:
            for item in listed:
                required[item] = max(required.get(item, 0), 1) if item != "bread" else required["bread"]
        else:
            for spec in catalog.params["ingredient_types"]:
                required[spec["display_name"].lower()] = 1
        for name in excluded_names:
            required.pop(name, None)
        if forbidden:
            required = {
                k: v
                for k, v in required.items()
                if k == "bread" or not (_item_attributes(k, catalog) & forbidden)
            }
        goal = GoalSpec(
            destination_map=catalog.destination_map,
            required_items=required,
            exclude=ObjectFilter(names=frozenset(excluded_names)) if excluded_names else ObjectFilter(),
            forbidden_attributes=frozenset(forbidden),
        )
        utterance = " ".join(confirmations) if confirmations else "Sure, one sandwich coming up."
        return PromptInterpretation(goal, utterance, True)

    # grocery_shopping
    excluded_names, forbidden, confirmations = _find_exclusions(norm, catalog)
    requests = _find_requests(norm, catalog)
    for name in excluded_names:
        requests.pop(name, None)
    if not requests:
        return PromptInterpretation(
            default_goal(catalog), "Sorry, what should I get you?", False
        )
    goal = GoalSpec(
        destination_map=catalog.destination_map,
        required_items=requests,
        exclude=ObjectFilter(names=frozenset(excluded_names)) if excluded_names else ObjectFilter(),
        forbidden_attributes=frozenset(forbidden),
    )
    wanted = ", ".join(sorted(k[5:] + " (any)" if k.startswith("attr:") else k for k in requests))
    utterance = " ".join(confirmations) if confirmations else f"Sure, getting you {wanted}."
    return PromptInterpretation(goal, utterance, True)


def _requested_ingredients(norm: str, catalog: TaskCatalog) -> list[str]:
    """Ingredients explicitly listed after 'with' ('with cheese, roast beef, and lettuce').

    The capture runs to the end of the prompt; item names inside a trailing
    constraint clause ("... I'm allergic to ham") are re-removed by the
    exclusion handling, so over-capturing is harmless.
    """
    m = re.search(r"\bwith (?P<items>.+)$", norm)
    if not m:
        return []
    found = []
    chunk = m.group("items")
    for name in _known_items(catalog):
        if re.search(rf"\b{re.escape(name)}s?\b", chunk):
            found.append(name)
    return found


def _item_attributes(name: str, catalog: TaskCatalog) -> frozenset[str]:
    params = catalog.params
    for key in ("base_objects", "shelf_items", "ingredient_types"):
        for spec in params.get(key, []):
            if spec["display_name"].lower() == name:
                return frozenset(spec["attributes"])
    if name == "bread" and "bread" in params:
        return frozenset(params["bread"]["attributes"])
    return frozenset()


def parse_goal(prompt: str, catalog: TaskCatalog) -> GoalSpec:
    """Ground a prompt into a goal; unrecognized prompts degrade to the task default."""
    return interpret_prompt(prompt, catalog).goal


@dataclass(frozen=True)
class InterjectionEffect:
    """Canonical semantics of one interjection, shared by reasoner and judge."""

    exclude_ids: frozenset[str] = frozenset()
    reclassify: Mapping[str, str] = field(default_factory=dict)
    halt: bool = False
    add_items: Mapping[str, int] = field(default_factory=dict)
    close_items: bool = False
    exclude_names: frozenset[str] = frozenset()
    forbidden: frozenset[str] = frozenset()
    repair: Optional[SkillCommand] = None
    utterance: Optional[str] = None
    recognized: bool = True


def _current_target(scene: SceneState, ctx: DialogueContext) -> Optional[SceneObject]:
    held = scene.held_ids()
    if held:
        return scene.object_by_id(held[sorted(held)[0]])
    if ctx.last_target_id is not None:
        try:
            return scene.object_by_id(ctx.last_target_id)
        except KeyError:
            return None
    return None


def _put_back_command(obj: SceneObject, surface: str) -> SkillCommand:
    phrase = grammar.lexicon_phrase(obj.display_name.lower()) or obj.display_name.lower()
    return SkillCommand(kind="place", object_phrase=phrase, destination=surface)


def interjection_effect(
    text: str,
    scene: SceneState,
    ctx: DialogueContext,
    goal: GoalSpec,
    catalog: TaskCatalog,
) -> InterjectionEffect:
    """Pattern-match an interjection into its state effect and demanded repair."""
    norm = _normalize(text)
    surface = catalog.primary_surface

    if re.search(r"\b(that|this|it)\b.{0,4}\bnot trash\b", norm) or "not trash" in norm:
        target = _current_target(scene, ctx)
        if target is None:
            return InterjectionEffect(utterance="Which one do you mean?", recognized=False)
        repair = None
        if target.location.kind == "gripper":
            repair = _put_back_command(target, surface)
        return InterjectionEffect(
            exclude_ids=frozenset({target.id}),
            reclassify={target.id: "dish"},
            repair=repair,
            utterance="Oops, putting it back.",
        )

    if "leave it alone" in norm or "leave that alone" in norm:
        target = _current_target(scene, ctx)
        if target is None:
            return InterjectionEffect(utterance="Which one should I leave?", recognized=False)
        repair = None
        if target.location.kind == "gripper":
            repair = _put_back_command(target, surface)
        return InterjectionEffect(
            exclude_ids=frozenset({target.id}),
            repair=repair,
            utterance="Okay, I'll leave it alone.",
        )

    if "leave the rest" in norm or "stop after this" in norm:
        return InterjectionEffect(halt=True, utterance="Okay, I'll leave the rest.")

    if re.search(r"\bthat'?s all\b|\bno more\b|\bnothing else\b", norm):
        return InterjectionEffect(close_items=True, utterance="Got it, finishing up.")

    m = re.search(r"\b(?:i )?(?:also |still )?want (?:some |a |an |one |two )?(?P<item>[a-z ]+?)(?:$| too| as well| please)", norm)
    if m or "i also want" in norm:
        requests = _find_requests(norm, catalog)
        if requests:
            names = ", ".join(sorted(requests))
            return InterjectionEffect(add_items=requests, utterance=f"Sure, I'll also get {names}.")

    excluded_names, forbidden, confirmations = _find_exclusions(norm, catalog)
    if excluded_names or forbidden:
        return InterjectionEffect(
            exclude_names=frozenset(excluded_names),
            forbidden=frozenset(forbidden),
            utterance=" ".join(confirmations) if confirmations else "Sure.",
        )

    if grammar.parses(text):
        return InterjectionEffect(
            repair=grammar.parse_command(text), utterance="Sure.",
        )

    return InterjectionEffect(utterance="Sorry, could you rephrase that?", recognized=False)


def apply_effect_to_goal(goal: GoalSpec, effect: InterjectionEffect, scene: SceneState) -> GoalSpec:
    """Fold an interjection's constraint changes into the goal."""
    required = dict(goal.required_items)
    if effect.close_items:
        required = _items_in_flight(scene, goal)
    for name, count in effect.add_items.items():
        required[name] = required.get(name, 0) + count
    exclude = goal.exclude
    if effect.exclude_names:
        existing = exclude.names or frozenset()
        exclude = replace(exclude, names=frozenset(existing | effect.exclude_names))
    for name in effect.exclude_names:
        required.pop(name, None)
    return GoalSpec(
        destination_map=goal.destination_map,
        include=goal.include,
        exclude=exclude,
        required_items=required,
        forbidden_attributes=goal.forbidden_attributes | effect.forbidden,
        halt=goal.halt or effect.halt,
    )


def _items_in_flight(scene: SceneState, goal: GoalSpec) -> dict[str, int]:
    """Close an order: keep what is already placed or held, plus the closing bread."""
    counts: dict[str, int] = {}
    destinations = set(goal.destination_map.values())
    for obj in scene.objects:
        placed = obj.location.kind == "container" and obj.location.name in destinations
        if placed or obj.location.kind == "gripper":
            name = obj.display_name.lower()
            counts[name] = counts.get(name, 0) + 1
    if "sandwich_stack" in destinations:
        counts["bread"] = 2
    return counts


def handle_interjection(
    text: str,
    views: SceneState,
    ctx: DialogueContext,
    goal: GoalSpec,
    catalog: TaskCatalog,
) -> tuple[DialogueContext, GoalSpec, HighLevelDecision]:
    """Apply one interjection; returns updated context/goal and the immediate decision."""
    effect = interjection_effect(text, views, ctx, goal, catalog)
    new_ctx = ctx.copy()
    new_ctx.excluded_ids |= set(effect.exclude_ids)
    new_ctx.reclassified.update(effect.reclassify)
    for name, count in effect.add_items.items():
        new_ctx.added_requests[name] = new_ctx.added_requests.get(name, 0) + count
    new_goal = apply_effect_to_goal(goal, effect, views)
    for entry in new_ctx.interjection_stack:
        if entry.text == text and not entry.handled:
            entry.handled = True
            break
    if effect.repair is not None:
        immediate = HighLevelDecision(
            grammar.render_command(effect.repair), utterance=effect.utterance
        )
    else:
        immediate = decide(views, new_ctx, new_goal, catalog)
        if effect.utterance:
            immediate = HighLevelDecision(immediate.skill_text, effect.utterance)
    return new_ctx, new_goal, immediate


def decide(
    views: SceneState,
    ctx: DialogueContext,
    goal: GoalSpec,
    catalog: TaskCatalog,
) -> HighLevelDecision:
    """Emit the next atomic command for the current scene, context, and goal.

    Total by construction: an unhandled interjection's repair first, then a
    put-back for anything held that the goal now rejects, then placement of
    held work, then the next pending pick in id order, else homing.
    """
    entry = ctx.unhandled()
    if entry is not None:
        effect = interjection_effect(entry.text, views, ctx, goal, catalog)
        if effect.repair is not None:
            return HighLevelDecision(grammar.render_command(effect.repair), effect.utterance)

    held = views.held_ids()
    for arm in sorted(held):
        obj = views.object_by_id(held[arm])
        effective_class = ctx.reclassified.get(obj.id, obj.object_class)
        rejected = (
            obj.id in ctx.excluded_ids
            or goal.excludes(replace(obj, object_class=effective_class))
            or not goal.includes(replace(obj, object_class=effective_class))
        )
        if rejected:
            cmd = _put_back_command(obj, catalog.primary_surface)
            return HighLevelDecision(grammar.render_command(cmd))

    pending = goal_pending(views, goal, frozenset(ctx.excluded_ids), ctx.reclassified)
    if pending.to_place:
        obj, dest = pending.to_place[0]
        phrase = grammar.lexicon_phrase(obj.display_name.lower()) or obj.display_name.lower()
        cmd = SkillCommand(kind="place", object_phrase=phrase, destination=dest)
        return HighLevelDecision(grammar.render_command(cmd))
    if pending.to_pick:
        obj = pending.to_pick[0]
        phrase = grammar.lexicon_phrase(obj.display_name.lower()) or obj.display_name.lower()
        cmd = SkillCommand(kind="pick", object_phrase=phrase)
        return HighLevelDecision(grammar.render_command(cmd))
    return HighLevelDecision("go back to home position", "All done!")


class HierarchicalAgent:
    """Stateful policy wrapper around the pure reasoner functions.

    ``ablate_constraints=True`` is the no-constraint variant: prompts and
    interjections are acknowledged but their restrictions (exclusions, diets,
    per-object vetoes) are discarded, so the agent always pursues the task's
    default behavior plus any added requests.
    """

    name = "hierarchical_reference"

    def __init__(self, catalog: TaskCatalog, ablate_constraints: bool = False):
        self.catalog = catalog
        self.ctx = DialogueContext()
        self.goal = default_goal(catalog)
        self.ablate_constraints = ablate_constraints
        if ablate_constraints:
            self.name = "reference_no_constraints"
        self._pending_utterance: Optional[str] = None

    def on_prompt(self, text: str, scene: SceneState, time: float, gt_goal: Optional[GoalSpec] = None) -> None:
        interp = interpret_prompt(text, self.catalog)
        self.ctx.active_prompt = text
        self.goal = default_goal(self.catalog) if self.ablate_constraints else interp.goal
        if self.ablate_constraints:
            # Keep explicit additions; drop everything restrictive.
            self.goal = apply_effect_to_goal(
                self.goal,
                InterjectionEffect(add_items=dict(self.ctx.added_requests)),
                scene,
            )
        self._pending_utterance = interp.utterance

    def on_interjection(
        self, text: str, scene: SceneState, time: float, gt_goal: Optional[GoalSpec] = None
    ) -> HighLevelDecision:
        self.ctx.interjection_stack.append(InterjectionEntry(text, time))
        ctx, goal, immediate = handle_interjection(text, scene, self.ctx, self.goal, self.catalog)
        if self.ablate_constraints:
            effect = interjection_effect(text, scene, self.ctx, self.goal, self.catalog)
            kept = InterjectionEffect(add_items=effect.add_items)
            self.goal = apply_effect_to_goal(self.goal, kept, scene)
            for entry in self.ctx.interjection_stack:
                if entry.text == text and not entry.handled:
                    entry.handled = True
            return decide(scene, self.ctx, self.goal, self.catalog)
        self.ctx, self.goal = ctx, goal
        return immediate

    def on_resume(self, scene: SceneState, time: float) -> None:
        # Handled interjections are only popped here.
        self.ctx.interjection_stack = [e for e in self.ctx.interjection_stack if not e.handled]
        if self.ctx.saved_prompt is not None:
            self.ctx.active_prompt = self.ctx.saved_prompt
            self.ctx.saved_prompt = None

    def decide(self, scene: SceneState, time: float) -> HighLevelDecision:
        decision = decide(scene, self.ctx, self.goal, self.catalog)
        if self._pending_utterance:
            decision = HighLevelDecision(decision.skill_text, self._pending_utterance)
            self._pending_utterance = None
        return decision

    def notify_issued(self, cmd: SkillCommand, resolved_object_id: Optional[str]) -> None:
        self.ctx.prior_skills.append(grammar.render_command(cmd))
        if cmd.kind == "pick" and resolved_object_id is not None:
            self.ctx.last_target_id = resolved_object_id

    def notify_rejected(self, text: str, reason: str) -> None:
        self._pending_utterance = "Sorry, I can't do that."

    def notify_failed_start(self, cmd: SkillCommand, reason: str) -> Optional[str]:
        target = cmd.object_phrase or cmd.destination or "that"
        return f"I couldn't manage '{grammar.render_command(cmd)}': {reason}."

    def notify_skill_done(self, cmd: SkillCommand, outcome: str) -> None:
        pass
