import assert from "node:assert/strict";
import { test } from "node:test";

import {
  ReplayDeck,
  ServerFrame,
  applyFrame,
  applyFrames,
  groupByLocation,
  initialState,
  manualInstructionAccuracy,
  markDecision,
} from "../src/protocol.js";

function stateFrame(time: number, objects: object[] = []): ServerFrame {
  return {
    type: "state_update",
    scene: {
      objects: objects as never,
      fixtures: { surfaces: ["table"], containers: ["trash_bin"] },
      time,
    },
    robot: { gripper_open: { single: 1.0 }, q: [0, 0, 0, 0, 0, 0, 0] },
    time,
  };
}

function commandFrame(id: string, text: string, time: number): ServerFrame {
  return { type: "command_issued", id, skill_text: text, time };
}

test("state_update replaces scene and advances time", () => {
  const objects = [
    {
      id: "obj_00",
      display_name: "paper cup",
      object_class: "trash",
      attributes: [],
      color_tags: ["yellowish"],
      location: { kind: "surface", name: "table" },
    },
  ];
  const state = applyFrame(initialState(), stateFrame(2.5, objects));
  assert.equal(state.time, 2.5);
  assert.equal(state.objects.length, 1);
  assert.equal(state.objects[0].display_name, "paper cup");
});

test("command and utterance frames append to their feeds", () => {
  let state = initialState();
  state = applyFrame(state, commandFrame("dec_0000", "pick up the paper cup", 0.2));
  state = applyFrame(state, { type: "utterance", text: "Sure.", time: 0.2 });
  state = applyFrame(state, commandFrame("dec_0001", "place paper cup to trash bin", 2.2));
  assert.deepEqual(
    state.commands.map((c) => c.skillText),
    ["pick up the paper cup", "place paper cup to trash bin"],
  );
  assert.equal(state.utterances[0].text, "Sure.");
});

test("skill_done counts successes only", () => {
  let state = initialState();
  state = applyFrame(state, { type: "skill_done", command_id: "cmd_0000", outcome: "success", time: 1.5 });
  state = applyFrame(state, { type: "skill_done", command_id: "cmd_0001", outcome: "failure", time: 2.5 });
  assert.equal(state.skillsDone, 1);
});

test("marking 4 of 5 decisions correct yields IA 0.8 exactly", () => {
  let state = initialState();
  for (let i = 0; i < 5; i += 1) {
    state = applyFrame(state, commandFrame(`dec_000${i}`, `skill ${i}`, i));
  }
  assert.equal(manualInstructionAccuracy(state), null);
  for (let i = 0; i < 4; i += 1) {
    state = markDecision(state, `dec_000${i}`, true);
  }
  state = markDecision(state, "dec_0004", false);
  assert.equal(manualInstructionAccuracy(state), 0.8);
});

test("error frames accumulate", () => {
  let state = initialState();
  state = applyFrame(state, { type: "error", code: "malformed", detail: "not JSON" });
  assert.deepEqual(state.errors, ["malformed: not JSON"]);
});

test("groupByLocation buckets by gripper and surface", () => {
  const objects = [
    {
      id: "a",
      display_name: "plate",
      object_class: "dish",
      attributes: [],
      color_tags: [],
      location: { kind: "surface" as const, name: "table" },
    },
    {
      id: "b",
      display_name: "cup",
      object_class: "dish",
      attributes: [],
      color_tags: [],
      location: { kind: "gripper" as const, arm: "single" },
    },
  ];
  const groups = groupByLocation(objects);
  assert.deepEqual([...groups.keys()].sort(), ["gripper (single)", "surface: table"]);
});

test("replay deck scrubs to exact earlier states", () => {
  const frames: ServerFrame[] = [
    stateFrame(0),
    commandFrame("dec_0000", "pick up the paper cup", 0.2),
    stateFrame(1.8),
    commandFrame("dec_0001", "place paper cup to trash bin", 2.2),
    stateFrame(4.1),
  ];
  const deck = new ReplayDeck(frames);
  assert.equal(deck.length, 5);
  assert.equal(deck.stateAt(1).commands.length, 1);
  assert.equal(deck.stateAt(4).commands.length, 2);
  // scrub backward: earlier cursor gives the earlier state again
  assert.equal(deck.stateAt(1).commands.length, 1);
  assert.equal(deck.timeAt(4), 4.1);
  assert.equal(deck.timeAt(0), 0);
});

test("replay deck parses JSONL and ignores junk lines", () => {
  const text = [
    JSON.stringify(stateFrame(0)),
    "",
    JSON.stringify(commandFrame("dec_0000", "pick up the cup", 0.3)),
  ].join("\n");
  const deck = ReplayDeck.fromJsonl(text);
  assert.equal(deck.length, 2);
  const final = applyFrames(initialState(), deck.frames);
  assert.equal(final.commands.length, 1);
});
