/**
 * Gateway protocol types and the pure console state reducer.
 *
 * Everything here is side-effect free so the rendering layer and the tests
 * share one source of truth: frames in, console state out. The console never
 * mutates task state except by sending protocol messages.
 */

export interface LocationView {
  kind: "surface" | "container" | "gripper";
  name?: string;
  arm?: string;
}

export interface SceneObjectView {
  id: string;
  display_name: string;
  object_class: string;
  attributes: string[];
  color_tags: string[];
  location: LocationView;
}

export interface StateUpdateFrame {
  type: "state_update";
  scene: {
    objects: SceneObjectView[];
    fixtures: { surfaces: string[]; containers: string[] };
    time: number;
  };
  robot: { gripper_open: Record<string, number>; q: number[] };
  time: number;
}

export interface CommandIssuedFrame {
  type: "command_issued";
  id: string | null;
  skill_text: string;
  time: number;
  error?: string;
}

export interface UtteranceFrame {
  type: "utterance";
  text: string;
  time: number;
}

export interface SkillDoneFrame {
  type: "skill_done";
  command_id: string | null;
  outcome: "success" | "failure";
  time: number;
}

export interface MetricsFrame {
  type: "metrics";
  ia: number | null;
  tp: number | null;
}

export interface ErrorFrame {
  type: "error";
  code: string;
  detail: string;
}

export type ServerFrame =
  | StateUpdateFrame
  | CommandIssuedFrame
  | UtteranceFrame
  | SkillDoneFrame
  | MetricsFrame
  | ErrorFrame;

export type ClientMessage =
  | { type: "start_session"; task: string; policy: string; seed: number; realtime?: boolean; pace?: number }
  | { type: "prompt"; text: string; at?: number }
  | { type: "interjection"; text: string; at?: number }
  | { type: "resume"; at?: number }
  | { type: "eval_mark"; decision_id: string; correct: boolean }
  | { type: "pause" }
  | { type: "stop" };

export interface CommandEntry {
  id: string | null;
  skillText: string;
  time: number;
  error?: string;
  /** manual evaluator mark; undefined until the operator judges it */
  mark?: boolean;
}

export interface UtteranceEntry {
  text: string;
  time: number;
}

export interface ConsoleState {
  connected: boolean;
  time: number;
  objects: SceneObjectView[];
  fixtures: { surfaces: string[]; containers: string[] };
  gripperOpen: Record<string, number>;
  commands: CommandEntry[];
  utterances: UtteranceEntry[];
  skillsDone: number;
  metrics: { ia: number | null; tp: number | null };
  errors: string[];
}

export function initialState(): ConsoleState {
  return {
    connected: false,
    time: 0,
    objects: [],
    fixtures: { surfaces: [], containers: [] },
    gripperOpen: {},
    commands: [],
    utterances: [],
    skillsDone: 0,
    metrics: { ia: null, tp: null },
    errors: [],
  };
}

export function isServerFrame(value: unknown): value is ServerFrame {
  if (typeof value !== "object" || value === null) return false;
  const type = (value as { type?: unknown }).type;
  return (
    type === "state_update" ||
    type === "command_issued" ||
    type === "utterance" ||
    type === "skill_done" ||
    type === "metrics" ||
    type === "error"
  );
}

/** Fold one server frame into the console state (pure). */
export function applyFrame(state: ConsoleState, frame: ServerFrame): ConsoleState {
  switch (frame.type) {
    case "state_update":
      return {
        ...state,
        time: frame.time,
        objects: frame.scene.objects,
        fixtures: frame.scene.fixtures,
        gripperOpen: frame.robot.gripper_open,
      };
    case "command_issued": {
      const entry: CommandEntry = {
        id: frame.id,
        skillText: frame.skill_text,
        time: frame.time,
      };
      if (frame.error) entry.error = frame.error;
      return { ...state, time: frame.time, commands: [...state.commands, entry] };
    }
    case "utterance":
      return {
        ...state,
        time: frame.time,
        utterances: [...state.utterances, { text: frame.text, time: frame.time }],
      };
    case "skill_done":
      return {
        ...state,
        time: frame.time,
        skillsDone: frame.outcome === "success" ? state.skillsDone + 1 : state.skillsDone,
      };
    case "metrics":
      return { ...state, metrics: { ia: frame.ia, tp: frame.tp } };
    case "error":
      return { ...state, errors: [...state.errors, `${frame.code}: ${frame.detail}`] };
  }
}

export function applyFrames(state: ConsoleState, frames: ServerFrame[]): ConsoleState {
  let next = state;
  for (const frame of frames) next = applyFrame(next, frame);
  return next;
}

/** Record the operator's correct/incorrect judgment on one decision. */
export function markDecision(state: ConsoleState, decisionId: string, correct: boolean): ConsoleState {
  return {
    ...state,
    commands: state.commands.map((c) => (c.id === decisionId ? { ...c, mark: correct } : c)),
  };
}

/** Instruction accuracy over manual marks only; null until something is marked. */
export function manualInstructionAccuracy(state: ConsoleState): number | null {
  const marked = state.commands.filter((c) => c.mark !== undefined);
  if (marked.length === 0) return null;
  return marked.filter((c) => c.mark).length / marked.length;
}

export function locationLabel(location: LocationView): string {
  if (location.kind === "gripper") return `gripper (${location.arm ?? "?"})`;
  return `${location.kind}: ${location.name ?? "?"}`;
}

/** Objects grouped by location label, for the scene panel. */
export function groupByLocation(objects: SceneObjectView[]): Map<string, SceneObjectView[]> {
  const groups = new Map<string, SceneObjectView[]>();
  for (const object of objects) {
    const label = locationLabel(object.location);
    const bucket = groups.get(label) ?? [];
    bucket.push(object);
    groups.set(label, bucket);
  }
  return groups;
}

/**
 * A loaded replay: frames plus a cursor. Scrubbing to index i reduces frames
 * [0, i] from scratch, so jumping backward is exact rather than approximate.
 */
export class ReplayDeck {
  readonly frames: ServerFrame[];

  constructor(frames: ServerFrame[]) {
    this.frames = frames;
  }

  static fromJsonl(text: string): ReplayDeck {
    const frames: ServerFrame[] = [];
    for (const line of text.split("\n")) {
      const trimmed = line.trim();
      if (!trimmed) continue;
      const parsed: unknown = JSON.parse(trimmed);
      if (isServerFrame(parsed)) frames.push(parsed);
    }
    return new ReplayDeck(frames);
  }

  get length(): number {
    return this.frames.length;
  }

  stateAt(index: number): ConsoleState {
    const upto = Math.max(0, Math.min(index + 1, this.frames.length));
    return applyFrames(initialState(), this.frames.slice(0, upto));
  }

  /** Virtual timestamp shown on the scrubber for a cursor position. */
  timeAt(index: number): number {
    return this.stateAt(index).time;
  }
}
