/**
 * DOM layer of the operator console. All task semantics live in protocol.ts;
 * this file only renders ConsoleState and wires inputs to GatewayClient.
 */

import { GatewayClient } from "./client.js";
import {
  ConsoleState,
  ReplayDeck,
  ServerFrame,
  applyFrame,
  groupByLocation,
  initialState,
  manualInstructionAccuracy,
  markDecision,
} from "./protocol.js";

interface Elements {
  banner: HTMLElement;
  scene: HTMLElement;
  robot: HTMLElement;
  commands: HTMLElement;
  utterances: HTMLElement;
  metrics: HTMLElement;
  input: HTMLInputElement;
  task: HTMLSelectElement;
  policy: HTMLSelectElement;
  seed: HTMLInputElement;
  scrub: HTMLInputElement;
  scrubTime: HTMLElement;
  replayFile: HTMLInputElement;
}

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

export class ConsoleApp {
  state: ConsoleState = initialState();
  private client: GatewayClient | null = null;
  private deck: ReplayDeck | null = null;
  private readonly elements: Elements;

  constructor(private readonly serverUrl: string) {
    this.elements = {
      banner: el("banner"),
      scene: el("scene"),
      robot: el("robot"),
      commands: el("commands"),
      utterances: el("utterances"),
      metrics: el("metrics"),
      input: el("user-input") as HTMLInputElement,
      task: el("task") as HTMLSelectElement,
      policy: el("policy") as HTMLSelectElement,
      seed: el("seed") as HTMLInputElement,
      scrub: el("scrub") as HTMLInputElement,
      scrubTime: el("scrub-time"),
      replayFile: el("replay-file") as HTMLInputElement,
    };
    this.wire();
    this.render();
  }

  private wire(): void {
    el("connect").onclick = () => this.connect();
    el("send-prompt").onclick = () => this.sendText("prompt");
    el("send-interjection").onclick = () => this.sendText("interjection");
    el("send-resume").onclick = () => this.client?.resume();
    el("send-pause").onclick = () => this.client?.pause();
    el("send-stop").onclick = () => this.client?.stop();
    this.elements.input.onkeydown = (ev) => {
      if (ev.key === "Enter") this.sendText(ev.shiftKey ? "interjection" : "prompt");
    };
    this.elements.scrub.oninput = () => this.scrubTo(Number(this.elements.scrub.value));
    this.elements.replayFile.onchange = () => void this.loadReplay();
  }

  connect(): void {
    this.state = initialState();
    this.deck = null;
    this.client = new GatewayClient(
      this.serverUrl,
      {
        onFrame: (frame) => this.onFrame(frame),
        onOpen: () => {
          this.state = { ...this.state, connected: true };
          this.client?.startSession(
            this.elements.task.value,
            this.elements.policy.value,
            Number(this.elements.seed.value) || 0,
            true,
          );
          this.render();
        },
        onClose: () => {
          this.state = { ...this.state, connected: false };
          this.render();
        },
      },
      (url) => new WebSocket(url) as never,
    );
    this.client.connect();
  }

  private onFrame(frame: ServerFrame): void {
    this.state = applyFrame(this.state, frame);
    this.render();
  }

  private sendText(kind: "prompt" | "interjection"): void {
    const text = this.elements.input.value.trim();
    if (!text || !this.client) return;
    if (kind === "prompt") this.client.prompt(text);
    else this.client.interject(text);
    this.elements.input.value = "";
  }

  private mark(decisionId: string, correct: boolean): void {
    this.state = markDecision(this.state, decisionId, correct);
    this.client?.mark(decisionId, correct);
    this.render();
  }

  private async loadReplay(): Promise<void> {
    const file = this.elements.replayFile.files?.[0];
    if (!file) return;
    const text = await file.text();
    this.deck = ReplayDeck.fromJsonl(text);
    this.elements.scrub.max = String(Math.max(this.deck.length - 1, 0));
    this.scrubTo(this.deck.length - 1);
  }

  private scrubTo(index: number): void {
    if (!this.deck) return;
    this.state = this.deck.stateAt(index);
    this.elements.scrub.value = String(index);
    this.elements.scrubTime.textContent = `t=${this.state.time.toFixed(2)}s`;
    this.render();
  }

  render(): void {
    const s = this.state;
    this.elements.banner.textContent = s.connected
      ? "connected"
      : this.deck
        ? "replay"
        : "disconnected (press connect)";
    this.elements.banner.className = s.connected ? "ok" : "warn";

    const groups = groupByLocation(s.objects);
    this.elements.scene.innerHTML = "";
    for (const [label, objects] of groups) {
      const section = document.createElement("div");
      section.className = "loc-group";
      const heading = document.createElement("h4");
      heading.textContent = label;
      section.appendChild(heading);
      for (const object of objects) {
        const row = document.createElement("div");
        row.className = "obj";
        const badge = document.createElement("span");
        badge.className = `badge ${object.object_class}`;
        badge.textContent = object.object_class;
        row.appendChild(badge);
        const name = document.createElement("span");
        const tags = object.color_tags.length ? ` [${object.color_tags.join(", ")}]` : "";
        name.textContent = ` ${object.display_name}${tags}`;
        row.appendChild(name);
        section.appendChild(row);
      }
      this.elements.scene.appendChild(section);
    }

    const grippers = Object.entries(s.gripperOpen)
      .map(([arm, open]) => `${arm}: ${open >= 0.5 ? "open" : "closed"}`)
      .join(", ");
    this.elements.robot.textContent = `t=${s.time.toFixed(2)}s | gripper ${grippers || "n/a"}`;

    this.elements.commands.innerHTML = "";
    for (const entry of [...s.commands].reverse().slice(0, 40)) {
      const row = document.createElement("div");
      row.className = entry.error ? "cmd error" : "cmd";
      const label = document.createElement("span");
      label.textContent = `${entry.time.toFixed(2)}s  ${entry.skillText}${entry.error ? ` (${entry.error})` : ""}`;
      row.appendChild(label);
      if (entry.id) {
        const good = document.createElement("button");
        good.textContent = "correct";
        good.className = entry.mark === true ? "mark on" : "mark";
        good.onclick = () => this.mark(entry.id as string, true);
        const bad = document.createElement("button");
        bad.textContent = "incorrect";
        bad.className = entry.mark === false ? "mark on" : "mark";
        bad.onclick = () => this.mark(entry.id as string, false);
        row.appendChild(good);
        row.appendChild(bad);
      }
      this.elements.commands.appendChild(row);
    }

    this.elements.utterances.innerHTML = "";
    for (const utterance of [...s.utterances].reverse().slice(0, 20)) {
      const row = document.createElement("div");
      row.textContent = `${utterance.time.toFixed(2)}s  "${utterance.text}"`;
      this.elements.utterances.appendChild(row);
    }

    const localIa = manualInstructionAccuracy(s);
    const ia = localIa !== null ? localIa : s.metrics.ia;
    const iaText = ia === null || ia === undefined ? "-" : ia.toFixed(2);
    const tpText = s.metrics.tp === null || s.metrics.tp === undefined ? "-" : s.metrics.tp.toFixed(2);
    this.elements.metrics.textContent = `IA ${iaText}  |  TP ${tpText}  |  skills done ${s.skillsDone}`;

    const errors = s.errors.slice(-3).join(" | ");
    el("errors").textContent = errors;
  }
}

declare global {
  interface Window {
    ConsoleApp: typeof ConsoleApp;
  }
}

if (typeof window !== "undefined") {
  window.ConsoleApp = ConsoleApp;
}
