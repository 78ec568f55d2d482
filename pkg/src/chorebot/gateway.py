"""WebSocket service and log replay: the live-session surface of the runtime.

One connection drives one session. Client messages are JSON objects with a
``type`` of ``start_session``, ``prompt``, ``interjection``, ``resume``,
``eval_mark``, ``pause``, or ``stop``; server frames are ``state_update``,
``command_issued``, ``utterance``, ``skill_done``, ``metrics``, or ``error``.

Two driving modes:

* ``realtime: true`` -- the session paces against the wall clock (scaled by
  ``pace``); user messages are stamped at the virtual time of arrival.
* ``realtime: false`` (scripted) -- messages carry explicit ``at`` virtual
  times and only accumulate; a ``stop`` message releases the session to run
  to completion at full speed. This is what makes a live session reproduce a
  headless run bit for bit.

State frames are projected from the event log alone (:class:`LogProjector`),
which is also how ``replay`` re-emits a recorded session byte-identically.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .domain import UserEvent
from .evaluation import EmptyGoal, task_progress
from .orchestrator import (
    CorruptLog,
    EventLog,
    Session,
    SessionConfig,
    apply_completion,
)
from .domain import SkillCommand
from .simenv import TaskCatalog, load_task

CLIENT_TYPES = ("start_session", "prompt", "interjection", "resume", "eval_mark", "pause", "stop")
FRAME_TYPES = ("state_update", "command_issued", "utterance", "skill_done", "metrics", "error")


def dump_frame(frame: dict[str, Any]) -> str:
    return json.dumps(frame, sort_keys=True, separators=(",", ":"))


def validate_frame(frame: dict[str, Any]) -> list[str]:
    """Schema check for server frames; empty list means valid."""
    problems = []
    ftype = frame.get("type")
    if ftype not in FRAME_TYPES:
        return [f"unknown frame type: {ftype!r}"]
    required = {
        "state_update": ("scene", "robot", "time"),
        "command_issued": ("id", "skill_text", "time"),
        "utterance": ("text", "time"),
        "skill_done": ("command_id", "outcome", "time"),
        "metrics": ("ia", "tp"),
        "error": ("code", "detail"),
    }[ftype]
    for key in required:
        if key not in frame:
            problems.append(f"{ftype} frame missing {key!r}")
    return problems


def validate_client_message(message: dict[str, Any]) -> list[str]:
    mtype = message.get("type")
    if mtype not in CLIENT_TYPES:
        return [f"unknown message type: {mtype!r}"]
    if mtype == "start_session":
        for key in ("task", "policy", "seed"):
            if key not in message:
                return [f"start_session missing {key!r}"]
    if mtype in ("prompt", "interjection") and not isinstance(message.get("text"), str):
        return [f"{mtype} missing text"]
    if mtype == "eval_mark":
        if "decision_id" not in message or not isinstance(message.get("correct"), bool):
            return ["eval_mark needs decision_id and boolean correct"]
    return []


class LogProjector:
    """Derives the protocol's state/command/utterance frames from log records.

    Feeding the same records always yields the same frames, so a live session
    and a later replay of its log emit byte-identical state_update sequences.
    """

    def __init__(self, task: str, seed: int):
        self.catalog = TaskCatalog.for_task(task)
        self.scene, self.robot, _ = load_task(task, seed)

    def initial_frame(self) -> dict[str, Any]:
        return {
            "type": "state_update",
            "scene": self.scene.to_dict(),
            "robot": self.robot.to_dict(),
            "time": 0.0,
        }

    def _state_frame(self, time: float) -> dict[str, Any]:
        return {
            "type": "state_update",
            "scene": self.scene.to_dict(),
            "robot": self.robot.to_dict(),
            "time": time,
        }

    def feed(self, record: dict[str, Any]) -> list[dict[str, Any]]:
        kind = record["kind"]
        payload = record["payload"]
        time = record["time"]
        if kind == "command_issued" and (payload.get("changed") or payload.get("error")):
            frame = {
                "type": "command_issued",
                "id": payload.get("decision_id"),
                "skill_text": payload.get("skill_text", ""),
                "time": time,
            }
            if payload.get("error"):
                frame["error"] = payload["error"]
            return [frame]
        if kind == "utterance":
            return [{"type": "utterance", "text": payload["text"], "time": time}]
        if kind in ("skill_done", "skill_failed"):
            outcome = "success" if kind == "skill_done" else "failure"
            frames: list[dict[str, Any]] = [
                {
                    "type": "skill_done",
                    "command_id": payload.get("command_id"),
                    "outcome": outcome,
                    "time": time,
                }
            ]
            cmd = SkillCommand.from_dict(payload["command"]) if "command" in payload else None
            if outcome == "success" and cmd is not None and cmd.kind in ("pick", "place"):
                self.scene, self.robot = apply_completion(
                    self.scene,
                    self.robot,
                    cmd,
                    payload.get("resolved_object_id"),
                    self.catalog.profile,
                    time,
                )
                frames.append(self._state_frame(time))
            return frames
        if kind == "trial_end":
            return [self._state_frame(time)]
        return []


def replay(log_path: str) -> list[dict[str, Any]]:
    """Re-emit a recorded session's frames from its log file."""
    log = EventLog.load(log_path)
    ends = log.of_kind("trial_end")
    if not ends:
        if not log.records:
            return []
        raise CorruptLog(log_path, len(log.records))
    config = SessionConfig.from_dict(ends[-1]["payload"]["config"])
    projector = LogProjector(config.task, config.seed)
    frames = [projector.initial_frame()]
    for record in log.records:
        frames.extend(projector.feed(record))
    return frames


@dataclass
class _LiveSession:
    session: Session
    projector: LogProjector
    pace: float = 1.0
    realtime: bool = False
    paused: bool = False
    released: bool = False  # scripted sessions run only once released by `stop`
    marks: dict[str, bool] = field(default_factory=dict)

    def metrics_frame(self) -> dict[str, Any]:
        ia = None
        if self.marks:
            ia = sum(1 for v in self.marks.values() if v) / len(self.marks)
        policy = self.session.policy
        excluded = frozenset(getattr(getattr(policy, "ctx", None), "excluded_ids", set()))
        reclassified = dict(getattr(getattr(policy, "ctx", None), "reclassified", {}))
        try:
            tp = task_progress(self.session.scene, policy.goal, excluded, reclassified)
        except EmptyGoal:
            tp = 1.0 if policy.goal.halt else 0.0
        return {"type": "metrics", "ia": ia, "tp": tp}


class GatewayServer:
    """One session loop per connection; no cross-session shared state."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8080, log_dir: Optional[str] = None):
        self.host = host
        self.port = port
        self.log_dir = log_dir
        self._session_count = 0

    def _persist(self, live: _LiveSession) -> None:
        """Live sessions also write their event log, when a log dir is set."""
        if self.log_dir is None or not live.session.log.records:
            return
        import os

        os.makedirs(self.log_dir, exist_ok=True)
        self._session_count += 1
        config = live.session.config
        path = os.path.join(
            self.log_dir,
            f"session_{self._session_count:03d}_{config.task}_seed{config.seed}.jsonl",
        )
        live.session.log.save(path)

    async def handler(self, websocket) -> None:
        live: Optional[_LiveSession] = None

        async def send(frame: dict[str, Any]) -> None:
            await websocket.send(dump_frame(frame))

        async def send_records(records: Iterable[dict[str, Any]]) -> None:
            assert live is not None
            for record in records:
                for frame in live.projector.feed(record):
                    await send(frame)

        async def drain_session() -> None:
            """Run a released scripted session to completion, streaming frames."""
            assert live is not None
            while not live.session.ended:
                before = len(live.session.log.records)
                live.session.step()
                await send_records(live.session.log.records[before:])
            await send(live.metrics_frame())

        try:
            async for raw in websocket:
                try:
                    message = json.loads(raw)
                except ValueError:
                    await send({"type": "error", "code": "malformed", "detail": "not JSON"})
                    continue
                problems = validate_client_message(message) if isinstance(message, dict) else ["not an object"]
                if problems:
                    await send({"type": "error", "code": "malformed", "detail": "; ".join(problems)})
                    continue
                mtype = message["type"]
                if mtype == "start_session":
                    if live is not None:
                        await send({"type": "error", "code": "session_exists", "detail": "already started"})
                        continue
                    try:
                        config = SessionConfig.from_dict(message)
                    except (ValueError, KeyError) as exc:
                        await send({"type": "error", "code": "bad_config", "detail": str(exc)})
                        continue
                    session = Session(config)
                    projector = LogProjector(config.task, config.seed)
                    live = _LiveSession(
                        session,
                        projector,
                        pace=float(message.get("pace", 1.0)),
                        realtime=bool(message.get("realtime", False)),
                    )
                    await send(projector.initial_frame())
                    if live.realtime:
                        asyncio.ensure_future(self._paced_loop(websocket, live))
                    continue
                if live is None:
                    await send({"type": "error", "code": "no_session", "detail": "send start_session first"})
                    continue
                if mtype in ("prompt", "interjection", "resume"):
                    if live.session.ended:
                        await send({"type": "error", "code": "session_over", "detail": "session has ended"})
                        continue
                    at = float(message.get("at", live.session.now))
                    if mtype == "prompt":
                        event = UserEvent.prompt(message["text"], at)
                    elif mtype == "interjection":
                        event = UserEvent.interjection(message["text"], at)
                    else:
                        event = UserEvent.resume(at)
                    live.session.submit_event(event)
                elif mtype == "eval_mark":
                    live.marks[message["decision_id"]] = message["correct"]
                    await send(live.metrics_frame())
                elif mtype == "pause":
                    live.paused = not live.paused
                elif mtype == "stop":
                    # Scripted sessions are released to run to completion; a
                    # realtime session is ended where it stands. Either way the
                    # connection stays open for eval_mark bookkeeping.
                    if live.realtime:
                        if not live.session.ended:
                            live.session._end_trial("stopped")
                        await send(live.metrics_frame())
                    elif not live.released:
                        live.released = True
                        await drain_session()
        finally:
            # Connection gone (or loop done): close out and persist the log.
            if live is not None:
                if not live.session.ended and live.realtime:
                    live.session._end_trial("stopped")
                self._persist(live)

    async def _paced_loop(self, websocket, live: _LiveSession) -> None:
        """Wall-clock pacing for realtime sessions."""
        try:
            while not live.session.ended:
                if live.paused:
                    await asyncio.sleep(0.02)
                    continue
                next_time = live.session.peek_next_time()
                if next_time is None:
                    break
                delay = (next_time - live.session.now) / max(live.pace, 1e-9)
                if delay > 0:
                    await asyncio.sleep(min(delay, 0.05))
                    if live.session.peek_next_time() != next_time:
                        continue  # a user event arrived meanwhile
                    if delay > 0.05:
                        continue
                before = len(live.session.log.records)
                live.session.step()
                for record in live.session.log.records[before:]:
                    for frame in live.projector.feed(record):
                        await websocket.send(dump_frame(frame))
            if live.session.ended:
                await websocket.send(dump_frame(live.metrics_frame()))
        except Exception:
            pass

    async def serve_forever(self, on_ready=None) -> None:
        from websockets.asyncio.server import serve

        async with serve(self.handler, self.host, self.port) as server:
            if on_ready is not None:
                on_ready(server.sockets[0].getsockname()[1])
            await asyncio.Future()


def serve(port: int = 8080, host: str = "127.0.0.1", log_dir: Optional[str] = None) -> None:
    """Blocking entry point for the service."""

    def announce(bound_port: int) -> None:
        print(f"listening on ws://{host}:{bound_port}", flush=True)

    asyncio.run(GatewayServer(host, port, log_dir).serve_forever(on_ready=announce))
