"""HTTP adapter so a real vision-language model can serve as the high level.

One POST per decision. The wire schema is fixed: the request carries the task,
symbolic views, the active prompt, interjections, prior skills, and the list
of allowed skill strings; the reply is ``{"skill_text": ..., "utterance"?}``.
Timeouts and malformed replies are reported as errors; the caller retains the
previous command.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Optional

from . import grammar
from .domain import HighLevelDecision, SceneState
from .reasoner import DialogueContext


class BackendError(Exception):
    """Base class for remote-backend failures."""


class BackendTimeout(BackendError):
    pass


class BackendMalformed(BackendError):
    pass


def build_request(
    task: str,
    views: SceneState,
    ctx: DialogueContext,
    allowed_skills: Optional[list[str]] = None,
) -> dict:
    return {
        "task": task,
        "views": views.to_dict(),
        "active_prompt": ctx.active_prompt,
        "interjections": [e.to_dict() for e in ctx.interjection_stack],
        "prior_skills": list(ctx.prior_skills),
        "allowed_skills": allowed_skills if allowed_skills is not None else grammar.skill_list(),
    }


@dataclass
class RemoteBackend:
    """Blocking JSON-over-HTTP client for a remote decision endpoint."""

    endpoint: str
    timeout_ms: float = 2000.0

    def decide(self, request: dict) -> HighLevelDecision:
        body = json.dumps(request).encode()
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
                raw = resp.read()
        except TimeoutError as exc:
            raise BackendTimeout(str(exc)) from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise BackendTimeout(str(exc)) from exc
            raise BackendError(str(exc)) from exc
        try:
            data = json.loads(raw)
            skill_text = data["skill_text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendMalformed(f"bad reply: {raw[:200]!r}") from exc
        if not isinstance(skill_text, str):
            raise BackendMalformed(f"skill_text is not a string: {skill_text!r}")
        utterance = data.get("utterance")
        if utterance is not None and not isinstance(utterance, str):
            raise BackendMalformed(f"utterance is not a string: {utterance!r}")
        return HighLevelDecision(skill_text, utterance)


def remote_decide(request: dict, endpoint: str, timeout_ms: float = 2000.0) -> HighLevelDecision:
    """One decision round-trip against a remote endpoint (see RemoteBackend)."""
    return RemoteBackend(endpoint, timeout_ms).decide(request)
