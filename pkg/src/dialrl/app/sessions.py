"""Append-only session store for the human-evaluation service.

Every session is one JSONL file under ``<run_dir>/sessions/``: a header
line, one line per utterance, and one outcome line.  The in-memory view is
rebuilt from these files on startup, so transcripts survive restarts.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..core import EMPTY_ACT, EMPTY_BELIEF, BeliefState, DialogueAct, UserGoal

DEFAULT_TURN_LIMIT = 20

ACTIVE = "active"
SUCCESS = "success"
FAILURE = "failure"


@dataclass
class TranscriptEntry:
    speaker: str
    act: DialogueAct
    rendered_text: str
    turn_index: int

    def to_jsonable(self) -> dict:
        return {
            "speaker": self.speaker,
            "act": self.act.to_lists(),
            "rendered_text": self.rendered_text,
            "turn_index": self.turn_index,
        }


@dataclass
class Session:
    id: str
    model_id: str
    goal: UserGoal
    turn_limit: int = DEFAULT_TURN_LIMIT
    created_at: float = 0.0
    status: str = ACTIVE
    judged_success: Optional[bool] = None
    turn_index: int = 0
    transcript: list[TranscriptEntry] = field(default_factory=list)
    belief: BeliefState = EMPTY_BELIEF
    last_system_act: DialogueAct = EMPTY_ACT

    @property
    def terminal(self) -> bool:
        return self.status != ACTIVE

    def to_jsonable(self) -> dict:
        return {
            "session_id": self.id,
            "model_id": self.model_id,
            "goal": self.goal.to_jsonable(),
            "turn_limit": self.turn_limit,
            "created_at": self.created_at,
            "status": self.status,
            "judged_success": self.judged_success,
            "turn_index": self.turn_index,
            "transcript": [entry.to_jsonable() for entry in self.transcript],
        }


class SessionStore:
    """Thread-safe session registry backed by per-session JSONL files."""

    def __init__(self, root: str | Path):
        self.root = Path(root) / "sessions"
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._load_existing()

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def _load_existing(self) -> None:
        for path in sorted(self.root.glob("*.jsonl")):
            session = _replay(path)
            if session is not None:
                self._sessions[session.id] = session

    def _append(self, session_id: str, record: dict) -> None:
        with open(self._path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._sessions)

    def create(self, model_id: str, goal: UserGoal, turn_limit: int = DEFAULT_TURN_LIMIT) -> Session:
        with self._lock:
            session = Session(
                id=uuid.uuid4().hex[:12],
                model_id=model_id,
                goal=goal,
                turn_limit=turn_limit,
                created_at=time.time(),
            )
            self._sessions[session.id] = session
            self._append(
                session.id,
                {
                    "kind": "header",
                    "session_id": session.id,
                    "model_id": model_id,
                    "goal": goal.to_jsonable(),
                    "turn_limit": turn_limit,
                    "created_at": session.created_at,
                },
            )
            return session

    def get(self, session_id: str) -> Optional[Session]:
        return self._sessions.get(session_id)

    def append_turn(self, session: Session, entry: TranscriptEntry) -> None:
        with self._lock:
            session.transcript.append(entry)
            self._append(session.id, {"kind": "turn", **entry.to_jsonable()})

    def set_status(self, session: Session, status: str) -> None:
        with self._lock:
            session.status = status
            self._append(session.id, {"kind": "status", "status": status})

    def record_outcome(self, session: Session, success: bool) -> None:
        with self._lock:
            session.judged_success = success
            if session.status == ACTIVE:
                session.status = SUCCESS if success else FAILURE
            self._append(
                session.id,
                {"kind": "outcome", "success": success, "status": session.status},
            )


def _replay(path: Path) -> Optional[Session]:
    session: Optional[Session] = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            kind = record.get("kind")
            if kind == "header":
                session = Session(
                    id=record["session_id"],
                    model_id=record["model_id"],
                    goal=UserGoal.from_jsonable(record["goal"]),
                    turn_limit=record["turn_limit"],
                    created_at=record["created_at"],
                )
            elif session is None:
                return None
            elif kind == "turn":
                entry = TranscriptEntry(
                    speaker=record["speaker"],
                    act=DialogueAct.from_lists(record["act"]),
                    rendered_text=record["rendered_text"],
                    turn_index=record["turn_index"],
                )
                session.transcript.append(entry)
                session.turn_index = max(session.turn_index, entry.turn_index)
                if entry.speaker == "user":
                    from ..core import update_belief

                    session.belief = update_belief(session.belief, entry.act)
                else:
                    session.last_system_act = entry.act
            elif kind == "status":
                session.status = record["status"]
            elif kind == "outcome":
                session.judged_success = record["success"]
                session.status = record["status"]
    return session
