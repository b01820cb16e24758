"""HTTP session service for interactive (human) evaluation.

Evaluators play the user side against a served policy checkpoint: the
service samples a goal, accepts structured user acts turn by turn, replies
with the policy's act plus a template rendering, and records the final
success judgment.  All state is persisted through the append-only session
store, and every system act is produced by the exact same policy path the
batch evaluation uses.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from ..core import (
    REQUEST_INTENT,
    REQUEST_VALUE,
    DialogueAct,
    Quadruple,
    Schema,
    ValidationError,
    update_belief,
)
from ..db import Database
from ..neural.model import load_checkpoint
from ..policy import WordPolicy
from ..simulator import RewardConfig, sample_goal
from .nlg import render_act, render_goal
from .sessions import ACTIVE, FAILURE, SessionStore, TranscriptEntry, DEFAULT_TURN_LIMIT


class QuadrupleModel(BaseModel):
    domain: str
    intent: str
    slot: str
    value: str

    def to_quadruple(self) -> Quadruple:
        return Quadruple(self.domain, self.intent, self.slot, self.value)


class CreateSessionRequest(BaseModel):
    model_id: str


class CreateSessionResponse(BaseModel):
    session_id: str
    goal: dict
    turn_limit: int


class TurnRequest(BaseModel):
    user_act: list[QuadrupleModel] = Field(min_length=1)


class TurnResponse(BaseModel):
    system_act: list[list[str]]
    rendered_text: str
    turn_index: int
    status: str


class OutcomeRequest(BaseModel):
    success: bool


class OutcomeResponse(BaseModel):
    session_id: str
    status: str
    judged_success: bool


class ModelsResponse(BaseModel):
    models: list[str]


class ModelRegistry:
    """Lazy checkpoint loader keyed by model id."""

    def __init__(self, schema: Schema, checkpoints: dict[str, str | Path]):
        self.schema = schema
        self._paths = dict(checkpoints)
        self._policies: dict[str, WordPolicy] = {}

    def ids(self) -> list[str]:
        return sorted(self._paths)

    def get(self, model_id: str) -> Optional[WordPolicy]:
        if model_id not in self._paths:
            return None
        if model_id not in self._policies:
            params, config, vocab, _ = load_checkpoint(self._paths[model_id])
            self._policies[model_id] = WordPolicy(params, config, vocab, self.schema)
        return self._policies[model_id]


def _validate_user_act(act: DialogueAct, schema: Schema) -> None:
    for q in act.quadruples:
        if not schema.has_domain(q.domain):
            raise ValidationError(f"unknown domain {q.domain!r}")
        if not schema.has_intent(q.intent):
            raise ValidationError(f"unknown intent {q.intent!r}")
        if not schema.has_slot(q.domain, q.slot):
            raise ValidationError(f"unknown slot {q.slot!r} for domain {q.domain!r}")
        if q.intent == REQUEST_INTENT:
            if q.value != REQUEST_VALUE:
                raise ValidationError(
                    f"request of slot {q.slot!r} must carry the value {REQUEST_VALUE!r}"
                )
        elif q.intent == "inform":
            if q.value not in schema.slot_values(q.domain, q.slot):
                raise ValidationError(
                    f"value {q.value!r} is not in the vocabulary of slot {q.slot!r}"
                )


def create_app(
    schema: Schema,
    db: Database,
    registry: ModelRegistry,
    store: SessionStore,
    reward: Optional[RewardConfig] = None,
    turn_limit: int = DEFAULT_TURN_LIMIT,
    goal_seed: int = 20_240_001,
) -> FastAPI:
    reward = reward or RewardConfig()
    app = FastAPI(title="dialrl session service")
    goal_rng = np.random.default_rng(goal_seed + len(store))

    @app.get("/models", response_model=ModelsResponse)
    def list_models():
        return ModelsResponse(models=registry.ids())

    @app.get("/schema")
    def get_schema():
        return {
            "domains": list(schema.domains),
            "intents": list(schema.intents),
            "slots": {d: {s: list(v) for s, v in schema.slots[d].items()} for d in schema.domains},
            "requestable": {d: list(schema.requestable[d]) for d in schema.domains},
            "informable": {d: list(schema.informable[d]) for d in schema.domains},
        }

    @app.post("/sessions", response_model=CreateSessionResponse)
    def create_session(request: CreateSessionRequest):
        if registry.get(request.model_id) is None:
            raise HTTPException(status_code=404, detail=f"unknown model {request.model_id!r}")
        goal = sample_goal(schema, db, goal_rng)
        session = store.create(request.model_id, goal, turn_limit=turn_limit)
        return CreateSessionResponse(
            session_id=session.id, goal=render_goal(goal), turn_limit=session.turn_limit
        )

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session.to_jsonable()

    @app.post("/sessions/{session_id}/turn", response_model=TurnResponse)
    def post_turn(session_id: str, request: TurnRequest):
        session = store.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        if session.terminal:
            raise HTTPException(
                status_code=409,
                detail={"message": "session is no longer active", "status": session.status},
            )
        user_act = DialogueAct(tuple(q.to_quadruple() for q in request.user_act))
        try:
            _validate_user_act(user_act, schema)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

        policy = registry.get(session.model_id)
        session.belief = update_belief(session.belief, user_act)
        decision = policy.act(
            user_act, session.last_system_act, session.belief, db, mode="greedy"
        )
        rendered = render_act(decision.act)

        session.turn_index += 1
        store.append_turn(
            session,
            TranscriptEntry("user", user_act, "", session.turn_index),
        )
        session.turn_index += 1
        store.append_turn(
            session,
            TranscriptEntry("system", decision.act, rendered, session.turn_index),
        )
        session.last_system_act = decision.act
        if session.turn_index >= session.turn_limit and session.status == ACTIVE:
            store.set_status(session, FAILURE)
        return TurnResponse(
            system_act=[[str(x) for x in row] for row in decision.act.to_lists()],
            rendered_text=rendered,
            turn_index=session.turn_index,
            status=session.status,
        )

    @app.post("/sessions/{session_id}/outcome", response_model=OutcomeResponse)
    def post_outcome(session_id: str, request: OutcomeRequest):
        session = store.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        if session.judged_success is not None:
            raise HTTPException(status_code=409, detail="outcome already recorded")
        store.record_outcome(session, request.success)
        return OutcomeResponse(
            session_id=session.id, status=session.status, judged_success=request.success
        )

    return app
