import numpy as np
import pytest
from fastapi.testclient import TestClient

from dialrl.app.nlg import render_act
from dialrl.app.service import ModelRegistry, create_app
from dialrl.app.sessions import SessionStore
from dialrl.core import DialogueAct, Quadruple, UserGoal, update_belief
from dialrl.neural import model as nn
from dialrl.policy import WordPolicy


@pytest.fixture()
def checkpoint(tmp_path, tiny_config, vocab):
    params = nn.init_params(tiny_config, len(vocab), np.random.default_rng(0))
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(path, params, tiny_config, vocab, meta={"kind": "word"})
    return path


@pytest.fixture()
def client(tmp_path, schema, database, checkpoint):
    registry = ModelRegistry(schema, {"tiny": checkpoint})
    store = SessionStore(tmp_path / "run")
    app = create_app(schema, database, registry, store)
    return TestClient(app), store, tmp_path / "run"


def _turn_payload(*quads):
    return {
        "user_act": [
            {"domain": d, "intent": i, "slot": s, "value": v} for d, i, s, v in quads
        ]
    }


def test_models_and_schema_endpoints(client, schema):
    http, _, _ = client
    assert http.get("/models").json() == {"models": ["tiny"]}
    payload = http.get("/schema").json()
    assert payload["domains"] == list(schema.domains)
    assert "hotel" in payload["slots"]
    assert payload["requestable"]["hotel"] == list(schema.requestable["hotel"])


def test_happy_path_session(client):
    http, store, run_dir = client
    created = http.post("/sessions", json={"model_id": "tiny"}).json()
    sid = created["session_id"]
    assert created["turn_limit"] == 20
    assert "constraints" in created["goal"] and "requests" in created["goal"]

    reply = http.post(
        f"/sessions/{sid}/turn",
        json=_turn_payload(("hotel", "inform", "area", "north"), ("hotel", "request", "name", "?")),
    )
    assert reply.status_code == 200
    body = reply.json()
    assert body["turn_index"] == 2
    assert body["status"] == "active"
    assert isinstance(body["rendered_text"], str) and body["rendered_text"]

    outcome = http.post(f"/sessions/{sid}/outcome", json={"success": True})
    assert outcome.status_code == 200
    assert outcome.json()["status"] == "success"

    view = http.get(f"/sessions/{sid}").json()
    assert view["status"] == "success"
    assert len(view["transcript"]) == 2
    assert view["transcript"][0]["speaker"] == "user"
    assert (run_dir / "sessions" / f"{sid}.jsonl").exists()


def test_unknown_session_and_model(client):
    http, _, _ = client
    assert http.get("/sessions/nope").status_code == 404
    assert http.post("/sessions", json={"model_id": "missing"}).status_code == 404
    assert http.post("/sessions/nope/turn", json=_turn_payload(("hotel", "inform", "area", "north"))).status_code == 404


def test_invalid_user_act_names_field(client):
    http, _, _ = client
    sid = http.post("/sessions", json={"model_id": "tiny"}).json()["session_id"]
    bad_slot = http.post(
        f"/sessions/{sid}/turn", json=_turn_payload(("hotel", "inform", "wifi", "yes"))
    )
    assert bad_slot.status_code == 400
    assert "wifi" in bad_slot.json()["detail"]
    bad_value = http.post(
        f"/sessions/{sid}/turn", json=_turn_payload(("hotel", "inform", "area", "moon"))
    )
    assert bad_value.status_code == 400
    assert "moon" in bad_value.json()["detail"]
    empty = http.post(f"/sessions/{sid}/turn", json={"user_act": []})
    assert empty.status_code == 422  # pydantic-level shape validation


def test_turn_after_outcome_conflicts(client):
    http, _, _ = client
    sid = http.post("/sessions", json={"model_id": "tiny"}).json()["session_id"]
    http.post(f"/sessions/{sid}/outcome", json={"success": False})
    reply = http.post(
        f"/sessions/{sid}/turn", json=_turn_payload(("hotel", "inform", "area", "north"))
    )
    assert reply.status_code == 409
    second = http.post(f"/sessions/{sid}/outcome", json={"success": True})
    assert second.status_code == 409


def test_turn_limit_auto_failure(client):
    http, _, _ = client
    sid = http.post("/sessions", json={"model_id": "tiny"}).json()["session_id"]
    payload = _turn_payload(("hotel", "inform", "area", "north"))
    for exchange in range(10):
        reply = http.post(f"/sessions/{sid}/turn", json=payload)
        assert reply.status_code == 200
    assert reply.json()["status"] == "failure"
    assert reply.json()["turn_index"] == 20
    blocked = http.post(f"/sessions/{sid}/turn", json=payload)
    assert blocked.status_code == 409
    assert blocked.json()["detail"]["status"] == "failure"
    # the human judgment is still recordable after the auto-failure
    outcome = http.post(f"/sessions/{sid}/outcome", json={"success": False})
    assert outcome.status_code == 200


def test_store_survives_restart(client, schema, database, checkpoint):
    http, store, run_dir = client
    sid = http.post("/sessions", json={"model_id": "tiny"}).json()["session_id"]
    http.post(
        f"/sessions/{sid}/turn",
        json=_turn_payload(("restaurant", "inform", "food", "thai")),
    )
    http.post(f"/sessions/{sid}/outcome", json={"success": True})
    before = http.get(f"/sessions/{sid}").json()

    reloaded_store = SessionStore(run_dir)
    registry = ModelRegistry(schema, {"tiny": checkpoint})
    app2 = create_app(schema, database, registry, reloaded_store)
    http2 = TestClient(app2)
    after = http2.get(f"/sessions/{sid}").json()
    assert after == before


def test_service_act_matches_library_path(client, schema, database, checkpoint):
    """Golden replay: HTTP system acts equal direct policy.act on the same state."""
    http, _, _ = client
    sid = http.post("/sessions", json={"model_id": "tiny"}).json()["session_id"]
    params, config, vocab, _ = nn.load_checkpoint(checkpoint)
    policy = WordPolicy(params, config, vocab, schema)

    from dialrl.core import EMPTY_ACT, EMPTY_BELIEF

    belief = EMPTY_BELIEF
    last_system = EMPTY_ACT
    turns = [
        (("hotel", "inform", "area", "north"), ("hotel", "request", "name", "?")),
        (("hotel", "request", "phone", "?"),),
    ]
    for quads in turns:
        user_act = DialogueAct(tuple(Quadruple(*q) for q in quads))
        belief = update_belief(belief, user_act)
        expected = policy.act(user_act, last_system, belief, database, mode="greedy")
        reply = http.post(f"/sessions/{sid}/turn", json=_turn_payload(*quads)).json()
        assert reply["system_act"] == [[str(x) for x in row] for row in expected.act.to_lists()]
        assert reply["rendered_text"] == render_act(expected.act)
        last_system = expected.act
