"""Agenda-based rule user simulator, environment rewards, and reward shaping.

The simulated user keeps a LIFO agenda of pending acts built from a sampled
goal (constraint informs pop before requests), reacts to system acts with a
fixed rule set, and terminates with success once every request has been
answered and every constraint conveyed.  Rewards follow the episodic scheme:
a per-turn penalty plus a terminal bonus or penalty, optionally shaped with
goal-directed bonuses for on-goal informs and requests.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import (
    BYE_INTENT,
    INFORM_INTENT,
    NONE_VALUE,
    REQUEST_INTENT,
    REQUEST_VALUE,
    AtomicAct,
    BeliefState,
    DialogueAct,
    Quadruple,
    Schema,
    UserGoal,
    ValidationError,
)
from .db import Database, query

# The user utters at most this many agenda items per turn.
USER_MAX_ACTS_PER_TURN = 3

# Pseudo-slot used by slotless intents such as the terminal goodbye.
NONE_SLOT = "none"

DEFAULT_GOAL_SAMPLE_ATTEMPTS = 1000


@dataclass
class RewardConfig:
    """Environment and shaping reward parameters."""

    per_turn: float = -1.0
    success_bonus: float = 80.0
    failure_penalty: float = -40.0
    max_turns: int = 40
    shaping_lambda: float = 3.0
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if self.max_turns < 2 or self.max_turns % 2 != 0:
            raise ValidationError("max_turns must be even and >= 2")
        if self.shaping_lambda <= 0:
            raise ValidationError("shaping_lambda must be positive")

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class AgendaItem:
    act: AtomicAct
    value: str


@dataclass
class Agenda:
    """LIFO stack of pending user acts; an item is never stacked twice."""

    items: list[AgendaItem] = field(default_factory=list)

    def push(self, item: AgendaItem) -> None:
        if item not in self.items:
            self.items.append(item)

    def pop(self) -> AgendaItem:
        return self.items.pop()

    def copy(self) -> "Agenda":
        return Agenda(list(self.items))

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class SimulatorState:
    goal: UserGoal
    agenda: Agenda
    fulfilled_requests: dict[str, set[str]]
    informed_constraints: dict[str, set[str]]
    turn_index: int = 0
    terminal: bool = False
    success: bool = False

    def copy(self) -> "SimulatorState":
        return SimulatorState(
            goal=self.goal,
            agenda=self.agenda.copy(),
            fulfilled_requests={d: set(s) for d, s in self.fulfilled_requests.items()},
            informed_constraints={d: set(s) for d, s in self.informed_constraints.items()},
            turn_index=self.turn_index,
            terminal=self.terminal,
            success=self.success,
        )


def sample_goal(
    schema: Schema,
    db: Database,
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_GOAL_SAMPLE_ATTEMPTS,
) -> UserGoal:
    """Sample a satisfiable user goal.

    Picks one or two domains uniformly, then includes each informable slot
    as a constraint (and each requestable slot as a request) with
    probability ``weight / max weight`` within its category; constraint
    values are uniform over the slot vocabulary.  Goals are rejected and
    resampled until every constrained domain has at least one matching
    database entity and the goal carries at least one constraint and one
    request overall.
    """
    domains = list(schema.domains)
    for _ in range(max_attempts):
        n_domains = int(rng.integers(1, min(2, len(domains)) + 1))
        picked = sorted(rng.choice(domains, size=n_domains, replace=False).tolist())
        constraints: dict[str, dict[str, str]] = {}
        requests: dict[str, tuple[str, ...]] = {}
        for domain in picked:
            cons = _sample_category(
                schema, domain, schema.informable.get(domain, ()), rng
            )
            cmap = {}
            for slot in cons:
                vocab = schema.slot_values(domain, slot)
                cmap[slot] = vocab[int(rng.integers(len(vocab)))]
            reqs = _sample_category(
                schema, domain, schema.requestable.get(domain, ()), rng, exclude=set(cmap)
            )
            if cmap:
                constraints[domain] = cmap
            if reqs:
                requests[domain] = tuple(reqs)
        total_cons = sum(len(c) for c in constraints.values())
        total_reqs = sum(len(r) for r in requests.values())
        if total_cons == 0 or total_reqs == 0:
            continue
        if not _satisfiable(db, constraints, requests):
            continue
        return UserGoal(constraints=constraints, requests=requests).validate(schema)
    raise ValidationError("unsatisfiable schema weights: goal sampling exhausted its attempts")


def _sample_category(
    schema: Schema,
    domain: str,
    slots: Iterable[str],
    rng: np.random.Generator,
    exclude: set[str] | None = None,
) -> list[str]:
    slots = [s for s in sorted(slots) if not exclude or s not in exclude]
    weights = [schema.weight(domain, s) for s in slots]
    top = max(weights, default=0.0)
    if top <= 0:
        return []
    return [s for s, w in zip(slots, weights) if rng.random() < w / top]


def _satisfiable(
    db: Database,
    constraints: dict[str, dict[str, str]],
    requests: dict[str, tuple[str, ...]],
) -> bool:
    for domain in set(constraints) | set(requests):
        if not query(db, domain, constraints.get(domain, {})):
            return False
    return True


def init_agenda(goal: UserGoal) -> Agenda:
    """Stack the goal: requests pushed first, so constraint informs pop first.

    Items are pushed in reverse lexicographic (domain, slot) order within
    each group, which makes pops come out lexicographically.
    """
    agenda = Agenda()
    request_items = [
        AgendaItem(AtomicAct(d, REQUEST_INTENT, s), REQUEST_VALUE)
        for d in goal.requests
        for s in goal.requests[d]
    ]
    inform_items = [
        AgendaItem(AtomicAct(d, INFORM_INTENT, s), v)
        for d in goal.constraints
        for s, v in goal.constraints[d].items()
    ]
    key = lambda item: (item.act.domain, item.act.slot)
    for item in sorted(request_items, key=key, reverse=True):
        agenda.push(item)
    for item in sorted(inform_items, key=key, reverse=True):
        agenda.push(item)
    return agenda


def new_dialogue(goal: UserGoal) -> SimulatorState:
    return SimulatorState(
        goal=goal,
        agenda=init_agenda(goal),
        fulfilled_requests={d: set() for d in goal.requests},
        informed_constraints={d: set() for d in goal.constraints},
    )


def first_user_act(
    state: SimulatorState, max_acts: int = USER_MAX_ACTS_PER_TURN
) -> tuple[DialogueAct, SimulatorState]:
    """Open the dialogue: the user pops its first agenda items (one turn)."""
    if state.terminal:
        raise RuntimeError("cannot open a terminal dialogue")
    state = state.copy()
    quads = _pop_items(state, max_acts)
    state.turn_index += 1
    return DialogueAct(tuple(quads)), state


def step(
    state: SimulatorState,
    system_act: DialogueAct,
    schema: Schema,
    reward: RewardConfig,
    rng: Optional[np.random.Generator] = None,
    max_acts: int = USER_MAX_ACTS_PER_TURN,
) -> tuple[DialogueAct, SimulatorState]:
    """Consume one system act and produce the user's reply.

    Rule order: (1) a system request of a constrained slot re-stacks its
    inform; (2) a system inform of a requested slot with a real value marks
    it fulfilled; (3) a system inform contradicting a constraint stacks a
    corrective inform; (4) the user pops up to ``max_acts`` agenda items;
    (5) a fully satisfied goal ends the dialogue with a goodbye and success;
    (6) reaching the turn limit ends it with failure.  The current rules
    are deterministic; ``rng`` is accepted for rule sets that are not.
    """
    del rng
    if state.terminal:
        raise RuntimeError("cannot step a terminal dialogue")
    goal = state.goal
    state = state.copy()
    state.turn_index += 1

    for q in system_act.quadruples:
        if q.intent == REQUEST_INTENT:
            value = goal.constraints.get(q.domain, {}).get(q.slot)
            if value is not None:
                state.agenda.push(AgendaItem(AtomicAct(q.domain, INFORM_INTENT, q.slot), value))
    for q in system_act.quadruples:
        if (
            q.intent == INFORM_INTENT
            and q.slot in goal.requests.get(q.domain, ())
            and q.value != NONE_VALUE
        ):
            state.fulfilled_requests[q.domain].add(q.slot)
    for q in system_act.quadruples:
        if q.intent == INFORM_INTENT:
            expected = goal.constraints.get(q.domain, {}).get(q.slot)
            if expected is not None and q.value != expected:
                state.agenda.push(AgendaItem(AtomicAct(q.domain, INFORM_INTENT, q.slot), expected))

    quads = _pop_items(state, max_acts)

    if _goal_satisfied(state):
        state.terminal = True
        state.success = True
        quads.append(_goodbye_quadruple(schema, goal))
        state.turn_index = min(state.turn_index + 1, reward.max_turns)
        _assert_success_state(state)
    elif state.turn_index >= reward.max_turns:
        state.terminal = True
        state.success = False
        quads = []
    else:
        state.turn_index += 1
    return DialogueAct(tuple(quads)), state


def _pop_items(state: SimulatorState, max_acts: int) -> list[Quadruple]:
    quads: list[Quadruple] = []
    for _ in range(min(max_acts, len(state.agenda))):
        item = state.agenda.pop()
        quads.append(Quadruple(item.act.domain, item.act.intent, item.act.slot, item.value))
        if item.act.intent == INFORM_INTENT:
            state.informed_constraints.setdefault(item.act.domain, set()).add(item.act.slot)
    return quads


def _goal_satisfied(state: SimulatorState) -> bool:
    goal = state.goal
    for domain, slots in goal.requests.items():
        if not set(slots) <= state.fulfilled_requests.get(domain, set()):
            return False
    for domain, cmap in goal.constraints.items():
        if not set(cmap) <= state.informed_constraints.get(domain, set()):
            return False
    return True


def _assert_success_state(state: SimulatorState) -> None:
    for domain, slots in state.goal.requests.items():
        assert set(slots) == set(slots) & state.fulfilled_requests.get(domain, set())
    for domain, cmap in state.goal.constraints.items():
        assert set(cmap) <= state.informed_constraints.get(domain, set())


def _goodbye_quadruple(schema: Schema, goal: UserGoal) -> Quadruple:
    domain = goal.domains()[0]
    if schema.has_intent(BYE_INTENT) and schema.has_slot(domain, NONE_SLOT):
        return Quadruple(domain, BYE_INTENT, NONE_SLOT, NONE_VALUE)
    # Schema without a goodbye vocabulary: fall back to a bare inform of the
    # pseudo-slot if present, else repeat the first constraint inform.
    if schema.has_slot(domain, NONE_SLOT):
        return Quadruple(domain, INFORM_INTENT, NONE_SLOT, NONE_VALUE)
    cmap = goal.constraints.get(domain) or {}
    if cmap:
        slot, value = sorted(cmap.items())[0]
        return Quadruple(domain, INFORM_INTENT, slot, value)
    slot = goal.requests[domain][0]
    return Quadruple(domain, REQUEST_INTENT, slot, REQUEST_VALUE)


def env_reward(state_after_system_turn: SimulatorState, reward: RewardConfig) -> float:
    """Environment reward for the system turn that produced this state.

    Call exactly once per system turn, on the state returned by ``step``.
    """
    r = reward.per_turn
    if state_after_system_turn.terminal:
        r += reward.success_bonus if state_after_system_turn.success else reward.failure_penalty
    return r


@dataclass
class ShapingState:
    """Tracks which goal slots have already earned their shaping bonus."""

    rewarded: set[tuple[str, str, str]] = field(default_factory=set)


def shaping_bonus(
    goal: UserGoal,
    system_act: DialogueAct,
    shaping_state: ShapingState,
    reward: RewardConfig,
) -> float:
    """Shaping term for one system act.

    Informing a requested slot or requesting a constrained slot earns
    ``+shaping_lambda`` the first time that slot earns it in the dialogue
    and -1 on repeats; informing or requesting any other slot earns -1;
    other intents are neutral.  ``shaping_state`` is updated in place.
    """
    bonus = 0.0
    for q in system_act.quadruples:
        if q.intent == INFORM_INTENT:
            on_goal = q.slot in goal.requests.get(q.domain, ())
            key = (INFORM_INTENT, q.domain, q.slot)
        elif q.intent == REQUEST_INTENT:
            on_goal = q.slot in goal.constraints.get(q.domain, {})
            key = (REQUEST_INTENT, q.domain, q.slot)
        else:
            continue
        if on_goal and key not in shaping_state.rewarded:
            shaping_state.rewarded.add(key)
            bonus += reward.shaping_lambda
        else:
            bonus -= 1.0
    return bonus


class RuleSystemPolicy:
    """Hand-coded oracle system policy used for expert data and soundness checks.

    It answers every user request with a database-grounded inform and
    requests the goal's constraint slots that the user has not conveyed yet.
    It lives simulator-side and may read the goal.
    """

    def __init__(self, schema: Schema, db: Database, max_requests: int = 2):
        self.schema = schema
        self.db = db
        self.max_requests = max_requests

    def act(self, goal: UserGoal, user_act: DialogueAct, belief: BeliefState) -> DialogueAct:
        quads: list[Quadruple] = []
        for q in user_act.quadruples:
            if q.intent != REQUEST_INTENT:
                continue
            entities = query(self.db, q.domain, belief.constraints_for(q.domain))
            value = entities[0].values.get(q.slot, NONE_VALUE) if entities else NONE_VALUE
            quads.append(Quadruple(q.domain, INFORM_INTENT, q.slot, value))
        known = {(t.domain, t.slot) for t in belief.triplets}
        pending = [
            (domain, slot)
            for domain in sorted(goal.constraints)
            for slot in sorted(goal.constraints[domain])
            if (domain, slot) not in known
        ]
        for domain, slot in pending[: self.max_requests]:
            quads.append(Quadruple(domain, REQUEST_INTENT, slot, REQUEST_VALUE))
        return DialogueAct(tuple(quads))
