"""Episode driver: connect a system policy to the simulated user.

One episode alternates user and system utterances until the simulator
terminates.  The driver owns belief tracking (folding user informs into the
belief) and reward bookkeeping; the system side is any callable from the
observed state to a dialogue act.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import (
    EMPTY_ACT,
    EMPTY_BELIEF,
    BeliefState,
    DialogueAct,
    DialogueStateText,
    Schema,
    UserGoal,
    build_state_text,
    update_belief,
)
from .db import Database, match_counts
from .simulator import (
    RewardConfig,
    ShapingState,
    env_reward,
    first_user_act,
    new_dialogue,
    shaping_bonus,
    step,
)

# decide(state_text, user_act, last_system_act, belief) -> (system_act, payload)
DecideFn = Callable[
    [DialogueStateText, DialogueAct, DialogueAct, BeliefState], tuple[DialogueAct, object]
]


@dataclass
class EpisodeTurn:
    state_text: DialogueStateText
    user_act: DialogueAct
    prev_system_act: DialogueAct
    belief: BeliefState
    system_act: DialogueAct
    payload: object
    env_r: float
    shaped_r: float
    done: bool


@dataclass
class Episode:
    goal: UserGoal
    turns: list[EpisodeTurn] = field(default_factory=list)
    success: bool = False
    turn_count: int = 0

    @property
    def total_env_reward(self) -> float:
        return sum(t.env_r for t in self.turns)

    @property
    def total_shaped_reward(self) -> float:
        return sum(t.shaped_r for t in self.turns)


def play_episode(
    decide: DecideFn,
    schema: Schema,
    db: Database,
    reward: RewardConfig,
    goal: UserGoal,
    shaping: bool = False,
) -> Episode:
    """Run one dialogue to termination and record every system turn."""
    state = new_dialogue(goal)
    user_act, state = first_user_act(state)
    belief = update_belief(EMPTY_BELIEF, user_act)
    last_system = EMPTY_ACT
    shaping_state = ShapingState()
    episode = Episode(goal=goal)

    while not state.terminal:
        summary = match_counts(db, belief)
        state_text = build_state_text(user_act, last_system, belief, summary, schema)
        system_act, payload = decide(state_text, user_act, last_system, belief)
        next_user_act, state = step(state, system_act, schema, reward)
        r_env = env_reward(state, reward)
        r_shaped = r_env
        if shaping:
            r_shaped += shaping_bonus(goal, system_act, shaping_state, reward)
        episode.turns.append(
            EpisodeTurn(
                state_text=state_text,
                user_act=user_act,
                prev_system_act=last_system,
                belief=belief,
                system_act=system_act,
                payload=payload,
                env_r=r_env,
                shaped_r=r_shaped,
                done=state.terminal,
            )
        )
        belief = update_belief(belief, next_user_act)
        last_system = system_act
        user_act = next_user_act

    episode.success = state.success
    episode.turn_count = state.turn_index
    return episode


def transcript_jsonable(episode: Episode, index: Optional[int] = None) -> dict:
    """Serialize one episode for transcript JSONL files."""
    return {
        "episode": index,
        "goal": episode.goal.to_jsonable(),
        "success": episode.success,
        "turns": episode.turn_count,
        "reward": episode.total_env_reward,
        "exchanges": [
            {
                "user_act": turn.user_act.to_lists(),
                "system_act": turn.system_act.to_lists(),
                "reward": turn.env_r,
            }
            for turn in episode.turns
        ],
    }
