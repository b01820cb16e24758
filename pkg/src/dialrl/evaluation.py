"""Evaluation harness, fixed-candidate baseline, and zero-shot LLM baseline.

The harness replays seeded goals against the simulated user with greedy
decoding and unshaped rewards.  The fixed-candidate baseline classifies
over act combinations mined from a corpus, which makes every act outside
the mined set structurally unreachable.  The LLM baseline is prompt
construction plus reply parsing only; the transport is pluggable and
defaults to a replay stub.
"""

from __future__ import annotations

import dataclasses
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .actgrammar import populate_values
from .core import (
    INFORM_INTENT,
    NONE_VALUE,
    REQUEST_INTENT,
    REQUEST_VALUE,
    AtomicAct,
    BeliefState,
    DbResultSummary,
    DialogueAct,
    DialogueStateText,
    Quadruple,
    Schema,
    ValidationError,
)
from .db import Database
from .episodes import play_episode, transcript_jsonable
from .neural import model as nn
from .neural import tensor as t
from .neural.model import ModelConfig, ParamStore
from .neural.tensor import Tensor
from .neural.vocab import Vocabulary
from .simulator import RewardConfig, sample_goal


@dataclass
class EvalReport:
    n_episodes: int
    success_rate: float
    avg_turns: float
    avg_reward: float
    transcript_path: Optional[str] = None

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(
    policy,
    schema: Schema,
    db: Database,
    reward: RewardConfig,
    n_episodes: int,
    seed: int,
    transcript_path: Optional[str | Path] = None,
) -> EvalReport:
    """Run seeded evaluation episodes with greedy decoding, unshaped rewards.

    A user-system exchange adds two to the turn count.
    """
    if n_episodes < 1:
        raise ValidationError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    successes = 0
    turns = 0.0
    total_reward = 0.0
    sink = None
    if transcript_path is not None:
        transcript_path = Path(transcript_path)
        transcript_path.parent.mkdir(parents=True, exist_ok=True)
        sink = open(transcript_path, "w", encoding="utf-8")
    try:
        for index in range(n_episodes):
            goal = sample_goal(schema, db, rng)

            def decide(state_text, user_act, last_system, belief):
                decision = policy.decide(state_text, belief, db, mode="greedy")
                return decision.act, decision

            episode = play_episode(decide, schema, db, reward, goal)
            successes += int(episode.success)
            turns += episode.turn_count
            total_reward += episode.total_env_reward
            if sink is not None:
                sink.write(json.dumps(transcript_jsonable(episode, index), sort_keys=True) + "\n")
    finally:
        if sink is not None:
            sink.close()
    return EvalReport(
        n_episodes=n_episodes,
        success_rate=successes / n_episodes,
        avg_turns=turns / n_episodes,
        avg_reward=total_reward / n_episodes,
        transcript_path=str(transcript_path) if transcript_path else None,
    )


# ---------------------------------------------------------------------------
# Fixed-candidate baseline


@dataclass(frozen=True)
class CandidateSet:
    """Act templates (triplet combinations) mined from a corpus by frequency."""

    templates: tuple[tuple[AtomicAct, ...], ...]

    def __len__(self) -> int:
        return len(self.templates)

    def __contains__(self, triplets) -> bool:
        return tuple(triplets) in set(self.templates)

    def index_of(self, triplets) -> Optional[int]:
        key = tuple(triplets)
        for i, template in enumerate(self.templates):
            if template == key:
                return i
        return None


def extract_candidates(target_acts: Sequence[DialogueAct], min_count: int = 2) -> CandidateSet:
    """Keep act-triplet combinations appearing at least ``min_count`` times."""
    counter: Counter = Counter(tuple(act.triplets()) for act in target_acts)
    kept = [combo for combo, n in counter.items() if n >= min_count]
    kept.sort(key=lambda combo: (-counter[combo], [(t.domain, t.intent, t.slot) for t in combo]))
    if not kept:
        raise ValidationError("candidate extraction produced an empty set")
    return CandidateSet(templates=tuple(kept))


@dataclass
class CandidateDecision:
    act: DialogueAct
    index: int
    log_prob: float
    state_text: DialogueStateText


class CandidatePolicy:
    """Classification policy over a fixed candidate list.

    Shares the state-encoder architecture with the generative policy but
    replaces generation with a softmax over mined act combinations, so any
    combination outside the list is structurally unreachable.
    """

    kind = "candidate"

    def __init__(
        self,
        params: ParamStore,
        config: ModelConfig,
        vocab: Vocabulary,
        schema: Schema,
        candidates: CandidateSet,
    ):
        self.params = params
        self.config = config
        self.vocab = vocab
        self.schema = schema
        self.candidates = candidates

    @classmethod
    def initialize(
        cls,
        config: ModelConfig,
        vocab: Vocabulary,
        schema: Schema,
        candidates: CandidateSet,
        rng: np.random.Generator,
    ) -> "CandidatePolicy":
        params = nn.init_params(
            config, len(vocab), rng, kind="candidate", n_candidates=len(candidates)
        )
        return cls(params, config, vocab, schema, candidates)

    def _logits(self, state_texts: Sequence[DialogueStateText]) -> Tensor:
        state = nn.encode_texts(self.params, self.config, self.vocab, state_texts)
        pooled = t.reduce_mean(state, axis=1)
        return t.matmul(pooled, self.params["cand.head.w"]) + self.params["cand.head.b"]

    def decide(
        self,
        state_text: DialogueStateText,
        belief: BeliefState,
        db: Database,
        rng: Optional[np.random.Generator] = None,
        mode: str = "greedy",
    ) -> CandidateDecision:
        logp = t.log_softmax(self._logits([state_text]), axis=-1).data[0]
        if mode == "greedy":
            index = int(np.argmax(logp))
        elif mode == "sample":
            if rng is None:
                raise ValidationError("sampling needs an rng")
            probs = np.exp(logp)
            index = int(rng.choice(len(probs), p=probs / probs.sum()))
        else:
            raise ValidationError(f"unknown decode mode {mode!r}")
        act = populate_values(self.candidates.templates[index], db.entities, belief)
        return CandidateDecision(
            act=act, index=index, log_prob=float(logp[index]), state_text=state_text
        )

    def score(self, state_texts: Sequence[DialogueStateText], actions: Sequence[int]) -> Tensor:
        logp = t.log_softmax(self._logits(state_texts), axis=-1)
        return t.gather_last(logp, np.asarray(actions, dtype=np.int64))

    def sequence_entropy(
        self, state_texts: Sequence[DialogueStateText], actions: Sequence[int]
    ) -> Tensor:
        logp = t.log_softmax(self._logits(state_texts), axis=-1)
        ent = t.neg(t.reduce_sum(t.mul(t.exp(logp), logp), axis=-1))
        return t.reduce_mean(ent)

    def action_of(self, decision: CandidateDecision) -> int:
        return decision.index

    def warmup_params(self) -> dict:
        actor, _ = self.params.split_actor_critic()
        return actor

    def warmup_loss(self, batch) -> tuple[Tensor, int]:
        """Cross-entropy against the candidate index of each target act.

        Examples whose target combination is outside the candidate set are
        skipped; the incompleteness of mined candidates is the point of
        this baseline.
        """
        texts = []
        indices = []
        for sample in batch:
            idx = self.candidates.index_of(tuple(sample.target_act.triplets()))
            if idx is not None:
                texts.append(sample.state_text(self.schema))
                indices.append(idx)
        if not texts:
            return t.constant(np.zeros(())), 0
        logp = t.log_softmax(self._logits(texts), axis=-1)
        picked = t.gather_last(logp, np.asarray(indices, dtype=np.int64))
        loss = t.mul(t.reduce_sum(t.neg(picked)), 1.0 / len(indices))
        return loss, len(indices)


# ---------------------------------------------------------------------------
# Zero-shot LLM baseline: prompt construction and reply parsing


class LlmTransport(Protocol):
    def complete(self, prompt: str) -> str: ...


class ReplayTransport:
    """Deterministic transport for tests and offline runs."""

    def __init__(self, replies: Sequence[str]):
        self._replies = list(replies)
        self._cursor = 0

    def complete(self, prompt: str) -> str:
        if self._cursor >= len(self._replies):
            return ""
        reply = self._replies[self._cursor]
        self._cursor += 1
        return reply


_PROMPT_EXAMPLE = (
    "Example 1:\n"
    "USER: [(train, inform, depart, london kings cross)] 3 matches.\n"
    "ASSISTANT: [(train, inform, id)]\n"
)


def _slot_descriptions(schema: Schema) -> list[str]:
    by_slot: dict[str, list[str]] = {}
    for domain in schema.domains:
        for slot in schema.slots[domain]:
            if slot == NONE_VALUE:
                continue
            by_slot.setdefault(slot, []).append(domain)
    lines = []
    for slot in sorted(by_slot):
        domains = " or ".join(by_slot[slot])
        lines.append(f"{slot}: the {slot} of the {domains}.")
    return lines


def render_matches(db_counts: DbResultSummary) -> str:
    if not db_counts.counts:
        return "0 matches"
    return ", ".join(f"{n} matches" if len(db_counts.counts) == 1 else f"{d}: {n} matches" for d, n in db_counts.counts)


def build_llm_prompt(
    schema: Schema,
    act_history: Sequence[tuple[str, DialogueAct]],
    db_counts: DbResultSummary,
) -> str:
    """Render the zero-shot act-prediction prompt.

    Sections, in order: task definition, output specification (domain,
    intent, and slot enumerations from the schema), one formatting example,
    and the dialogue history with the current match counts appended to the
    final user line.
    """
    if not act_history:
        raise ValidationError("act history must be non-empty")
    lines = [
        "You are a dialogue agent to assist me with my queries and provide me with "
        "relevant information from a database. My questions are formatted as tuples of "
        "(domain, intent, slot, slot value) accompanied by the number of matching results "
        'that satisfy my constraint from the database, e.g., "4 matches".',
        "Your responses should be formatted as one or several tuples of "
        "(domain, intent, slot) to provide me with the necessary information.",
        f"The domain is selected from {', '.join(schema.domains)}.",
        f"The intent is selected from {', '.join(schema.intents)}.",
        "The slot includes " + " ".join(_slot_descriptions(schema)),
        _PROMPT_EXAMPLE.rstrip("\n"),
        "Example 2:",
    ]
    history_lines = []
    for i, (speaker, act) in enumerate(act_history):
        rendered = _render_act_tuples(act)
        tag = "USER" if speaker == "user" else "ASSISTANT"
        line = f"{tag}: {rendered}"
        if speaker == "user" and i == len(act_history) - 1:
            line += f" {render_matches(db_counts)}."
        history_lines.append(line)
    return "\n".join(lines + history_lines) + "\nASSISTANT:"


def _render_act_tuples(act: DialogueAct) -> str:
    parts = []
    for q in act.quadruples:
        if q.intent == REQUEST_INTENT or q.value == REQUEST_VALUE:
            parts.append(f"({q.domain}, {q.intent}, {q.slot})")
        else:
            parts.append(f"({q.domain}, {q.intent}, {q.slot}, {q.value})")
    return "[" + ", ".join(parts) + "]"


def parse_llm_reply(text: str, schema: Schema) -> DialogueAct:
    """Extract schema-valid act tuples from free-form reply text.

    Scans for parenthesized tuples anywhere in the text, validates each
    against the schema, and silently discards the rest (hallucinated
    domains, slots, or values and format violations all degrade to
    discards).  Worst case is the empty act.
    """
    quadruples: list[Quadruple] = []
    for fields in _tuple_candidates(text):
        quad = _validate_tuple(fields, schema)
        if quad is not None and quad not in quadruples:
            quadruples.append(quad)
    return DialogueAct(tuple(quadruples))


def _tuple_candidates(text: str):
    depth = 0
    buffer: list[str] = []
    for ch in text:
        if ch == "(":
            depth += 1
            if depth == 1:
                buffer = []
                continue
        if ch == ")" and depth > 0:
            depth -= 1
            if depth == 0:
                yield [part.strip().lower() for part in "".join(buffer).split(",")]
                continue
        if depth >= 1:
            buffer.append(ch)


def _validate_tuple(fields: Sequence[str], schema: Schema) -> Optional[Quadruple]:
    if len(fields) not in (3, 4):
        return None
    domain, intent, slot = fields[0], fields[1], fields[2]
    if not schema.is_valid_triplet(domain, intent, slot):
        return None
    value = fields[3] if len(fields) == 4 else None
    if intent == REQUEST_INTENT:
        if value not in (None, REQUEST_VALUE):
            return None
        return Quadruple(domain, intent, slot, REQUEST_VALUE)
    if intent == INFORM_INTENT:
        if value is None or value == NONE_VALUE:
            return Quadruple(domain, intent, slot, NONE_VALUE)
        if value in schema.slot_values(domain, slot):
            return Quadruple(domain, intent, slot, value)
        return None
    if value not in (None, NONE_VALUE):
        return None
    return Quadruple(domain, intent, slot, NONE_VALUE)


class LlmActPolicy:
    """Dialogue-act policy backed by a remote completion transport."""

    kind = "llm"

    def __init__(self, schema: Schema, transport: LlmTransport):
        self.schema = schema
        self.transport = transport
        self.history: list[tuple[str, DialogueAct]] = []

    def reset(self) -> None:
        self.history = []

    def respond(self, user_act: DialogueAct, db_counts: DbResultSummary) -> DialogueAct:
        self.history.append(("user", user_act))
        prompt = build_llm_prompt(self.schema, self.history, db_counts)
        act = parse_llm_reply(self.transport.complete(prompt), self.schema)
        self.history.append(("assistant", act))
        return act
