"""Word-level dialogue policy: from observed state to a structured act.

``WordPolicy.act`` chains the full pipeline: linearize the observed state,
encode it, generate act tokens, parse them back into schema-valid triplets,
and ground slot values in the database.  ``score`` re-evaluates the
sequence log-probability of recorded actions, which is what the
clipped-surrogate update differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .actgrammar import ParseReport, linearize_target, parse_act_text, populate_values
from .core import (
    BeliefState,
    DialogueAct,
    DialogueStateText,
    Schema,
    build_state_text,
)
from .db import Database, match_counts
from .neural import model as nn
from .neural import tensor as t
from .neural.model import ModelConfig, ParamStore
from .neural.tensor import Tensor
from .neural.vocab import Vocabulary


@dataclass
class PolicyDecision:
    """One policy invocation with full provenance."""

    act: DialogueAct
    tokens: list[int]
    log_prob: float
    parse: ParseReport
    state_text: DialogueStateText
    truncated: bool


class WordPolicy:
    """Generative policy over act tokens."""

    kind = "word"

    def __init__(self, params: ParamStore, config: ModelConfig, vocab: Vocabulary, schema: Schema):
        self.params = params
        self.config = config
        self.vocab = vocab
        self.schema = schema

    def observe(
        self,
        user_act: DialogueAct,
        last_system_act: DialogueAct,
        belief: BeliefState,
        db: Database,
    ) -> DialogueStateText:
        summary = match_counts(db, belief)
        return build_state_text(user_act, last_system_act, belief, summary, self.schema)

    def act(
        self,
        user_act: DialogueAct,
        last_system_act: DialogueAct,
        belief: BeliefState,
        db: Database,
        rng: Optional[np.random.Generator] = None,
        mode: str = "greedy",
    ) -> PolicyDecision:
        state_text = self.observe(user_act, last_system_act, belief, db)
        return self.decide(state_text, belief, db, rng=rng, mode=mode)

    def decide(
        self,
        state_text: DialogueStateText,
        belief: BeliefState,
        db: Database,
        rng: Optional[np.random.Generator] = None,
        mode: str = "greedy",
    ) -> PolicyDecision:
        state = nn.encode_texts(self.params, self.config, self.vocab, [state_text])
        tokens, log_prob, truncated = nn.sample_action(
            self.params, self.config, self.vocab, state, rng=rng, mode=mode
        )
        report = parse_act_text(self.vocab.decode(tokens), self.schema)
        act = populate_values(report.triplets, db.entities, belief)
        return PolicyDecision(
            act=act,
            tokens=tokens,
            log_prob=log_prob,
            parse=report,
            state_text=state_text,
            truncated=truncated,
        )

    def score(
        self, state_texts: Sequence[DialogueStateText], token_seqs: Sequence[Sequence[int]]
    ) -> Tensor:
        """Sequence log-probabilities log pi(tokens | state), batched.

        Trailing padding beyond the end token is stripped before scoring, so
        the score is invariant to it.
        """
        cleaned = [self._strip(seq) for seq in token_seqs]
        state = nn.encode_texts(self.params, self.config, self.vocab, state_texts)
        seq_logp, _, _ = nn.decode_logprobs(self.params, self.config, self.vocab, state, cleaned)
        return seq_logp

    def _strip(self, seq: Sequence[int]) -> list[int]:
        out: list[int] = []
        for token in seq:
            out.append(int(token))
            if token == self.vocab.end_id:
                break
        if not out:
            raise ValueError("cannot score an empty token sequence")
        return out

    def action_of(self, decision: PolicyDecision) -> list[int]:
        return decision.tokens

    def warmup_params(self) -> dict:
        actor, _ = self.params.split_actor_critic()
        return actor

    def target_tokens(self, act: DialogueAct) -> list[int]:
        return self.vocab.encode(linearize_target(act, self.schema))

    def warmup_loss(self, batch) -> tuple[Tensor, int]:
        """Teacher-forced mean per-token NLL over one corpus batch.

        Batch items carry ``state_text(schema)`` and ``target_act``.
        """
        texts = [sample.state_text(self.schema) for sample in batch]
        targets = [self.target_tokens(sample.target_act) for sample in batch]
        state = nn.encode_texts(self.params, self.config, self.vocab, texts)
        seq_logp, _, mask = nn.decode_logprobs(self.params, self.config, self.vocab, state, targets)
        n_tokens = int(mask.sum())
        loss = t.mul(t.reduce_sum(t.neg(seq_logp)), 1.0 / max(n_tokens, 1))
        return loss, n_tokens

    def sequence_entropy(
        self, state_texts: Sequence[DialogueStateText], token_seqs: Sequence[Sequence[int]]
    ) -> Tensor:
        """Mean per-step token-distribution entropy along recorded sequences."""
        cleaned = [self._strip(seq) for seq in token_seqs]
        state = nn.encode_texts(self.params, self.config, self.vocab, state_texts)
        return nn.step_entropy(self.params, self.config, self.vocab, state, cleaned)
