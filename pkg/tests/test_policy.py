import itertools

import numpy as np
import pytest

from dialrl.core import (
    BeliefState,
    BeliefTriplet,
    DialogueAct,
    DialogueStateText,
    Quadruple,
)
from dialrl.neural import model as nn
from dialrl.neural.model import ModelConfig
from dialrl.neural.vocab import SPECIAL_TOKENS, Vocabulary
from dialrl.policy import WordPolicy


@pytest.fixture()
def policy(tiny_config, vocab, schema):
    params = nn.init_params(tiny_config, len(vocab), np.random.default_rng(0))
    return WordPolicy(params, tiny_config, vocab, schema)


def random_state_inputs(schema, database, rng):
    domains = list(schema.domains)
    domain = domains[int(rng.integers(len(domains)))]
    slots = list(schema.slots[domain])
    user_quads = []
    for _ in range(int(rng.integers(0, 3))):
        slot = slots[int(rng.integers(len(slots)))]
        intent = ("inform", "request")[int(rng.integers(2))]
        value = "?" if intent == "request" else schema.slot_values(domain, slot)[0]
        user_quads.append(Quadruple(domain, intent, slot, value))
    user_act = DialogueAct(tuple(user_quads))
    belief_slots = [s for s in schema.informable.get(domain, ())]
    triplets = []
    for slot in belief_slots[: int(rng.integers(0, len(belief_slots) + 1))]:
        values = schema.slot_values(domain, slot)
        triplets.append(BeliefTriplet(domain, slot, values[int(rng.integers(len(values)))]))
    return user_act, DialogueAct(), BeliefState(tuple(triplets))


def test_untrained_policy_always_emits_schema_valid_acts(policy, schema, database):
    rng = np.random.default_rng(123)
    for _ in range(1000):
        user_act, system_act, belief = random_state_inputs(schema, database, rng)
        decision = policy.act(user_act, system_act, belief, database, rng=rng, mode="sample")
        decision.act.validate(schema)
        for triplet in decision.parse.triplets:
            triplet.validate(schema)


def test_sampled_decision_scores_match(policy, database):
    rng = np.random.default_rng(7)
    user_act = DialogueAct((Quadruple("hotel", "request", "name", "?"),))
    decision = policy.act(user_act, DialogueAct(), BeliefState(), database, rng=rng, mode="sample")
    score = policy.score([decision.state_text], [decision.tokens])
    assert float(score.data[0]) == pytest.approx(decision.log_prob, abs=1e-9)


def test_greedy_is_deterministic_per_checkpoint(policy, database):
    user_act = DialogueAct((Quadruple("hotel", "inform", "area", "north"),))
    a = policy.act(user_act, DialogueAct(), BeliefState(), database, mode="greedy")
    b = policy.act(user_act, DialogueAct(), BeliefState(), database, mode="greedy")
    assert a.tokens == b.tokens and a.act == b.act


def test_empty_action_scores_end_token(policy, database):
    user_act = DialogueAct()
    decision = policy.act(user_act, DialogueAct(), BeliefState(), database, mode="greedy")
    state_text = decision.state_text
    score = policy.score([state_text], [[policy.vocab.end_id]])
    state = nn.encode_texts(policy.params, policy.config, policy.vocab, [state_text])
    seq_logp, _, _ = nn.decode_logprobs(
        policy.params, policy.config, policy.vocab, state, [[policy.vocab.end_id]]
    )
    assert float(score.data[0]) == pytest.approx(float(seq_logp.data[0]), abs=1e-12)


def test_score_invariant_to_padding(policy, database):
    user_act = DialogueAct((Quadruple("hotel", "request", "phone", "?"),))
    decision = policy.act(user_act, DialogueAct(), BeliefState(), database, mode="greedy")
    tokens = policy.vocab.encode(["hotel", "inform", "phone"]) + [policy.vocab.end_id]
    padded = tokens + [policy.vocab.pad_id] * 3
    a = policy.score([decision.state_text], [tokens])
    b = policy.score([decision.state_text], [padded])
    assert float(a.data[0]) == float(b.data[0])


def test_probability_mass_sums_to_one_on_tiny_vocab(schema):
    vocab = Vocabulary(tokens=SPECIAL_TOKENS + ("x",))
    assert len(vocab) == 6
    config = ModelConfig(hidden_size=8, layers=1, heads=1, ff_size=16, max_state_len=8, max_action_len=3)
    params = nn.init_params(config, len(vocab), np.random.default_rng(4))
    text = DialogueStateText(("x",), (), ("x", "x"), ())
    state = nn.encode_texts(params, config, vocab, [text])

    end = vocab.end_id
    others = [i for i in range(len(vocab)) if i != end]
    terminated = [[end]]
    terminated += [[a, end] for a in others]
    terminated += [[a, b, end] for a in others for b in others]
    truncated = [[a, b, c] for a in others for b in others for c in others]

    def total(seqs):
        seq_logp, _, _ = nn.decode_logprobs(params, config, vocab, state.detach(), seqs)
        # broadcast the single state across the enumeration
        return float(np.exp(seq_logp.data).sum())

    # one state per sequence: tile the encoding
    texts = [text] * len(terminated + truncated)
    state_all = nn.encode_texts(params, config, vocab, texts)
    seq_logp, _, _ = nn.decode_logprobs(params, config, vocab, state_all, terminated + truncated)
    mass = np.exp(seq_logp.data)
    assert mass[: len(terminated)].sum() <= 1.0 + 1e-12
    assert mass.sum() == pytest.approx(1.0, abs=1e-9)
