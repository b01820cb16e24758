import numpy as np
import pytest

from dialrl.core import DialogueAct, Quadruple
from dialrl.neural import model as nn
from dialrl.neural import tensor as t
from dialrl.neural.model import ModelConfig
from dialrl.neural.optim import Adam
from dialrl.neural.tensor import Tape
from dialrl.neural.vocab import Vocabulary
from dialrl.policy import WordPolicy
from dialrl.simulator import RewardConfig
from dialrl.train import (
    PpoConfig,
    RolloutBuffer,
    TurnSample,
    WarmupConfig,
    advantages,
    collect,
    exact_match_accuracy,
    generate_expert_data,
    load_corpus,
    normalize_advantages,
    ppo_update,
    save_corpus,
    surrogate_loss,
    train_ppo,
    validation_nll,
    warmup,
)


@pytest.fixture()
def small_policy(vocab, schema):
    config = ModelConfig(
        hidden_size=24, layers=1, heads=1, ff_size=48, max_state_len=24, max_action_len=14
    )
    params = nn.init_params(config, len(vocab), np.random.default_rng(1))
    return WordPolicy(params, config, vocab, schema)


# ---------------------------------------------------------------------------
# Expert corpus


def test_generate_expert_data_counts_and_roundtrip(schema, database, reward_config):
    samples = generate_expert_data(schema, database, reward_config, 40, seed=0)
    assert len(samples) == 40
    from dialrl.actgrammar import linearize_target, parse_act_text

    for sample in samples:
        tokens = linearize_target(sample.target_act, schema)
        report = parse_act_text(tokens, schema)
        assert list(report.triplets) == sample.target_act.triplets()


def test_generate_expert_data_zero_turns(schema, database, reward_config):
    assert generate_expert_data(schema, database, reward_config, 0, seed=0) == []


def test_generate_expert_data_pinned_first_record(schema, database, reward_config):
    samples = generate_expert_data(schema, database, reward_config, 1, seed=0)
    record = samples[0].to_jsonable()
    assert record == {
        "user_act": [
            ["hotel", "inform", "area", "south"],
            ["hotel", "request", "name", "?"],
            ["hotel", "request", "phone", "?"],
        ],
        "system_act_prev": [],
        "belief": [["hotel", "area", "south"]],
        "db": [["hotel", 1]],
        "target_act": [
            ["hotel", "inform", "name", "old_mill_hotel"],
            ["hotel", "inform", "phone", "phone_5506"],
        ],
    }


def test_corpus_jsonl_roundtrip(tmp_path, schema, database, reward_config):
    samples = generate_expert_data(schema, database, reward_config, 12, seed=3)
    path = tmp_path / "corpus.jsonl"
    save_corpus(path, samples)
    assert load_corpus(path) == samples


def test_generate_expert_data_deterministic(schema, database, reward_config):
    a = generate_expert_data(schema, database, reward_config, 25, seed=9)
    b = generate_expert_data(schema, database, reward_config, 25, seed=9)
    assert a == b


# ---------------------------------------------------------------------------
# Warm-up


def test_warmup_memorizes_single_example(schema, database, reward_config, vocab):
    config = ModelConfig(
        hidden_size=16, layers=1, heads=1, ff_size=32, max_state_len=24, max_action_len=14
    )
    params = nn.init_params(config, len(vocab), np.random.default_rng(0))
    policy = WordPolicy(params, config, vocab, schema)
    corpus = generate_expert_data(schema, database, reward_config, 1, seed=0)
    cfg = WarmupConfig(batch_size=1, lr=3e-3, epochs=200, patience=200, train_turns=1, valid_turns=1)
    history = warmup(policy, corpus, cfg)
    assert history["train_nll"][-1] < 0.05
    assert exact_match_accuracy(policy, corpus) == 1.0


def test_warmup_returns_best_validation_checkpoint(small_policy, schema, database, reward_config):
    corpus = generate_expert_data(schema, database, reward_config, 80, seed=1)
    cfg = WarmupConfig(batch_size=16, lr=1e-3, epochs=6, patience=2, train_turns=60, valid_turns=20)
    history = warmup(small_policy, corpus, cfg)
    valid = corpus[60:80]
    restored = validation_nll(small_policy, valid)
    assert restored == pytest.approx(min(history["valid_nll"]), abs=1e-9)
    assert history["best_epoch"] == int(np.argmin(history["valid_nll"]))


# ---------------------------------------------------------------------------
# Collection and advantages


def test_collect_frames_and_reward_range(small_policy, schema, database, reward_config):
    rng = np.random.default_rng(0)
    buffer = collect(small_policy, schema, database, reward_config, 12, shaping=False, rng=rng)
    assert buffer.frames >= 12
    allowed = {-1.0, 79.0, -41.0}
    assert set(buffer.rewards) <= allowed
    assert buffer.dones[-1] is True or buffer.dones[-1] == True  # noqa: E712


def test_collect_single_frame_starts_one_episode(small_policy, schema, database, reward_config):
    rng = np.random.default_rng(1)
    buffer = collect(small_policy, schema, database, reward_config, 1, shaping=False, rng=rng)
    assert buffer.episodes == 1
    assert buffer.frames >= 1


def test_collect_is_deterministic(small_policy, schema, database, reward_config):
    a = collect(small_policy, schema, database, reward_config, 10, True, np.random.default_rng(5))
    b = collect(small_policy, schema, database, reward_config, 10, True, np.random.default_rng(5))
    assert a.actions == b.actions
    assert a.rewards == b.rewards
    assert a.old_log_probs == b.old_log_probs
    assert a.values == b.values


def test_collect_next_values_shift_within_episode(small_policy, schema, database, reward_config):
    rng = np.random.default_rng(2)
    buffer = collect(small_policy, schema, database, reward_config, 8, shaping=False, rng=rng)
    start = 0
    for i, done in enumerate(buffer.dones):
        if not done:
            assert buffer.next_values[i] == buffer.values[i + 1]
        else:
            assert buffer.next_values[i] == 0.0


def test_advantage_formula(reward_config):
    buffer = RolloutBuffer()
    buffer.state_texts = [None, None, None]
    buffer.rewards = [-1.0, -1.0, 79.0]
    buffer.values = [5.0, 2.0, 1.0]
    buffer.next_values = [10.0, 1.0, 0.0]
    buffer.dones = [False, False, True]
    adv = advantages(buffer, reward_config)
    assert adv[0] == pytest.approx(-1.0 + 0.99 * 10.0 - 5.0)  # 3.9
    assert adv[1] == pytest.approx(-1.0 + 0.99 * 1.0 - 2.0)
    assert adv[2] == pytest.approx(79.0 - 1.0)  # terminal: r - V(s)
    zeroed = advantages(
        RolloutBuffer(
            state_texts=[None],
            rewards=[2.5],
            values=[0.0],
            next_values=[0.0],
            dones=[True],
        ),
        reward_config,
    )
    assert zeroed[0] == 2.5


def test_normalize_advantages_guard():
    adv = np.array([3.0, 3.0, 3.0])
    out = normalize_advantages(adv)
    assert np.allclose(out, 0.0)
    spread = normalize_advantages(np.array([1.0, 2.0, 3.0]))
    assert spread.mean() == pytest.approx(0.0, abs=1e-12)
    assert spread.std() == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Surrogate identities


def fixed_buffer(policy, schema, database, reward_config, frames=6, seed=3):
    rng = np.random.default_rng(seed)
    return collect(policy, schema, database, reward_config, frames, shaping=True, rng=rng)


def actor_grad_vector(policy, loss_builder):
    actor, _ = policy.params.split_actor_critic()
    for p in actor.values():
        p.grad = None
    with Tape() as tape:
        loss = loss_builder()
        tape.backward(loss)
    return np.concatenate(
        [
            (actor[name].grad if actor[name].grad is not None else np.zeros_like(actor[name].data)).reshape(-1)
            for name in sorted(actor)
        ]
    )


def test_ratios_are_one_at_policy_snapshot(small_policy, schema, database, reward_config):
    buffer = fixed_buffer(small_policy, schema, database, reward_config)
    adv = advantages(buffer, reward_config)
    with Tape() as tape:
        loss, ratios = surrogate_loss(
            small_policy,
            buffer.state_texts,
            buffer.actions,
            np.asarray(buffer.old_log_probs),
            adv,
            clip_epsilon=0.2,
            scale=1.0 / buffer.frames,
        )
        tape.backward(loss)
    assert np.abs(ratios - 1.0).max() < 1e-6


def test_log_space_ratio_equals_token_product(small_policy, schema, database, reward_config):
    buffer = fixed_buffer(small_policy, schema, database, reward_config)
    state = nn.encode_texts(
        small_policy.params, small_policy.config, small_policy.vocab, buffer.state_texts
    )
    seq_logp, per_token, mask = nn.decode_logprobs(
        small_policy.params,
        small_policy.config,
        small_policy.vocab,
        state,
        [small_policy._strip(a) for a in buffer.actions],
    )
    old = np.asarray(buffer.old_log_probs)
    log_space = np.exp(seq_logp.data - old)
    # token-product form: prod_i p_new(w_i) / prod_i p_old(w_i)
    per_token_probs = np.exp(per_token.data)
    per_token_probs[mask == 0] = 1.0
    product = per_token_probs.prod(axis=1) / np.exp(old)
    assert np.abs(log_space - product).max() < 1e-9


def test_surrogate_gradient_matches_reinforce_at_snapshot(
    small_policy, schema, database, reward_config
):
    buffer = fixed_buffer(small_policy, schema, database, reward_config)
    adv = normalize_advantages(advantages(buffer, reward_config))
    old = np.asarray(buffer.old_log_probs)

    surrogate = actor_grad_vector(
        small_policy,
        lambda: surrogate_loss(
            small_policy, buffer.state_texts, buffer.actions, old, adv, 0.2, scale=1.0
        )[0],
    )

    def reinforce():
        logp = small_policy.score(buffer.state_texts, buffer.actions)
        return t.neg(t.reduce_sum(t.mul(logp, t.constant(adv))))

    reference = actor_grad_vector(small_policy, reinforce)
    denom = np.abs(surrogate) + np.abs(reference) + 1e-8
    assert (np.abs(surrogate - reference) / denom).max() < 1e-6


def test_reinforce_estimator_on_fixed_two_turn_episode(
    small_policy, schema, database, reward_config
):
    # Collect until an episode with at least 2 turns, then keep exactly 2.
    rng = np.random.default_rng(11)
    buffer = collect(small_policy, schema, database, reward_config, 2, shaping=False, rng=rng)
    states = buffer.state_texts[:2]
    actions = buffer.actions[:2]
    old = np.asarray(buffer.old_log_probs[:2])
    returns = np.asarray(buffer.rewards[:2])  # raw rewards substituted for advantages

    surrogate = actor_grad_vector(
        small_policy,
        lambda: surrogate_loss(
            small_policy, states, actions, old, returns, clip_epsilon=None, scale=1.0
        )[0],
    )

    def reinforce():
        logp = small_policy.score(states, actions)
        return t.neg(t.reduce_sum(t.mul(logp, t.constant(returns))))

    reference = actor_grad_vector(small_policy, reinforce)
    denom = np.abs(surrogate) + np.abs(reference) + 1e-8
    assert (np.abs(surrogate - reference) / denom).max() < 1e-6


def test_clip_disabled_equals_unclipped_objective(small_policy, schema, database, reward_config):
    buffer = fixed_buffer(small_policy, schema, database, reward_config)
    adv = advantages(buffer, reward_config)
    old = np.asarray(buffer.old_log_probs)
    loss_none, _ = surrogate_loss(
        small_policy, buffer.state_texts, buffer.actions, old, adv, None, scale=1.0
    )
    logp = small_policy.score(buffer.state_texts, buffer.actions)
    ratio = np.exp(logp.data - old)
    assert float(loss_none.data) == pytest.approx(float(-(ratio * adv).sum()), abs=1e-9)


def test_zero_advantage_gives_zero_actor_gradient(small_policy, schema, database, reward_config):
    buffer = fixed_buffer(small_policy, schema, database, reward_config)
    zeros = np.zeros(buffer.frames)
    grad = actor_grad_vector(
        small_policy,
        lambda: surrogate_loss(
            small_policy,
            buffer.state_texts,
            buffer.actions,
            np.asarray(buffer.old_log_probs),
            zeros,
            0.2,
            scale=1.0,
        )[0],
    )
    assert np.abs(grad).max() == 0.0


# ---------------------------------------------------------------------------
# Full update loop


def test_ppo_update_runs_and_reports(small_policy, schema, database, reward_config):
    buffer = fixed_buffer(small_policy, schema, database, reward_config, frames=8)
    adv = advantages(buffer, reward_config)
    cfg = PpoConfig(actor_lr=1e-4, critic_lr=1e-3, total_frames=8, rollout_frames=8, update_epochs=2)
    actor, critic = small_policy.params.split_actor_critic()
    info = ppo_update(
        small_policy,
        critic,
        buffer,
        adv,
        cfg,
        reward_config,
        Adam(actor, lr=cfg.actor_lr),
        Adam(critic, lr=cfg.critic_lr),
    )
    assert len(info["actor_loss"]) == 2
    # first epoch starts at the snapshot
    assert abs(info["ratio_min"][0] - 1.0) < 1e-6
    assert abs(info["ratio_max"][0] - 1.0) < 1e-6


def test_train_ppo_smoke_and_metrics(tmp_path, small_policy, schema, database, reward_config):
    cfg = PpoConfig(
        actor_lr=1e-4,
        critic_lr=1e-3,
        total_frames=6,
        rollout_frames=6,
        update_epochs=1,
        eval_episodes=2,
        seed=0,
        minibatch_size=4,
    )
    rows = train_ppo(small_policy, schema, database, reward_config, cfg, run_dir=tmp_path)
    assert [row["frame"] for row in rows][0] == 0
    assert rows[-1]["frame"] >= 6
    metrics = (tmp_path / "metrics.csv").read_text().strip().splitlines()
    assert metrics[0] == "frame,success_rate,avg_turns,avg_reward,seed"
    assert len(metrics) == len(rows) + 1
    checkpoints = sorted(tmp_path.glob("checkpoint_frame*.ckpt"))
    assert checkpoints
    params, config, vocab2, meta = nn.load_checkpoint(checkpoints[-1])
    reloaded = WordPolicy(params, config, vocab2, schema)
    from dialrl.evaluation import evaluate

    a = evaluate(reloaded, schema, database, reward_config, n_episodes=2, seed=33)
    b = evaluate(small_policy, schema, database, reward_config, n_episodes=2, seed=33)
    assert a.to_jsonable() == b.to_jsonable()


def test_frames_accounting(small_policy, schema, database, reward_config):
    rng = np.random.default_rng(8)
    total = 0
    for _ in range(2):
        buffer = collect(small_policy, schema, database, reward_config, 5, False, rng)
        total += buffer.frames
        assert buffer.frames == len(buffer.actions) == len(buffer.rewards)
    assert total >= 10
