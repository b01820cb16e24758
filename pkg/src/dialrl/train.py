"""Supervised warm-up and clipped-surrogate policy optimization.

Warm-up minimizes teacher-forced per-token NLL on expert act sequences with
early stopping on validation NLL.  RL fine-tuning alternates rollout
collection against the simulated user with clipped-surrogate updates over
probability ratios computed in log space, backed by a one-step
advantage from the learned critic, with optional reward shaping.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .actgrammar import linearize_target, parse_act_text
from .core import (
    BeliefState,
    DbResultSummary,
    DialogueAct,
    DialogueStateText,
    Schema,
    ValidationError,
    build_state_text,
)
from .db import Database, match_counts
from .episodes import Episode, play_episode
from .neural import model as nn
from .neural import tensor as t
from .neural.optim import Adam, optimizer_step
from .neural.tensor import Tape, Tensor
from .simulator import RewardConfig, RuleSystemPolicy, sample_goal


class TrainingDiverged(RuntimeError):
    """A training loss went NaN or infinite."""


@dataclass
class WarmupConfig:
    batch_size: int = 32
    lr: float = 3e-4
    epochs: int = 80
    patience: int = 5
    train_turns: int = 10_000
    valid_turns: int = 3_000
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.batch_size, self.epochs, self.patience, self.train_turns, self.valid_turns) < 1:
            raise ValidationError("warm-up sizes must be positive")
        if self.lr <= 0:
            raise ValidationError("warm-up learning rate must be positive")
        if self.patience > self.epochs:
            raise ValidationError("patience cannot exceed epochs")

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class PpoConfig:
    actor_lr: float = 5e-7
    critic_lr: float = 1e-4
    clip_epsilon: float = 0.2
    total_frames: int = 50_000
    rollout_frames: int = 512
    update_epochs: int = 4
    reward_shaping: bool = True
    entropy_coef: float = 0.0
    grad_clip: float = 1.0
    normalize_advantages: bool = True
    minibatch_size: int = 64
    critic_warmup_epochs: int = 0
    eval_episodes: int = 100
    eval_interval: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.clip_epsilon < 1:
            raise ValidationError("clip_epsilon must lie in (0, 1)")
        if self.total_frames < 1 or self.rollout_frames < 1:
            raise ValidationError("frame budgets must be positive")

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# Expert corpus


@dataclass(frozen=True)
class TurnSample:
    """One supervised example: the observed state and the expert act."""

    user_act: DialogueAct
    system_act_prev: DialogueAct
    belief: BeliefState
    db_summary: DbResultSummary
    target_act: DialogueAct

    def state_text(self, schema: Schema) -> DialogueStateText:
        return build_state_text(
            self.user_act, self.system_act_prev, self.belief, self.db_summary, schema
        )

    def to_jsonable(self) -> dict:
        return {
            "user_act": self.user_act.to_lists(),
            "system_act_prev": self.system_act_prev.to_lists(),
            "belief": self.belief.to_lists(),
            "db": self.db_summary.to_lists(),
            "target_act": self.target_act.to_lists(),
        }

    @classmethod
    def from_jsonable(cls, raw: dict) -> "TurnSample":
        return cls(
            user_act=DialogueAct.from_lists(raw["user_act"]),
            system_act_prev=DialogueAct.from_lists(raw["system_act_prev"]),
            belief=BeliefState.from_lists(raw["belief"]),
            db_summary=DbResultSummary.from_lists(raw["db"]),
            target_act=DialogueAct.from_lists(raw["target_act"]),
        )


def generate_expert_data(
    schema: Schema,
    db: Database,
    reward: RewardConfig,
    n_turns: int,
    seed: int,
    oracle: Optional[RuleSystemPolicy] = None,
) -> list[TurnSample]:
    """Roll the rule-based oracle against the simulator to collect turns."""
    oracle = oracle or RuleSystemPolicy(schema, db)
    rng = np.random.default_rng(seed)
    samples: list[TurnSample] = []
    while len(samples) < n_turns:
        goal = sample_goal(schema, db, rng)

        def decide(state_text, user_act, last_system, belief):
            return oracle.act(goal, user_act, belief), None

        episode = play_episode(decide, schema, db, reward, goal)
        for turn in episode.turns:
            samples.append(
                TurnSample(
                    user_act=turn.user_act,
                    system_act_prev=turn.prev_system_act,
                    belief=turn.belief,
                    db_summary=match_counts(db, turn.belief),
                    target_act=turn.system_act,
                )
            )
    return samples[:n_turns]


def save_corpus(path: str | Path, samples: Iterable[TurnSample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_jsonable(), sort_keys=True) + "\n")


def load_corpus(path: str | Path) -> list[TurnSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(TurnSample.from_jsonable(json.loads(line)))
    return samples


# ---------------------------------------------------------------------------
# Warm-up


def warmup(policy, corpus: Sequence[TurnSample], cfg: WarmupConfig) -> dict:
    """Supervised warm-up; leaves the best-validation parameters in the policy.

    The corpus is split into a training prefix and a disjoint validation
    suffix according to the config sizes.  Returns a history dict with
    per-epoch train/validation NLL and the best epoch index.
    """
    if not corpus:
        raise ValidationError("warm-up corpus is empty")
    n_train = min(cfg.train_turns, len(corpus))
    train = list(corpus[:n_train])
    valid = list(corpus[n_train : n_train + cfg.valid_turns])
    if not valid:
        # Tiny corpora: validate on the training data rather than nothing.
        valid = train
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(policy.warmup_params(), lr=cfg.lr)

    best_valid = float("inf")
    best_params = policy.params.copy()
    best_epoch = -1
    history = {"train_nll": [], "valid_nll": [], "best_epoch": -1, "epochs_run": 0}
    stale = 0
    order = np.arange(len(train))
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        total_nll = 0.0
        total_tokens = 0
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start : start + cfg.batch_size]]
            with Tape() as tape:
                loss, n_tokens = policy.warmup_loss(batch)
                if not np.isfinite(loss.data).all():
                    raise TrainingDiverged("warm-up NLL went non-finite")
                tape.backward(loss)
            optimizer_step(optimizer)
            total_nll += float(loss.data) * n_tokens
            total_tokens += n_tokens
        valid_nll = validation_nll(policy, valid)
        history["train_nll"].append(total_nll / max(total_tokens, 1))
        history["valid_nll"].append(valid_nll)
        history["epochs_run"] = epoch + 1
        if valid_nll < best_valid - 1e-12:
            best_valid = valid_nll
            best_params = policy.params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    history["best_epoch"] = best_epoch
    _restore_params(policy, best_params)
    return history


def validation_nll(policy, samples: Sequence[TurnSample], chunk: int = 128) -> float:
    total = 0.0
    tokens = 0
    for start in range(0, len(samples), chunk):
        batch = samples[start : start + chunk]
        loss, n_tokens = policy.warmup_loss(batch)
        total += float(loss.data) * n_tokens
        tokens += n_tokens
    return total / max(tokens, 1)


def _restore_params(policy, params: nn.ParamStore) -> None:
    for name, tensor in policy.params.items():
        tensor.data[...] = params[name].data


def exact_match_accuracy(policy, samples: Sequence[TurnSample]) -> float:
    """Greedy-decode each state and compare parsed triplets to the target."""
    hits = 0
    for sample in samples:
        tokens, _, _ = nn.sample_action(
            policy.params,
            policy.config,
            policy.vocab,
            nn.encode_texts(
                policy.params, policy.config, policy.vocab, [sample.state_text(policy.schema)]
            ),
            mode="greedy",
        )
        report = parse_act_text(policy.vocab.decode(tokens), policy.schema)
        if list(report.triplets) == sample.target_act.triplets():
            hits += 1
    return hits / max(len(samples), 1)


# ---------------------------------------------------------------------------
# Rollout collection


@dataclass
class RolloutBuffer:
    """Per-system-turn records consumed by the surrogate update."""

    state_texts: list[DialogueStateText] = field(default_factory=list)
    actions: list = field(default_factory=list)
    old_log_probs: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    next_values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    episodes: int = 0
    successes: int = 0

    @property
    def frames(self) -> int:
        return len(self.state_texts)


def collect(
    policy,
    schema: Schema,
    db: Database,
    reward: RewardConfig,
    n_frames: int,
    shaping: bool,
    rng: np.random.Generator,
    value_chunk: int = 128,
) -> RolloutBuffer:
    """Sample episodes until at least ``n_frames`` system turns are recorded.

    Rewards are shaped when ``shaping`` is on, raw environment rewards
    otherwise.  Log-probs and values are recorded under the parameters the
    actions were sampled from.
    """
    buffer = RolloutBuffer()
    episode_slices: list[tuple[int, int]] = []
    while buffer.frames < n_frames:
        goal = sample_goal(schema, db, rng)

        def decide(state_text, user_act, last_system, belief):
            decision = policy.decide(state_text, belief, db, rng=rng, mode="sample")
            return decision.act, decision

        episode = play_episode(decide, schema, db, reward, goal, shaping=shaping)
        start = buffer.frames
        for turn in episode.turns:
            decision = turn.payload
            buffer.state_texts.append(turn.state_text)
            buffer.actions.append(policy.action_of(decision))
            buffer.old_log_probs.append(decision.log_prob)
            buffer.rewards.append(turn.shaped_r if shaping else turn.env_r)
            buffer.dones.append(turn.done)
        episode_slices.append((start, buffer.frames))
        buffer.episodes += 1
        buffer.successes += int(episode.success)

    values = _state_values(policy, buffer.state_texts, value_chunk)
    buffer.values = values.tolist()
    next_values = np.zeros(buffer.frames)
    for start, end in episode_slices:
        next_values[start : end - 1] = values[start + 1 : end]
    buffer.next_values = next_values.tolist()
    return buffer


def _state_values(policy, state_texts: Sequence[DialogueStateText], chunk: int) -> np.ndarray:
    out = np.zeros(len(state_texts))
    for start in range(0, len(state_texts), chunk):
        batch = state_texts[start : start + chunk]
        state = nn.encode_texts(policy.params, policy.config, policy.vocab, batch)
        out[start : start + len(batch)] = nn.value(policy.params, policy.config, state).data
    return out


def advantages(buffer: RolloutBuffer, reward: RewardConfig) -> np.ndarray:
    """One-step advantage: r + gamma * V(s') * (1 - done) - V(s)."""
    r = np.asarray(buffer.rewards)
    v = np.asarray(buffer.values)
    nv = np.asarray(buffer.next_values)
    done = np.asarray(buffer.dones, dtype=np.float64)
    return r + reward.gamma * nv * (1.0 - done) - v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / max(std, 1e-8)


# ---------------------------------------------------------------------------
# Surrogate objective


def surrogate_loss(
    policy,
    state_texts: Sequence[DialogueStateText],
    actions: Sequence,
    old_log_probs: np.ndarray,
    advantage: np.ndarray,
    clip_epsilon: Optional[float],
    scale: float,
    entropy_coef: float = 0.0,
) -> tuple[Tensor, np.ndarray]:
    """Clipped-surrogate loss contribution of one chunk.

    The ratio is computed in log space, ``exp(new - old)``; with
    ``clip_epsilon=None`` the clipped branch is disabled and the loss
    reduces to ``-ratio * advantage``.  ``scale`` is 1/total-steps so that
    chunk losses sum to the batch mean.  Returns the loss tensor and the
    detached ratios for diagnostics.
    """
    new_logp = policy.score(state_texts, actions)
    ratio = t.exp(new_logp - t.constant(np.asarray(old_log_probs)))
    adv = t.constant(np.asarray(advantage))
    unclipped = t.mul(ratio, adv)
    if clip_epsilon is None:
        objective = unclipped
    else:
        clipped = t.mul(t.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon), adv)
        objective = t.minimum(unclipped, clipped)
    loss = t.mul(t.reduce_sum(t.neg(objective)), scale)
    if entropy_coef > 0.0:
        entropy = policy.sequence_entropy(state_texts, actions)
        loss = loss - t.mul(entropy, entropy_coef * scale * len(actions))
    return loss, ratio.data.copy()


def ppo_update(
    policy,
    critic_params: dict,
    buffer: RolloutBuffer,
    advantage: np.ndarray,
    cfg: PpoConfig,
    reward: RewardConfig,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: Optional[np.random.Generator] = None,
) -> dict:
    """Run the configured update epochs over one rollout buffer.

    Each epoch sweeps the buffer in minibatches (shuffled when ``rng`` is
    given), taking one optimizer step per minibatch for the actor and one
    for the critic.
    """
    if cfg.normalize_advantages:
        advantage = normalize_advantages(advantage)
    targets = np.asarray(buffer.rewards) + reward.gamma * np.asarray(buffer.next_values) * (
        1.0 - np.asarray(buffer.dones, dtype=np.float64)
    )
    n = buffer.frames
    order = np.arange(n)
    info = {"ratio_min": [], "ratio_max": [], "actor_loss": [], "critic_loss": []}
    for _ in range(cfg.update_epochs):
        if rng is not None:
            rng.shuffle(order)
        ratios = np.zeros(n)
        actor_loss = 0.0
        critic_loss = 0.0
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            states = [buffer.state_texts[i] for i in idx]
            with Tape() as tape:
                loss, batch_ratios = surrogate_loss(
                    policy,
                    states,
                    [buffer.actions[i] for i in idx],
                    np.asarray([buffer.old_log_probs[i] for i in idx]),
                    advantage[idx],
                    cfg.clip_epsilon,
                    scale=1.0 / len(idx),
                    entropy_coef=cfg.entropy_coef,
                )
                if not np.isfinite(loss.data).all():
                    raise TrainingDiverged("surrogate loss went non-finite")
                tape.backward(loss)
            optimizer_step(actor_opt, cfg.grad_clip)
            ratios[start : start + len(idx)] = batch_ratios
            actor_loss += float(loss.data) * len(idx) / n

            state = nn.encode_texts(policy.params, policy.config, policy.vocab, states)
            with Tape() as tape:
                v = nn.value(policy.params, policy.config, state)
                err = v - t.constant(targets[idx])
                loss = t.mul(t.reduce_sum(t.mul(err, err)), 1.0 / len(idx))
                if not np.isfinite(loss.data).all():
                    raise TrainingDiverged("critic loss went non-finite")
                tape.backward(loss)
            optimizer_step(critic_opt, cfg.grad_clip)
            critic_loss += float(loss.data) * len(idx) / n

        info["ratio_min"].append(float(ratios.min()))
        info["ratio_max"].append(float(ratios.max()))
        info["actor_loss"].append(actor_loss)
        info["critic_loss"].append(critic_loss)
    return info


def _fit_critic(
    policy,
    buffer: RolloutBuffer,
    reward: RewardConfig,
    cfg: PpoConfig,
    critic_opt: Adam,
    rng: Optional[np.random.Generator],
) -> None:
    targets = np.asarray(buffer.rewards) + reward.gamma * np.asarray(buffer.next_values) * (
        1.0 - np.asarray(buffer.dones, dtype=np.float64)
    )
    n = buffer.frames
    order = np.arange(n)
    for _ in range(cfg.critic_warmup_epochs):
        if rng is not None:
            rng.shuffle(order)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            state = nn.encode_texts(
                policy.params, policy.config, policy.vocab, [buffer.state_texts[i] for i in idx]
            )
            with Tape() as tape:
                v = nn.value(policy.params, policy.config, state)
                err = v - t.constant(targets[idx])
                loss = t.mul(t.reduce_sum(t.mul(err, err)), 1.0 / len(idx))
                tape.backward(loss)
            optimizer_step(critic_opt, cfg.grad_clip)


METRICS_COLUMNS = ("frame", "success_rate", "avg_turns", "avg_reward", "seed")


def train_ppo(
    policy,
    schema: Schema,
    db: Database,
    reward: RewardConfig,
    cfg: PpoConfig,
    run_dir: Optional[str | Path] = None,
    checkpoint_meta: Optional[dict] = None,
) -> list[dict]:
    """Alternate rollout collection and surrogate updates to the frame budget.

    Writes ``metrics.csv`` learning-curve rows (and a checkpoint per
    evaluation point) under ``run_dir`` when given.  Returns the metric rows.
    """
    from .evaluation import evaluate

    actor_params, critic_params = policy.params.split_actor_critic()
    actor_opt = Adam(actor_params, lr=cfg.actor_lr)
    critic_opt = Adam(critic_params, lr=cfg.critic_lr)
    rng = np.random.default_rng(cfg.seed)
    update_rng = np.random.default_rng(cfg.seed + 500_009)
    eval_interval = cfg.eval_interval or cfg.rollout_frames
    run_path = Path(run_dir) if run_dir is not None else None

    rows: list[dict] = []

    def record(frame: int) -> None:
        report = evaluate(
            policy, schema, db, reward, n_episodes=cfg.eval_episodes, seed=cfg.seed + 970_001
        )
        rows.append(
            {
                "frame": frame,
                "success_rate": report.success_rate,
                "avg_turns": report.avg_turns,
                "avg_reward": report.avg_reward,
                "seed": cfg.seed,
            }
        )
        if run_path is not None:
            write_metrics(run_path / "metrics.csv", rows)
            nn.save_checkpoint(
                run_path / f"checkpoint_frame{frame:07d}.ckpt",
                policy.params,
                policy.config,
                policy.vocab,
                meta={**(checkpoint_meta or {}), "frame": frame},
            )

    record(0)
    frames_done = 0
    next_eval = eval_interval
    if cfg.critic_warmup_epochs > 0:
        # Fit the value head on one rollout before any policy update so the
        # first advantages are not pure critic noise.  These frames count
        # against the interaction budget.
        buffer = collect(policy, schema, db, reward, cfg.rollout_frames, cfg.reward_shaping, rng)
        _fit_critic(policy, buffer, reward, cfg, critic_opt, update_rng)
        frames_done += buffer.frames
    while frames_done < cfg.total_frames:
        budget = min(cfg.rollout_frames, cfg.total_frames - frames_done)
        buffer = collect(policy, schema, db, reward, budget, cfg.reward_shaping, rng)
        adv = advantages(buffer, reward)
        ppo_update(
            policy, critic_params, buffer, adv, cfg, reward, actor_opt, critic_opt, rng=update_rng
        )
        frames_done += buffer.frames
        if frames_done >= next_eval or frames_done >= cfg.total_frames:
            record(frames_done)
            next_eval += eval_interval
    return rows


def write_metrics(path: str | Path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRICS_COLUMNS})
