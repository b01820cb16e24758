"""Command-line entry points for the batch workflows and the session service."""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from ..core import ValidationError
from ..episodes import play_episode, transcript_jsonable
from ..evaluation import evaluate
from ..neural.model import init_params, load_checkpoint, parameter_count, save_checkpoint
from ..neural.vocab import Vocabulary
from ..policy import WordPolicy
from ..simulator import RuleSystemPolicy, sample_goal
from ..train import (
    TrainingDiverged,
    exact_match_accuracy,
    generate_expert_data,
    load_corpus,
    save_corpus,
    train_ppo,
    warmup,
    write_metrics,
)
from .config import load_config, write_snapshot

EXIT_CONFIG_ERROR = 1
EXIT_DIVERGED = 2


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TrainingDiverged as exc:
            click.echo(f"error: training diverged: {exc}", err=True)
            sys.exit(EXIT_DIVERGED)
        except (ValidationError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG_ERROR)

    return wrapper


def _load(config_path: str, run_dir: str | None, overrides: dict | None = None):
    config = load_config(config_path, overrides=overrides)
    schema = config.load_schema()
    db = config.load_database(schema)
    if run_dir:
        write_snapshot(config, run_dir)
    return config, schema, db


def _seed_overrides(seed: int | None) -> dict:
    if seed is None:
        return {}
    return {"warmup": {"seed": seed}, "ppo": {"seed": seed}}


@click.group()
def cli():
    """Word-level dialogue policy workbench."""


@cli.command("gen-data")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--turns", type=int, default=None, help="override corpus size")
@click.option("--seed", type=int, default=None)
@_guarded
def gen_data(config_path, run_dir, turns, seed):
    """Generate an expert warm-up corpus from the rule policy."""
    config, schema, db = _load(config_path, run_dir, _seed_overrides(seed))
    n_turns = turns if turns is not None else config.warmup.train_turns + config.warmup.valid_turns
    samples = generate_expert_data(schema, db, config.reward, n_turns, seed=config.warmup.seed)
    path = Path(run_dir) / "corpus.jsonl"
    save_corpus(path, samples)
    click.echo(f"wrote {len(samples)} turns to {path}")


@cli.command("warmup")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@_guarded
def warmup_cmd(config_path, run_dir, corpus_path, seed):
    """Supervised warm-up on an expert corpus."""
    config, schema, db = _load(config_path, run_dir, _seed_overrides(seed))
    corpus_path = Path(corpus_path) if corpus_path else Path(run_dir) / "corpus.jsonl"
    corpus = load_corpus(corpus_path)
    vocab = Vocabulary.from_schema(schema)
    params = init_params(config.model, len(vocab), np.random.default_rng(config.warmup.seed))
    click.echo(f"parameters: {params.total_parameters()}")
    policy = WordPolicy(params, config.model, vocab, schema)
    history = warmup(policy, corpus, config.warmup)
    n_train = min(config.warmup.train_turns, len(corpus))
    valid = corpus[n_train : n_train + config.warmup.valid_turns] or corpus[:200]
    accuracy = exact_match_accuracy(policy, valid)
    ckpt = Path(run_dir) / "warmup.ckpt"
    save_checkpoint(ckpt, policy.params, config.model, vocab, meta={"kind": "word", "stage": "warmup"})
    with open(Path(run_dir) / "warmup_history.json", "w", encoding="utf-8") as fh:
        json.dump({**history, "valid_exact_match": accuracy}, fh, indent=2)
    click.echo(f"best epoch {history['best_epoch']}, held-out exact match {accuracy:.3f}")
    click.echo(f"wrote {ckpt}")


@cli.command("train-ppo")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--frames", type=int, default=None, help="override total frame budget")
@click.option("--seed", type=int, default=None)
@click.option("--shaping/--no-shaping", default=None, help="override reward shaping")
@_guarded
def train_ppo_cmd(config_path, run_dir, checkpoint_path, frames, seed, shaping):
    """RL fine-tuning of a warm-up checkpoint against the simulated user."""
    overrides = _seed_overrides(seed)
    ppo_over = overrides.setdefault("ppo", {})
    if frames is not None:
        ppo_over["total_frames"] = frames
    if shaping is not None:
        ppo_over["reward_shaping"] = shaping
    config, schema, db = _load(config_path, run_dir, overrides)
    params, model_config, vocab, meta = load_checkpoint(checkpoint_path)
    click.echo(f"parameters: {params.total_parameters()}")
    policy = WordPolicy(params, model_config, vocab, schema)
    rows = train_ppo(
        policy,
        schema,
        db,
        config.reward,
        config.ppo,
        run_dir=run_dir,
        checkpoint_meta={"kind": "word", "stage": "ppo", "warm_start": str(checkpoint_path)},
    )
    final = rows[-1]
    click.echo(
        f"frames {final['frame']}: success {final['success_rate']:.3f}, "
        f"turns {final['avg_turns']:.2f}, reward {final['avg_reward']:.2f}"
    )


@cli.command("evaluate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--episodes", type=int, default=200)
@click.option("--seed", type=int, default=0)
@_guarded
def evaluate_cmd(config_path, run_dir, checkpoint_path, episodes, seed):
    """Greedy evaluation of a checkpoint against the simulated user."""
    config, schema, db = _load(config_path, run_dir)
    params, model_config, vocab, _ = load_checkpoint(checkpoint_path)
    policy = WordPolicy(params, model_config, vocab, schema)
    report = evaluate(
        policy,
        schema,
        db,
        config.reward,
        n_episodes=episodes,
        seed=seed,
        transcript_path=Path(run_dir) / "transcripts.jsonl",
    )
    path = Path(run_dir) / "eval_report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_jsonable(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(
        f"episodes {report.n_episodes}: success {report.success_rate:.3f}, "
        f"turns {report.avg_turns:.2f}, reward {report.avg_reward:.2f}"
    )
    click.echo(f"wrote {path}")


@cli.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None,
              help="policy checkpoint; defaults to the rule-based oracle")
@click.option("--episodes", type=int, default=5)
@click.option("--seed", type=int, default=0)
@_guarded
def simulate_cmd(config_path, run_dir, checkpoint_path, episodes, seed):
    """Dump scripted episodes as transcript JSONL."""
    config, schema, db = _load(config_path, run_dir)
    rng = np.random.default_rng(seed)
    if checkpoint_path:
        params, model_config, vocab, _ = load_checkpoint(checkpoint_path)
        policy = WordPolicy(params, model_config, vocab, schema)
    else:
        policy = None
        oracle = RuleSystemPolicy(schema, db)
    path = Path(run_dir) / "simulated_episodes.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for index in range(episodes):
            goal = sample_goal(schema, db, rng)
            if policy is None:

                def decide(state_text, user_act, last_system, belief, goal=goal):
                    return oracle.act(goal, user_act, belief), None

            else:

                def decide(state_text, user_act, last_system, belief):
                    return policy.decide(state_text, belief, db, mode="greedy").act, None

            episode = play_episode(decide, schema, db, config.reward, goal)
            fh.write(json.dumps(transcript_jsonable(episode, index), sort_keys=True) + "\n")
    click.echo(f"wrote {episodes} episodes to {path}")


@cli.command("serve")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoints", multiple=True,
              help="model_id=path/to/checkpoint (repeatable)")
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@_guarded
def serve_cmd(config_path, run_dir, checkpoints, port, host):
    """Serve the interactive human-evaluation session API."""
    import uvicorn

    from .service import ModelRegistry, create_app
    from .sessions import SessionStore

    config, schema, db = _load(config_path, run_dir)
    registry_map = {}
    for item in checkpoints:
        model_id, _, path = item.partition("=")
        if not path:
            raise ValidationError(f"--checkpoint expects model_id=path, got {item!r}")
        if not Path(path).exists():
            raise ValidationError(f"checkpoint file not found: {path}")
        registry_map[model_id] = path
    if not registry_map:
        raise ValidationError("serve needs at least one --checkpoint model_id=path")
    registry = ModelRegistry(schema, registry_map)
    store = SessionStore(run_dir)
    app = create_app(schema, db, registry, store, reward=config.reward)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main():
    cli(prog_name="dialrl")


if __name__ == "__main__":
    main()
