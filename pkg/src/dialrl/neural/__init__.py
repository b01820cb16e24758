"""Differentiable sequence-model kernel: tensors, vocabulary, transformer, optimizer."""

from .model import (
    ModelConfig,
    ParamStore,
    decode_logprobs,
    encode_texts,
    init_params,
    load_checkpoint,
    parameter_count,
    sample_action,
    save_checkpoint,
    value,
)
from .optim import Adam, NonFiniteGradientError, clip_grad_norm, optimizer_step
from .tensor import Tape, Tensor
from .vocab import Vocabulary

__all__ = [
    "Adam",
    "ModelConfig",
    "NonFiniteGradientError",
    "ParamStore",
    "Tape",
    "Tensor",
    "Vocabulary",
    "clip_grad_norm",
    "decode_logprobs",
    "encode_texts",
    "init_params",
    "load_checkpoint",
    "optimizer_step",
    "parameter_count",
    "sample_action",
    "save_checkpoint",
    "value",
]
