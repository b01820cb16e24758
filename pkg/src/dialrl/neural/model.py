"""Miniature transformer stack for dialogue-state encoding and act generation.

Three sub-networks share one parameter store:

* ``state_enc`` — a transformer encoder over each of the four state texts;
  the classifier-position output of each text, plus a per-text context
  embedding, forms the 4-row state matrix.
* ``act_enc`` / ``act_dec`` — an encoder-decoder that treats the state
  matrix as a 4-token source sequence and generates act tokens
  autoregressively from the start token until the end token.
* ``critic`` — an encoder of the same shape over the (detached) state
  matrix, mean-pooled into a scalar value head.

Everything runs in float64 on the tape-based autodiff in ``tensor.py``.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ..core import CLS_TOKEN, DialogueStateText, ValidationError
from . import tensor as t
from .tensor import Tape, Tensor
from .vocab import Vocabulary

CHECKPOINT_MAGIC = b"DIALRLC1"
CHECKPOINT_VERSION = 1

STATE_FIELDS = 4  # user act, system act, belief, db result


@dataclass
class ModelConfig:
    hidden_size: int = 256
    layers: int = 1
    heads: int = 1
    ff_size: Optional[int] = None
    max_state_len: int = 32
    max_action_len: int = 24

    def __post_init__(self) -> None:
        if self.ff_size is None:
            self.ff_size = 4 * self.hidden_size
        if min(self.hidden_size, self.layers, self.heads, self.ff_size) < 1:
            raise ValidationError("all model sizes must be >= 1")
        if self.hidden_size % self.heads != 0:
            raise ValidationError("hidden_size must be divisible by heads")
        if self.max_state_len < 2 or self.max_action_len < 1:
            raise ValidationError("sequence length caps are too small")

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_jsonable(cls, raw: Mapping) -> "ModelConfig":
        return cls(**dict(raw))


class ParamStore:
    """Named float64 parameter arrays with gradient bookkeeping."""

    def __init__(self, params: Optional[dict[str, Tensor]] = None):
        self._params: dict[str, Tensor] = params or {}

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def split_actor_critic(self) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
        critic = self.subset("critic.")
        actor = {k: v for k, v in self._params.items() if not k.startswith("critic.")}
        return actor, critic

    def total_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self._params.items()}
        )

    def get_vector(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        names = list(names) if names is not None else self.names()
        return np.concatenate([self._params[n].data.reshape(-1) for n in names])

    def set_vector(self, vec: np.ndarray, names: Optional[Sequence[str]] = None) -> None:
        names = list(names) if names is not None else self.names()
        offset = 0
        for n in names:
            p = self._params[n]
            p.data[...] = vec[offset : offset + p.size].reshape(p.shape)
            offset += p.size


def _encoder_layer_shapes(d: int, f: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for wn in ("wq", "wk", "wv", "wo"):
        shapes[f"attn.{wn}"] = (d, d)
    for bn in ("bq", "bk", "bv", "bo"):
        shapes[f"attn.{bn}"] = (d,)
    shapes["ln1.g"] = (d,)
    shapes["ln1.b"] = (d,)
    shapes["ffn.w1"] = (d, f)
    shapes["ffn.b1"] = (f,)
    shapes["ffn.w2"] = (f, d)
    shapes["ffn.b2"] = (d,)
    shapes["ln2.g"] = (d,)
    shapes["ln2.b"] = (d,)
    return shapes


def _decoder_layer_shapes(d: int, f: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for block in ("self", "cross"):
        for wn in ("wq", "wk", "wv", "wo"):
            shapes[f"{block}.{wn}"] = (d, d)
        for bn in ("bq", "bk", "bv", "bo"):
            shapes[f"{block}.{bn}"] = (d,)
    for ln in ("ln1", "ln2", "ln3"):
        shapes[f"{ln}.g"] = (d,)
        shapes[f"{ln}.b"] = (d,)
    shapes["ffn.w1"] = (d, f)
    shapes["ffn.b1"] = (f,)
    shapes["ffn.w2"] = (f, d)
    shapes["ffn.b2"] = (d,)
    return shapes


def param_shapes(
    config: ModelConfig,
    vocab_size: int,
    kind: str = "word",
    n_candidates: int = 0,
) -> dict[str, tuple[int, ...]]:
    """Complete shape map for one policy's parameters.

    ``kind`` is ``word`` for the generative policy (state encoder plus act
    encoder-decoder) or ``candidate`` for the fixed-candidate baseline
    (state encoder plus a classification head).  Both carry a critic.
    """
    d, f = config.hidden_size, int(config.ff_size)
    shapes: dict[str, tuple[int, ...]] = {}

    shapes["state_enc.tok_emb"] = (vocab_size, d)
    shapes["state_enc.pos_emb"] = (config.max_state_len, d)
    shapes["state_enc.ctx_emb"] = (STATE_FIELDS, d)
    for i in range(config.layers):
        for name, shape in _encoder_layer_shapes(d, f).items():
            shapes[f"state_enc.l{i}.{name}"] = shape
    shapes["state_enc.lnf.g"] = (d,)
    shapes["state_enc.lnf.b"] = (d,)

    if kind == "word":
        for i in range(config.layers):
            for name, shape in _encoder_layer_shapes(d, f).items():
                shapes[f"act_enc.l{i}.{name}"] = shape
        shapes["act_enc.lnf.g"] = (d,)
        shapes["act_enc.lnf.b"] = (d,)
        shapes["act_dec.tok_emb"] = (vocab_size, d)
        shapes["act_dec.pos_emb"] = (config.max_action_len + 1, d)
        for i in range(config.layers):
            for name, shape in _decoder_layer_shapes(d, f).items():
                shapes[f"act_dec.l{i}.{name}"] = shape
        shapes["act_dec.lnf.g"] = (d,)
        shapes["act_dec.lnf.b"] = (d,)
        shapes["act_dec.out.w"] = (d, vocab_size)
        shapes["act_dec.out.b"] = (vocab_size,)
    elif kind == "candidate":
        if n_candidates < 1:
            raise ValidationError("candidate policy needs a non-empty candidate set")
        shapes["cand.head.w"] = (d, n_candidates)
        shapes["cand.head.b"] = (n_candidates,)
    else:
        raise ValidationError(f"unknown policy kind {kind!r}")

    for i in range(config.layers):
        for name, shape in _encoder_layer_shapes(d, f).items():
            shapes[f"critic.l{i}.{name}"] = shape
    shapes["critic.lnf.g"] = (d,)
    shapes["critic.lnf.b"] = (d,)
    shapes["critic.value.w"] = (d, 1)
    shapes["critic.value.b"] = (1,)
    return shapes


def init_params(
    config: ModelConfig,
    vocab_size: int,
    rng: np.random.Generator,
    kind: str = "word",
    n_candidates: int = 0,
) -> ParamStore:
    """Scaled-uniform initialization, drawn in sorted-name order."""
    shapes = param_shapes(config, vocab_size, kind=kind, n_candidates=n_candidates)
    params: dict[str, Tensor] = {}
    for name in sorted(shapes):
        shape = shapes[name]
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape)
        elif leaf.startswith("b"):
            data = np.zeros(shape)
        elif "emb" in name:
            s = 1.0 / np.sqrt(shape[-1])
            data = rng.uniform(-s, s, size=shape)
        else:
            s = 1.0 / np.sqrt(shape[0])
            data = rng.uniform(-s, s, size=shape)
        params[name] = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
    return ParamStore(params)


def parameter_count(config: ModelConfig, vocab_size: int, kind: str = "word", n_candidates: int = 0) -> int:
    shapes = param_shapes(config, vocab_size, kind=kind, n_candidates=n_candidates)
    return int(sum(int(np.prod(s)) for s in shapes.values()))


def _ln(p: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return t.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _attention(
    p: ParamStore,
    prefix: str,
    q_in: Tensor,
    kv_in: Tensor,
    mask: Optional[np.ndarray],
    heads: int,
) -> Tensor:
    batch, q_len, d = q_in.shape
    kv_len = kv_in.shape[1]
    dh = d // heads
    q = t.matmul(q_in, p[f"{prefix}.wq"]) + p[f"{prefix}.bq"]
    k = t.matmul(kv_in, p[f"{prefix}.wk"]) + p[f"{prefix}.bk"]
    v = t.matmul(kv_in, p[f"{prefix}.wv"]) + p[f"{prefix}.bv"]
    q = t.transpose(t.reshape(q, (batch, q_len, heads, dh)), (0, 2, 1, 3))
    k = t.transpose(t.reshape(k, (batch, kv_len, heads, dh)), (0, 2, 1, 3))
    v = t.transpose(t.reshape(v, (batch, kv_len, heads, dh)), (0, 2, 1, 3))
    scores = t.mul(t.matmul(q, t.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if mask is not None:
        scores = t.add(scores, t.constant(mask))
    weights = t.softmax(scores, axis=-1)
    mixed = t.matmul(weights, v)
    mixed = t.reshape(t.transpose(mixed, (0, 2, 1, 3)), (batch, q_len, d))
    return t.matmul(mixed, p[f"{prefix}.wo"]) + p[f"{prefix}.bo"]


def _ffn(p: ParamStore, prefix: str, x: Tensor) -> Tensor:
    h = t.gelu(t.matmul(x, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"])
    return t.matmul(h, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"]


def _encoder_layer(
    p: ParamStore, prefix: str, x: Tensor, mask: Optional[np.ndarray], heads: int
) -> Tensor:
    h = _attention(p, f"{prefix}.attn", _ln(p, f"{prefix}.ln1", x), _ln(p, f"{prefix}.ln1", x), mask, heads)
    x = t.add(x, h)
    return t.add(x, _ffn(p, f"{prefix}.ffn", _ln(p, f"{prefix}.ln2", x)))


def _encoder_stack(
    p: ParamStore,
    prefix: str,
    config: ModelConfig,
    x: Tensor,
    mask: Optional[np.ndarray],
) -> Tensor:
    for i in range(config.layers):
        x = _encoder_layer(p, f"{prefix}.l{i}", x, mask, config.heads)
    return _ln(p, f"{prefix}.lnf", x)


def encode_texts(
    p: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    texts: Sequence[DialogueStateText],
) -> Tensor:
    """Encode state texts into the (batch, 4, hidden) state matrix.

    Each of the four texts is prefixed with the classifier token and run
    through the state-text encoder; the classifier-position output plus the
    per-text context embedding forms one row of the state matrix.
    """
    if not texts:
        raise ValidationError("encode_texts needs at least one state text")
    seqs: list[list[int]] = []
    for text in texts:
        for field in text.fields():
            toks = (CLS_TOKEN,) + tuple(field)[: config.max_state_len - 1]
            seqs.append(vocab.encode(toks))
    lengths = [len(s) for s in seqs]
    width = max(lengths)
    ids = np.full((len(seqs), width), vocab.pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    mask = t.attention_mask_pad(lengths, width)

    x = t.add(t.embedding(p["state_enc.tok_emb"], ids), t.embedding(p["state_enc.pos_emb"], np.arange(width)))
    x = _encoder_stack(p, "state_enc", config, x, mask)
    cls_out = t.select(x, axis=1, index=0)
    state = t.reshape(cls_out, (len(texts), STATE_FIELDS, config.hidden_size))
    return t.add(state, p["state_enc.ctx_emb"])


def encode_action_source(p: ParamStore, config: ModelConfig, state: Tensor) -> Tensor:
    """Run the act encoder over the 4-row state matrix."""
    return _encoder_stack(p, "act_enc", config, state, None)


def _decoder_logits(
    p: ParamStore, config: ModelConfig, enc_out: Tensor, dec_ids: np.ndarray
) -> Tensor:
    batch, width = dec_ids.shape
    causal = t.attention_mask_causal(width)
    x = t.add(
        t.embedding(p["act_dec.tok_emb"], dec_ids),
        t.embedding(p["act_dec.pos_emb"], np.arange(width)),
    )
    for i in range(config.layers):
        prefix = f"act_dec.l{i}"
        x = t.add(x, _attention(p, f"{prefix}.self", _ln(p, f"{prefix}.ln1", x), _ln(p, f"{prefix}.ln1", x), causal, config.heads))
        x = t.add(x, _attention(p, f"{prefix}.cross", _ln(p, f"{prefix}.ln2", x), enc_out, None, config.heads))
        x = t.add(x, _ffn(p, f"{prefix}.ffn", _ln(p, f"{prefix}.ln3", x)))
    x = _ln(p, "act_dec.lnf", x)
    return t.matmul(x, p["act_dec.out.w"]) + p["act_dec.out.b"]


def decode_logprobs(
    p: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    state: Tensor,
    targets: Sequence[Sequence[int]],
) -> tuple[Tensor, Tensor, np.ndarray]:
    """Teacher-forced log-probabilities of target token sequences.

    Returns (per-sequence log-prob sums, per-token log-probs, validity
    mask).  Targets normally end with the end token; truncated rollouts may
    omit it, in which case the sum covers exactly the tokens given.
    """
    if not targets:
        raise ValidationError("decode_logprobs needs at least one target")
    for seq in targets:
        if len(seq) > config.max_action_len:
            raise ValidationError(
                f"target of length {len(seq)} exceeds max_action_len={config.max_action_len}"
            )
        if len(seq) == 0:
            raise ValidationError("targets must contain at least one token")
    enc_out = encode_action_source(p, config, state)
    width = max(len(s) for s in targets)
    batch = len(targets)
    dec_ids = np.full((batch, width), vocab.pad_id, dtype=np.int64)
    tgt_ids = np.zeros((batch, width), dtype=np.int64)
    mask = np.zeros((batch, width))
    for i, seq in enumerate(targets):
        dec_ids[i, 0] = vocab.start_id
        dec_ids[i, 1 : len(seq)] = seq[:-1]
        tgt_ids[i, : len(seq)] = seq
        mask[i, : len(seq)] = 1.0
    logits = _decoder_logits(p, config, enc_out, dec_ids)
    logprobs = t.log_softmax(logits, axis=-1)
    per_token = t.mul(t.gather_last(logprobs, tgt_ids), t.constant(mask))
    return t.reduce_sum(per_token, axis=1), per_token, mask


def step_entropy(
    p: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    state: Tensor,
    targets: Sequence[Sequence[int]],
) -> Tensor:
    """Mean next-token distribution entropy along teacher-forced positions."""
    enc_out = encode_action_source(p, config, state)
    width = max(len(s) for s in targets)
    batch = len(targets)
    dec_ids = np.full((batch, width), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((batch, width))
    for i, seq in enumerate(targets):
        dec_ids[i, 0] = vocab.start_id
        dec_ids[i, 1 : len(seq)] = seq[:-1]
        mask[i, : len(seq)] = 1.0
    logits = _decoder_logits(p, config, enc_out, dec_ids)
    logprobs = t.log_softmax(logits, axis=-1)
    ent = t.neg(t.reduce_sum(t.mul(t.exp(logprobs), logprobs), axis=-1))
    masked = t.mul(ent, t.constant(mask))
    return t.mul(t.reduce_sum(masked), 1.0 / max(mask.sum(), 1.0))


def _np_ln(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return g * (xc / np.sqrt(var + eps)) + b


def _np_gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_NP * (x + 0.044715 * x**3)))


_GELU_NP = np.sqrt(2.0 / np.pi)


class _IncrementalDecoder:
    """Inference-only decoder with per-layer key/value caches.

    Mirrors ``_decoder_logits`` exactly but works on raw arrays, one token
    position at a time, which keeps rollout sampling cheap.  Agreement with
    the differentiable path is pinned by the rescoring consistency tests.
    """

    def __init__(self, p: ParamStore, config: ModelConfig, enc_out: np.ndarray):
        self.p = {name: tensor.data for name, tensor in p.items()}
        self.config = config
        self.heads = config.heads
        self.dh = config.hidden_size // config.heads
        self.scale = 1.0 / np.sqrt(self.dh)
        self.self_k: list[list[np.ndarray]] = [[] for _ in range(config.layers)]
        self.self_v: list[list[np.ndarray]] = [[] for _ in range(config.layers)]
        self.cross_k = []
        self.cross_v = []
        for i in range(config.layers):
            prefix = f"act_dec.l{i}.cross"
            k = enc_out @ self.p[f"{prefix}.wk"] + self.p[f"{prefix}.bk"]
            v = enc_out @ self.p[f"{prefix}.wv"] + self.p[f"{prefix}.bv"]
            self.cross_k.append(self._split(k))
            self.cross_v.append(self._split(v))

    def _split(self, x: np.ndarray) -> np.ndarray:
        # (L, d) -> (heads, L, dh)
        return x.reshape(x.shape[0], self.heads, self.dh).transpose(1, 0, 2)

    def _attend(self, q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
        # q: (heads, dh); k, v: (heads, L, dh)
        scores = (k @ q[:, :, None])[:, :, 0] * self.scale
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        return (w[:, None, :] @ v)[:, 0, :].reshape(-1)

    def step(self, token: int, position: int) -> np.ndarray:
        p, h, dh = self.p, self.heads, self.dh
        x = p["act_dec.tok_emb"][token] + p["act_dec.pos_emb"][position]
        for i in range(self.config.layers):
            lp = f"act_dec.l{i}"
            hx = _np_ln(x, p[f"{lp}.ln1.g"], p[f"{lp}.ln1.b"])
            q = (hx @ p[f"{lp}.self.wq"] + p[f"{lp}.self.bq"]).reshape(h, dh)
            self.self_k[i].append((hx @ p[f"{lp}.self.wk"] + p[f"{lp}.self.bk"]).reshape(h, dh))
            self.self_v[i].append((hx @ p[f"{lp}.self.wv"] + p[f"{lp}.self.bv"]).reshape(h, dh))
            k = np.stack(self.self_k[i], axis=1)
            v = np.stack(self.self_v[i], axis=1)
            mixed = self._attend(q, k, v)
            x = x + mixed @ p[f"{lp}.self.wo"] + p[f"{lp}.self.bo"]
            hx = _np_ln(x, p[f"{lp}.ln2.g"], p[f"{lp}.ln2.b"])
            q = (hx @ p[f"{lp}.cross.wq"] + p[f"{lp}.cross.bq"]).reshape(h, dh)
            mixed = self._attend(q, self.cross_k[i], self.cross_v[i])
            x = x + mixed @ p[f"{lp}.cross.wo"] + p[f"{lp}.cross.bo"]
            hx = _np_ln(x, p[f"{lp}.ln3.g"], p[f"{lp}.ln3.b"])
            hx = _np_gelu(hx @ p[f"{lp}.ffn.w1"] + p[f"{lp}.ffn.b1"])
            x = x + hx @ p[f"{lp}.ffn.w2"] + p[f"{lp}.ffn.b2"]
        x = _np_ln(x, p["act_dec.lnf.g"], p["act_dec.lnf.b"])
        return x @ p["act_dec.out.w"] + p["act_dec.out.b"]


def sample_action(
    p: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    state: Tensor,
    rng: Optional[np.random.Generator] = None,
    mode: str = "greedy",
) -> tuple[list[int], float, bool]:
    """Autoregressive generation from the start token.

    Returns (tokens, log-prob, truncated).  The token list includes the end
    token when one was emitted; ``truncated`` marks sequences cut at the
    decode-length cap.  The log-prob equals re-scoring the returned tokens.
    """
    if mode not in ("greedy", "sample"):
        raise ValidationError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValidationError("sampling needs an rng")
    enc_out = encode_action_source(p, config, state)
    decoder = _IncrementalDecoder(p, config, enc_out.data[0])
    token = vocab.start_id
    tokens: list[int] = []
    logp = 0.0
    for position in range(config.max_action_len):
        logits = decoder.step(token, position)
        shifted = logits - logits.max()
        token_logp = shifted - np.log(np.exp(shifted).sum())
        if mode == "greedy":
            token = int(np.argmax(token_logp))
        else:
            probs = np.exp(token_logp)
            token = int(rng.choice(len(probs), p=probs / probs.sum()))
        logp += float(token_logp[token])
        tokens.append(token)
        if token == vocab.end_id:
            return tokens, logp, False
    return tokens, logp, True


def value(p: ParamStore, config: ModelConfig, state: Tensor) -> Tensor:
    """Scalar state value from the critic trunk over the detached state matrix."""
    x = state.detach()
    x = _encoder_stack(p, "critic", config, x, None)
    pooled = t.reduce_mean(x, axis=1)
    v = t.matmul(pooled, p["critic.value.w"]) + p["critic.value.b"]
    return t.reshape(v, (state.shape[0],))


def save_checkpoint(
    path: str | Path,
    params: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    meta: Optional[dict] = None,
) -> None:
    """Write a named-array container: magic, JSON manifest, raw <f8 bytes."""
    arrays = []
    offset = 0
    names = params.names()
    for name in names:
        arr = params[name].data
        nbytes = arr.size * 8
        arrays.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "<f8",
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_jsonable(),
        "vocab": list(vocab.tokens),
        "meta": meta or {},
        "arrays": arrays,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamStore, ModelConfig, Vocabulary, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file (bad magic)")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version")
        payload = fh.read()
    params: dict[str, Tensor] = {}
    for spec in manifest["arrays"]:
        raw = payload[spec["offset"] : spec["offset"] + spec["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f8").reshape(spec["shape"]).copy()
        params[spec["name"]] = Tensor(arr, requires_grad=True)
    config = ModelConfig.from_jsonable(manifest["config"])
    vocab = Vocabulary(tokens=tuple(manifest["vocab"]))
    return ParamStore(params), config, vocab, manifest.get("meta", {})
