"""Multi-modal autoregressive transformer over mobility token sequences.

The model consumes m aligned token streams (context, space type, building,
indoor location — or just the indoor stream for the single-modality
variant), sums one learned embedding per stream with a learned position
embedding, runs a causal self-attention stack, and scores every position
against the shared vocabulary through one d x V output layer. Training
minimizes the sum over modalities of batchwise-mean next-step cross
entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mobmod.autodiff import (
    Tensor,
    add,
    cross_entropy_mean,
    embedding,
    gelu,
    layer_norm,
    matmul,
    softmax_rows,
)
from mobmod.vocab import MODALITIES, Vocabulary

# modality index of the indoor-location stream (the m=1 variant keeps only this)
LOCATION = 3


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_modalities: int = 4
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    n_max: int = 96

    def __post_init__(self):
        if self.n_modalities not in (1, 4):
            raise ValueError("n_modalities must be 1 or 4")
        if self.d_model % self.n_heads != 0:
            raise ValueError("n_heads must divide d_model")
        if min(self.vocab_size, self.n_layers, self.n_heads, self.d_model,
               self.d_ff, self.n_max) < 1:
            raise ValueError("all dimensions must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def modality_indices(self) -> tuple[int, ...]:
        return tuple(range(4)) if self.n_modalities == 4 else (LOCATION,)

    def to_json(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_modalities": self.n_modalities,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "n_max": self.n_max,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def simple_transformer_config(config: ModelConfig) -> ModelConfig:
    """Single-modality variant: one embedding table over the indoor stream."""
    return replace(config, n_modalities=1)


def expected_param_count(config: ModelConfig) -> int:
    """Closed-form learnable-scalar count; construction asserts against it."""
    c = config
    emb = c.n_modalities * c.vocab_size * c.d_model + c.n_max * c.d_model
    per_layer = (
        4 * c.d_model * c.d_model            # W^Q, W^K, W^V, W^o
        + c.d_model * c.d_ff + c.d_ff        # FFN in + bias
        + c.d_ff * c.d_model + c.d_model     # FFN out + bias
        + 4 * c.d_model                      # two LayerNorm (gain, bias) pairs
    )
    head = c.d_model * c.vocab_size + c.vocab_size
    return emb + c.n_layers * per_layer + head


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """GPT-2-style init: N(0, 0.02^2) weights, unit LayerNorm gain, zero biases."""
    rng = np.random.default_rng(seed)
    scale = 0.02
    p: dict[str, np.ndarray] = {}
    for m in config.modality_indices:
        p[f"embed.{MODALITIES[m]}"] = rng.normal(0, scale, (config.vocab_size, config.d_model))
    p["pos"] = rng.normal(0, scale, (config.n_max, config.d_model))
    for j in range(config.n_layers):
        for w in ("wq", "wk", "wv", "wo"):
            p[f"layer{j}.attn.{w}"] = rng.normal(0, scale, (config.d_model, config.d_model))
        p[f"layer{j}.ln1.gain"] = np.ones(config.d_model)
        p[f"layer{j}.ln1.bias"] = np.zeros(config.d_model)
        p[f"layer{j}.ffn.w1"] = rng.normal(0, scale, (config.d_model, config.d_ff))
        p[f"layer{j}.ffn.b1"] = np.zeros(config.d_ff)
        p[f"layer{j}.ffn.w2"] = rng.normal(0, scale, (config.d_ff, config.d_model))
        p[f"layer{j}.ffn.b2"] = np.zeros(config.d_model)
        p[f"layer{j}.ln2.gain"] = np.ones(config.d_model)
        p[f"layer{j}.ln2.bias"] = np.zeros(config.d_model)
    p["out.w"] = rng.normal(0, scale, (config.d_model, config.vocab_size))
    p["out.b"] = np.zeros(config.vocab_size)
    total = sum(a.size for a in p.values())
    assert total == expected_param_count(config), "parameter count drifted from the documented formula"
    return p


def wrap_params(params: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------


def tokenize(traj, vocab: Vocabulary) -> list[np.ndarray]:
    """Map a trajectory's raw per-modality ids into shared-vocabulary ids.

    Returns four aligned int sequences (T_c, T_s, T_b, T_l). Raises on any
    raw id outside its modality's catalog.
    """
    streams = (traj.tokens_c, traj.tokens_s, traj.tokens_b, traj.tokens_l)
    out: list[np.ndarray] = []
    for m, raw in enumerate(streams):
        raw = np.asarray(raw, dtype=np.int64)
        start, end = vocab.range_of(m)
        shared = raw + start
        if raw.size and (raw.min() < 0 or shared.max() >= end):
            bad = int(raw[(raw < 0) | (shared >= end)][0])
            raise ValueError(
                f"unknown token: raw id {bad} not in the {MODALITIES[m]} catalog"
            )
        out.append(shared)
    return out


def detokenize(tokens: list[np.ndarray], vocab: Vocabulary) -> tuple[np.ndarray, ...]:
    """Inverse of tokenize: shared ids back to raw per-modality ids."""
    out = []
    for m, seq in enumerate(tokens):
        seq = np.asarray(seq, dtype=np.int64)
        start, end = vocab.range_of(m)
        if seq.size and (seq.min() < start or seq.max() >= end):
            raise ValueError(f"shared id outside the {MODALITIES[m]} range")
        out.append(seq - start)
    return tuple(out)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def embed_joint(tokens: list[np.ndarray], params: dict[str, Tensor],
                config: ModelConfig) -> Tensor:
    """Joint embedding: sum of per-modality event embeddings plus positions."""
    n = np.asarray(tokens[0]).shape[-1]
    if n > config.n_max:
        raise ValueError(f"sequence length {n} exceeds n_max={config.n_max}")
    streams = config.modality_indices
    if len(tokens) != len(streams):
        raise ValueError(f"expected {len(streams)} token streams, got {len(tokens)}")
    je = None
    for ids, m in zip(tokens, streams):
        term = embedding(params[f"embed.{MODALITIES[m]}"], np.asarray(ids))
        je = term if je is None else add(je, term)
    return add(je, params["pos"][:n])


def _linear(x: Tensor, w: Tensor) -> Tensor:
    """x [..., n, d_in] @ w [d_in, d_out] through one 2-D BLAS call."""
    shape = x.shape
    flat = x.reshape((-1, shape[-1]))
    out = matmul(flat, w)
    return out.reshape(shape[:-1] + (w.shape[-1],))


def multi_head_attention(x: Tensor, params: dict[str, Tensor], layer: int,
                         config: ModelConfig, weights_out: list | None = None) -> Tensor:
    """Causal multi-head self-attention.

    x is [B, n, d] (or [n, d]); per head, Attention(Q,K,V) =
    softmax(Q K^T / sqrt(d_head) + causal_mask) V, heads concatenated and
    projected by W^o. Pass `weights_out` to capture the attention matrices.
    """
    squeeze = x.data.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    b, n, d = x.shape
    h, dh = config.n_heads, config.d_head

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape((b, n, h, dh)).transpose((0, 2, 1, 3))

    q = split_heads(_linear(x, params[f"layer{layer}.attn.wq"]))
    k = split_heads(_linear(x, params[f"layer{layer}.attn.wk"]))
    v = split_heads(_linear(x, params[f"layer{layer}.attn.wv"]))
    scores = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = softmax_rows(scores, causal=True)
    if weights_out is not None:
        weights_out.append(attn.data)
    ctx = matmul(attn, v)                                   # [B, h, n, dh]
    merged = ctx.transpose((0, 2, 1, 3)).reshape((b, n, d))
    out = _linear(merged, params[f"layer{layer}.attn.wo"])
    return out.reshape((n, d)) if squeeze else out


def encoder_layer(x: Tensor, params: dict[str, Tensor], layer: int,
                  config: ModelConfig, weights_out: list | None = None) -> Tensor:
    """One block: attention and FFN sublayers, residual-then-LayerNorm."""
    h1 = multi_head_attention(x, params, layer, config, weights_out)
    h2 = layer_norm(add(x, h1), params[f"layer{layer}.ln1.gain"],
                    params[f"layer{layer}.ln1.bias"])
    ff = _linear(gelu(add(_linear(h2, params[f"layer{layer}.ffn.w1"]),
                          params[f"layer{layer}.ffn.b1"])),
                 params[f"layer{layer}.ffn.w2"])
    h3 = add(ff, params[f"layer{layer}.ffn.b2"])
    return layer_norm(add(h2, h3), params[f"layer{layer}.ln2.gain"],
                      params[f"layer{layer}.ln2.bias"])


def forward_logits(tokens: list[np.ndarray], params: dict[str, Tensor],
                   config: ModelConfig, weights_out: list | None = None) -> Tensor:
    """Token streams -> logits over the shared vocabulary, per position.

    tokens: list of [n] or [B, n] integer arrays, one per modality stream.
    Returns [n, V] or [B, n, V] accordingly.
    """
    x = embed_joint(tokens, params, config)
    for j in range(config.n_layers):
        x = encoder_layer(x, params, j, config, weights_out)
    return add(_linear(x, params["out.w"]), params["out.b"])


def loss_multimodal(logits: Tensor, targets: list[np.ndarray],
                    config: ModelConfig) -> Tensor:
    """Sum over modalities of mean next-step cross entropy.

    The prediction at position i is scored against each stream's token at
    position i+1; the last position has no target and is excluded.
    """
    squeeze = logits.data.ndim == 2
    if squeeze:
        logits = logits.reshape((1,) + logits.shape)
    b, n, v = logits.shape
    if n < 2:
        raise ValueError("need at least 2 positions for next-step loss")
    flat = logits[:, :-1, :].reshape((b * (n - 1), v))
    total = None
    for stream in targets:
        stream = np.asarray(stream)
        if stream.ndim == 1:
            stream = stream[None, :]
        shifted = stream[:, 1:].reshape(-1)
        term = cross_entropy_mean(flat, shifted)
        total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def _range_distribution(row: np.ndarray, start: int, end: int) -> np.ndarray:
    """Softmax of one logit row restricted to a vocabulary range."""
    piece = row[start:end]
    e = np.exp(piece - piece.max())
    return e / e.sum()


def decode(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    vocab: Vocabulary,
    prefix: list[np.ndarray],
    steps: int,
    mode: str = "greedy",
    k: int = 5,
    seed: int = 0,
) -> list[np.ndarray]:
    """Autoregressive rollout extending `prefix` by `steps` positions.

    At each step the final position's logits are masked to each modality's
    range; greedy takes the per-modality argmax, topk samples from the
    renormalized top-k. Returns the extended shared-id streams.
    """
    if mode not in ("greedy", "topk"):
        raise ValueError(f"unknown decode mode: {mode}")
    if k < 1:
        raise ValueError("k must be >= 1")
    streams = [np.asarray(s, dtype=np.int64).copy() for s in prefix]
    if streams[0].size < 1:
        raise ValueError("prefix must cover at least one position")
    if steps > config.n_max - streams[0].size:
        raise ValueError(
            f"step limit exceeded: {steps} steps from prefix length "
            f"{streams[0].size} overruns n_max={config.n_max}"
        )
    rng = np.random.default_rng(seed)
    tparams = wrap_params(params)
    for _ in range(steps):
        row = forward_logits(streams, tparams, config).data[-1]
        picks = []
        for m in config.modality_indices:
            start, end = vocab.range_of(m)
            dist = _range_distribution(row, start, end)
            if mode == "greedy" or k == 1:
                choice = int(np.argmax(dist))
            else:
                top = np.argsort(-dist, kind="stable")[:k]
                probs = dist[top] / dist[top].sum()
                choice = int(top[rng.choice(len(top), p=probs)])
            picks.append(start + choice)
        streams = [np.append(s, c) for s, c in zip(streams, picks)]
    return streams


def next_token_distributions(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    vocab: Vocabulary,
    prefix: list[np.ndarray],
) -> list[np.ndarray]:
    """Per-modality masked next-token distributions after the prefix."""
    row = forward_logits(prefix, wrap_params(params), config).data[-1]
    out = []
    for m in config.modality_indices:
        start, end = vocab.range_of(m)
        out.append(_range_distribution(row, start, end))
    return out
