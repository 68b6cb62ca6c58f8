"""Dataset splitting, the training loop, fine-tuning, and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from mobmod.autodiff import adam_step, clip_grad_norm
from mobmod.model import (
    ModelConfig,
    decode,
    forward_logits,
    init_params,
    loss_multimodal,
    tokenize,
    wrap_params,
)
from mobmod.trajectory import MultiScaleTrajectory
from mobmod.vocab import MODALITIES, Vocabulary

SCALES = MODALITIES  # ("context", "space_type", "building", "location")


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass
class Splits:
    train: list[MultiScaleTrajectory]
    dev: list[MultiScaleTrajectory]
    test: list[MultiScaleTrajectory]
    excluded_users: int = 0


def make_splits(trajectories: list[MultiScaleTrajectory]) -> Splits:
    """Chronological 80-10-10 per user: first floor(0.8 D) days train, next
    floor(0.1 D) dev, remainder test. Users with fewer than 3 days are
    excluded (counted)."""
    by_user: dict[str, list[MultiScaleTrajectory]] = {}
    for t in trajectories:
        by_user.setdefault(t.user, []).append(t)
    out = Splits(train=[], dev=[], test=[])
    for user in sorted(by_user):
        days = sorted(by_user[user], key=lambda t: t.date)
        d = len(days)
        if d < 3:
            out.excluded_users += 1
            continue
        n_train = int(0.8 * d)
        n_dev = int(0.1 * d)
        out.train.extend(days[:n_train])
        out.dev.extend(days[n_train:n_train + n_dev])
        out.test.extend(days[n_train + n_dev:])
    return out


# ---------------------------------------------------------------------------
# token batching
# ---------------------------------------------------------------------------


def stack_tokens(trajectories: list[MultiScaleTrajectory], vocab: Vocabulary,
                 config: ModelConfig) -> list[np.ndarray]:
    """Tokenize a corpus into stacked [N, n] shared-id arrays, one per stream."""
    if not trajectories:
        return [np.zeros((0, 0), dtype=np.int64) for _ in config.modality_indices]
    lengths = {len(t.tokens_l) for t in trajectories}
    if len(lengths) != 1:
        raise ValueError("mixed trajectory lengths in one corpus")
    rows = [tokenize(t, vocab) for t in trajectories]
    return [np.stack([r[m] for r in rows]) for m in config.modality_indices]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    learning_rate: float = 0.01
    batch_size: int = 100
    seed: int = 0
    clip_norm: float | None = 1.0

    def validate(self) -> None:
        if self.epochs < 0 or self.learning_rate < 0 or self.batch_size < 1:
            raise ValueError("train config values must be positive")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    curve: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _corpus_loss(tokens: list[np.ndarray], params, model_config: ModelConfig,
                 batch_size: int) -> float:
    n = tokens[0].shape[0]
    if n == 0:
        return float("nan")
    tparams = wrap_params(params)
    total = 0.0
    for lo in range(0, n, batch_size):
        batch = [t[lo:lo + batch_size] for t in tokens]
        logits = forward_logits(batch, tparams, model_config)
        loss = loss_multimodal(logits, batch, model_config)
        total += loss.item() * batch[0].shape[0]
    return total / n


def train(
    params: dict[str, np.ndarray],
    train_tokens: list[np.ndarray],
    dev_tokens: list[np.ndarray] | None,
    config: TrainConfig,
    model_config: ModelConfig,
) -> TrainResult:
    """Adam on the summed multi-modal loss; keeps the best-dev-epoch params.

    Mini-batches are reshuffled each epoch by a seeded generator, the last
    partial batch is kept, and a NaN loss aborts with DivergenceError.
    Without dev data the final epoch's parameters are returned.
    """
    config.validate()
    params = {k: v.copy() for k, v in params.items()}
    n = train_tokens[0].shape[0]
    if n == 0:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(config.seed)
    state = None
    result = TrainResult(params={k: v.copy() for k, v in params.items()})
    best_dev = float("inf")
    have_dev = dev_tokens is not None and dev_tokens[0].shape[0] > 0

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            batch = [t[idx] for t in train_tokens]
            tparams = wrap_params(params, requires_grad=True)
            logits = forward_logits(batch, tparams, model_config)
            loss = loss_multimodal(logits, batch, model_config)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"loss became non-finite at epoch {epoch + 1}, "
                    f"batch starting {lo} (lr={config.learning_rate})"
                )
            epoch_loss += value * len(idx)
            loss.backward()
            grads = {k: t.grad for k, t in tparams.items()}
            if config.clip_norm is not None:
                grads = clip_grad_norm(grads, config.clip_norm)
            params, state = adam_step(params, grads, state, lr=config.learning_rate)
        row = {"epoch": epoch + 1, "train_loss": epoch_loss / n, "dev_loss": None}
        if have_dev:
            row["dev_loss"] = _corpus_loss(dev_tokens, params, model_config,
                                           config.batch_size)
            if row["dev_loss"] < best_dev:
                best_dev = row["dev_loss"]
                result.params = {k: v.copy() for k, v in params.items()}
                result.best_epoch = epoch + 1
        result.curve.append(row)
    if not have_dev:
        result.params = params
        result.best_epoch = config.epochs
    return result


def fine_tune(
    global_params: dict[str, np.ndarray],
    user_tokens: list[np.ndarray],
    model_config: ModelConfig,
    epochs: int = 3,
    learning_rate: float = 0.001,
    seed: int = 0,
    batch_size: int = 100,
) -> dict[str, np.ndarray]:
    """Continue training on one user's days; the global params are untouched."""
    if user_tokens[0].shape[0] == 0:
        raise ValueError("insufficient data: user has no training days")
    if epochs == 0:
        return {k: v.copy() for k, v in global_params.items()}
    cfg = TrainConfig(epochs=epochs, learning_rate=learning_rate,
                      batch_size=batch_size, seed=seed)
    return train(global_params, user_tokens, None, cfg, model_config).params


def write_curve_csv(curve: list[dict], path) -> None:
    lines = ["epoch,train_loss,dev_loss"]
    for row in curve:
        dev = "" if row["dev_loss"] is None else f"{row['dev_loss']:.10f}"
        lines.append(f"{row['epoch']},{row['train_loss']:.10f},{dev}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    mode: str
    granularity: int
    accuracy: dict[str, float]
    topk: dict[str, dict[int, float]]
    counters: dict[str, dict[str, int]]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "granularity": self.granularity,
            "accuracy": self.accuracy,
            "topk": {s: {str(k): v for k, v in t.items()} for s, t in self.topk.items()},
            "counters": self.counters,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))


def eval_accuracy(
    params: dict[str, np.ndarray],
    model_config: ModelConfig,
    vocab: Vocabulary,
    test: list[MultiScaleTrajectory],
    mode: str = "next_step",
    ks: tuple[int, ...] = (1, 5),
    batch_size: int = 100,
    to_steps: int | None = None,
) -> EvalReport:
    """Per-scale accuracy on held-out days.

    next_step teacher-forces the true prefix and scores position i+1;
    rollout seeds with the first bin and greedily decodes the rest, scoring
    every generated position. Top-k hits use the range-masked distribution.
    """
    if mode not in ("next_step", "rollout"):
        raise ValueError(f"unknown eval mode: {mode}")
    if not test:
        raise ValueError("empty test set")
    if vocab.size != model_config.vocab_size:
        raise ValueError("vocabulary mismatch between model and test data")
    tokens = stack_tokens(test, vocab, model_config)
    n = tokens[0].shape[1]
    granularity = test[0].granularity
    names = [MODALITIES[m] for m in model_config.modality_indices]
    hits = {s: 0 for s in names}
    khits = {s: {k: 0 for k in ks} for s in names}
    total = 0

    if mode == "next_step":
        tparams = wrap_params(params)
        for lo in range(0, tokens[0].shape[0], batch_size):
            batch = [t[lo:lo + batch_size] for t in tokens]
            logits = forward_logits(batch, tparams, model_config).data
            total += batch[0].shape[0] * (n - 1)
            for stream, m, s in zip(batch, model_config.modality_indices, names):
                start, end = vocab.range_of(m)
                piece = logits[:, :-1, start:end]
                truth = stream[:, 1:] - start
                pred = piece.argmax(axis=2)
                hits[s] += int((pred == truth).sum())
                order = np.argsort(-piece, axis=2, kind="stable")
                for k in ks:
                    topk = order[:, :, :k]
                    khits[s][k] += int((topk == truth[:, :, None]).any(axis=2).sum())
    else:
        for i in range(tokens[0].shape[0]):
            prefix = [t[i][:1] for t in tokens]
            rolled = decode(params, model_config, vocab, prefix, n - 1, mode="greedy")
            total += n - 1
            for got, truth_seq, s in zip(rolled, tokens, names):
                hits[s] += int((got[1:] == truth_seq[i][1:]).sum())
        # a rollout emits a single trajectory, so every k reports top-1
        khits = {s: {k: hits[s] for k in ks} for s in names}

    accuracy = {s: hits[s] / total for s in names}
    topk = {s: {k: khits[s][k] / total for k in ks} for s in names}
    counters = {s: {"hits": hits[s], "total": total} for s in names}
    return EvalReport(mode=mode, granularity=granularity, accuracy=accuracy,
                      topk=topk, counters=counters)


def trajectory_similarity(a: MultiScaleTrajectory, b: MultiScaleTrajectory) -> float:
    """Fraction of bins whose indoor-location tokens agree."""
    if a.granularity != b.granularity or len(a.tokens_l) != len(b.tokens_l):
        raise ValueError("length mismatch: trajectories must share granularity")
    same = sum(1 for x, y in zip(a.tokens_l, b.tokens_l) if x == y)
    return same / len(a.tokens_l)


def r_squared(predicted, observed) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot."""
    p = np.asarray(predicted, dtype=float)
    o = np.asarray(observed, dtype=float)
    if p.shape != o.shape or p.size < 2:
        raise ValueError("series must share a length of at least 2")
    ss_tot = float(((o - o.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("constant observed series")
    ss_res = float(((o - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def next_step_accuracy(model, sequences) -> float:
    """Top-1 next-token accuracy of a baseline over location sequences."""
    hits = total = 0
    for seq in sequences:
        seq = np.asarray(seq)
        if hasattr(model, "next_step_predictions"):
            preds = model.next_step_predictions(seq)
            hits += int((preds == seq[1:]).sum())
        else:
            preds = [model.predict(seq[:i]) for i in range(1, len(seq))]
            hits += int((np.asarray(preds) == seq[1:]).sum())
        total += len(seq) - 1
    return hits / total


# ---------------------------------------------------------------------------
# estimator facade
# ---------------------------------------------------------------------------


class MobilityTransformer(BaseEstimator):
    """sklearn-style wrapper tying the model, trainer, and decoder together.

    X is a list of MultiScaleTrajectory; the shared Vocabulary comes from
    the AP map and is passed to fit. Fitted state lives in params_,
    config_, vocab_, and curve_.
    """

    def __init__(self, n_modalities: int = 4, n_layers: int = 4, n_heads: int = 4,
                 d_model: int = 64, d_ff: int = 256, n_max: int = 96,
                 epochs: int = 15, learning_rate: float = 0.01,
                 batch_size: int = 100, clip_norm: float | None = 1.0,
                 seed: int = 0):
        self.n_modalities = n_modalities
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.n_max = n_max
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.seed = seed

    def _model_config(self, vocab: Vocabulary) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab.size,
            n_modalities=self.n_modalities,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            n_max=self.n_max,
        )

    def fit(self, X, y=None, vocab: Vocabulary | None = None, dev=None):
        if vocab is None:
            raise ValueError("fit requires the shared vocabulary (vocab=...)")
        self.vocab_ = vocab
        self.config_ = self._model_config(vocab)
        tokens = stack_tokens(X, vocab, self.config_)
        dev_tokens = stack_tokens(dev, vocab, self.config_) if dev else None
        tc = TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                         batch_size=self.batch_size, seed=self.seed,
                         clip_norm=self.clip_norm)
        result = train(init_params(self.config_, seed=self.seed), tokens,
                       dev_tokens, tc, self.config_)
        self.params_ = result.params
        self.curve_ = result.curve
        self.best_epoch_ = result.best_epoch
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("fit the model first")

    def predict(self, X):
        """Per-trajectory next-step indoor-location predictions (raw ids)."""
        self._check_fitted()
        tokens = stack_tokens(X, self.vocab_, self.config_)
        tparams = wrap_params(self.params_)
        logits = forward_logits(tokens, tparams, self.config_).data
        start, end = self.vocab_.range_of(3)
        return [row for row in logits[:, :-1, start:end].argmax(axis=2)]

    def score(self, X, y=None) -> float:
        """Mean held-out next-step indoor-location top-1 accuracy."""
        self._check_fitted()
        report = eval_accuracy(self.params_, self.config_, self.vocab_, X,
                               mode="next_step", ks=(1,))
        return report.accuracy["location"]

    def evaluate(self, X, mode: str = "next_step", ks=(1, 5)) -> EvalReport:
        self._check_fitted()
        return eval_accuracy(self.params_, self.config_, self.vocab_, X,
                             mode=mode, ks=ks)

    def rollout(self, prefix_tokens, steps: int, mode: str = "greedy",
                k: int = 5, seed: int = 0):
        self._check_fitted()
        return decode(self.params_, self.config_, self.vocab_, prefix_tokens,
                      steps, mode=mode, k=k, seed=seed)

    def fine_tuned(self, X, epochs: int = 3, learning_rate: float = 0.001,
                   seed: int = 0) -> "MobilityTransformer":
        """A per-user copy trained further on X; self stays untouched."""
        self._check_fitted()
        clone = MobilityTransformer(**self.get_params())
        clone.vocab_ = self.vocab_
        clone.config_ = self.config_
        clone.curve_ = list(self.curve_)
        clone.best_epoch_ = self.best_epoch_
        tokens = stack_tokens(X, self.vocab_, self.config_)
        clone.params_ = fine_tune(self.params_, tokens, self.config_,
                                  epochs=epochs, learning_rate=learning_rate,
                                  seed=seed)
        return clone
