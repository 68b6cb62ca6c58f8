"""Versioned JSON checkpoint container shared by all model families."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from mobmod.model import ModelConfig, expected_param_count, init_params
from mobmod.vocab import Vocabulary

FORMAT = "mobmod-checkpoint"
VERSION = 1


def _write(path, kind: str, payload: dict) -> None:
    doc = {"format": FORMAT, "version": VERSION, "kind": kind}
    doc.update(payload)
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def _read(path, kind: str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} file: {path}")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    if doc.get("kind") != kind:
        raise ValueError(f"expected a {kind} checkpoint, found {doc.get('kind')}")
    return doc


def save_transformer(path, params: dict[str, np.ndarray], config: ModelConfig,
                     vocab: Vocabulary) -> None:
    _write(path, "transformer", {
        "config": config.to_json(),
        "vocab": vocab.to_json(),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in params.items()},
    })


def load_transformer(path) -> tuple[dict[str, np.ndarray], ModelConfig, Vocabulary]:
    doc = _read(path, "transformer")
    config = ModelConfig.from_json(doc["config"])
    vocab = Vocabulary.from_json(doc["vocab"])
    if vocab.size != config.vocab_size:
        raise ValueError("vocabulary size disagrees with the model config")
    reference = init_params(config, seed=0)
    params: dict[str, np.ndarray] = {}
    for name, spec in doc["params"].items():
        if name not in reference:
            raise ValueError(f"unexpected parameter tensor {name!r}")
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        if arr.shape != reference[name].shape:
            raise ValueError(
                f"shape mismatch for {name}: file has {arr.shape}, "
                f"config requires {reference[name].shape}"
            )
        params[name] = arr
    missing = set(reference) - set(params)
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
    total = sum(a.size for a in params.values())
    assert total == expected_param_count(config)
    return params, config, vocab


def save_ngram(path, model) -> None:
    _write(path, "ngram", {
        "order": model.order,
        "vocab": model.vocab_,
        "counts": [
            {",".join(map(str, ctx)): dict(sorted((str(t), c) for t, c in table.items()))
             for ctx, table in level.items()}
            for level in model.counts_
        ],
    })


def load_ngram(path):
    from collections import Counter

    from mobmod.baselines import NgramModel

    doc = _read(path, "ngram")
    model = NgramModel(order=int(doc["order"]))
    model.vocab_ = list(doc["vocab"])
    model.counts_ = []
    for level in doc["counts"]:
        table = {}
        for key, counter in level.items():
            ctx = tuple(int(t) for t in key.split(",")) if key else ()
            table[ctx] = Counter({int(t): int(c) for t, c in counter.items()})
        model.counts_.append(table)
    return model


def save_hmm(path, model) -> None:
    _write(path, "hmm", {
        "n_states": model.n_states,
        "n_symbols": model.n_symbols_,
        "startprob": model.startprob_.tolist(),
        "transmat": model.transmat_.tolist(),
        "emissionprob": model.emissionprob_.tolist(),
        "log_likelihoods": model.log_likelihoods_,
    })


def load_hmm(path):
    from mobmod.baselines import HmmModel

    doc = _read(path, "hmm")
    model = HmmModel(n_states=int(doc["n_states"]))
    model.startprob_ = np.asarray(doc["startprob"])
    model.transmat_ = np.asarray(doc["transmat"])
    model.emissionprob_ = np.asarray(doc["emissionprob"])
    model.n_symbols_ = int(doc["n_symbols"])
    model.log_likelihoods_ = list(doc["log_likelihoods"])
    if model.transmat_.shape != (model.n_states, model.n_states):
        raise ValueError("transition matrix shape disagrees with n_states")
    return model
