"""Case-study operations: occupancy aggregation, synthetic traces, assistant."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mobmod.model import ModelConfig, decode, next_token_distributions
from mobmod.trajectory import MultiScaleTrajectory
from mobmod.vocab import MODALITIES, Vocabulary


@dataclass
class OccupancyGrid:
    """Per-zone, per-time-bin head counts aggregated from trajectories."""

    granularity: int
    zones: list[str]
    counts: np.ndarray          # [time_bins, zones]
    scale: float = 1.0

    def to_json(self) -> dict:
        return {
            "granularity": self.granularity,
            "zones": self.zones,
            "scale": self.scale,
            "counts": self.counts.tolist(),
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    def save_csv(self, path) -> None:
        lines = ["bin_start,zone,count"]
        step = self.granularity
        for t in range(self.counts.shape[0]):
            stamp = f"{(t * step) // 60:02d}:{(t * step) % 60:02d}"
            for z, zone in enumerate(self.zones):
                lines.append(f"{stamp},{zone},{self.counts[t, z]:g}")
        Path(path).write_text("\n".join(lines) + "\n")


def aggregate_occupancy(
    trajectories: list[MultiScaleTrajectory],
    vocab: Vocabulary,
    scale: float = 1.0,
) -> OccupancyGrid:
    """Head counts per (bin, zone) from indoor-location tokens.

    OFF tokens contribute nowhere; counts are multiplied by `scale` for
    sampled populations. All inputs must share one granularity.
    """
    if not trajectories:
        raise ValueError("no trajectories to aggregate")
    grans = {t.granularity for t in trajectories}
    if len(grans) != 1:
        raise ValueError(f"mixed granularities: {sorted(grans)}")
    granularity = grans.pop()
    zones = list(vocab.labels[3][1:])  # skip OFF
    lengths = {len(t.tokens_l) for t in trajectories}
    if len(lengths) != 1:
        raise ValueError("trajectories disagree on bin count")
    n_bins = lengths.pop()
    counts = np.zeros((n_bins, len(zones)))
    for t in trajectories:
        locs = np.asarray(t.tokens_l)
        for b in range(n_bins):
            raw = locs[b]
            if raw != 0:
                counts[b, raw - 1] += 1
    counts *= scale
    return OccupancyGrid(granularity=granularity, zones=zones, counts=counts,
                         scale=scale)


def off_counts(trajectories: list[MultiScaleTrajectory]) -> np.ndarray:
    """Per-bin count of users with no on-network presence."""
    n_bins = 1440 // trajectories[0].granularity
    off = np.zeros(n_bins)
    for t in trajectories:
        off += np.asarray(t.tokens_l) == 0
    return off


def simulate_traces(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    vocab: Vocabulary,
    seed_days: list[MultiScaleTrajectory],
    population: int,
    k: int = 5,
    seed: int = 0,
) -> list[MultiScaleTrajectory]:
    """Synthetic day trajectories via top-k sampled rollouts.

    Each simulated user starts from the first bin of a seed day sampled
    without replacement; the output uses the builder's trajectory schema so
    every downstream tool accepts it.
    """
    if population > len(seed_days):
        raise ValueError("population exceeds available seed prefixes")
    from mobmod.model import tokenize

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(seed_days))[:population]
    out: list[MultiScaleTrajectory] = []
    for rank, idx in enumerate(order):
        template = seed_days[int(idx)]
        prefix = [seq[:1] for seq in tokenize(template, vocab)]
        n = len(template.tokens_l)
        rolled = decode(params, config, vocab, prefix, n - 1, mode="topk",
                        k=k, seed=int(rng.integers(2**31)))
        raw = []
        for m, stream in zip(config.modality_indices, rolled):
            start, _ = vocab.range_of(m)
            raw.append(tuple(int(x) - start for x in stream))
        out.append(MultiScaleTrajectory(
            user=f"sim_{rank:05d}",
            date=template.date,
            granularity=template.granularity,
            tokens_c=raw[0], tokens_s=raw[1], tokens_b=raw[2], tokens_l=raw[3],
        ))
    return out


def assistant_next(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    vocab: Vocabulary,
    prefix_tokens: list[np.ndarray],
    top: int = 5,
) -> dict:
    """Ranked next (c, s, b, l) predictions with probabilities."""
    dists = next_token_distributions(params, config, vocab, prefix_tokens)
    out: dict = {}
    for dist, m in zip(dists, config.modality_indices):
        ranked = np.argsort(-dist, kind="stable")[:top]
        out[MODALITIES[m]] = [
            {"label": vocab.label(m, int(r)), "raw_id": int(r), "p": float(dist[r])}
            for r in ranked
        ]
    return out
