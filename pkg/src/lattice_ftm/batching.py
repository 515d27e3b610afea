"""Zero-padded mini-batches of lattice graphs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import GraphSample, Label

UNLABELED_TARGET = -1


@dataclass(frozen=True)
class GraphBatch:
    adjacency: np.ndarray  # (B, Nmax, Nmax)
    features: np.ndarray   # (B, Nmax, D)
    validity: np.ndarray   # (B, Nmax), 1.0 for real arcs
    labels: np.ndarray     # (B,), 1 = false trigger, -1 = unlabeled
    utterance_ids: tuple[str, ...]

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]

    @property
    def max_arcs(self) -> int:
        return self.adjacency.shape[1]


def collate(samples: Sequence[GraphSample], max_arcs: int | None = None) -> GraphBatch:
    """Stack samples, zero-padding each to the largest arc count (or ``max_arcs``)."""
    if not samples:
        raise ValueError("cannot collate an empty list")
    n_max = max(s.num_arcs for s in samples)
    if max_arcs is not None:
        if max_arcs < n_max:
            raise ValueError(f"max_arcs={max_arcs} smaller than largest sample ({n_max})")
        n_max = max_arcs
    dim = samples[0].features.shape[1]
    b = len(samples)
    adjacency = np.zeros((b, n_max, n_max))
    features = np.zeros((b, n_max, dim))
    validity = np.zeros((b, n_max))
    labels = np.empty(b, dtype=np.int64)
    for k, s in enumerate(samples):
        n = s.num_arcs
        adjacency[k, :n, :n] = s.adjacency
        features[k, :n] = s.features
        validity[k, :n] = 1.0
        labels[k] = UNLABELED_TARGET if s.label is Label.UNLABELED else s.label.target
    return GraphBatch(adjacency, features, validity, labels,
                      tuple(s.utterance_id for s in samples))


def make_batches(samples: Sequence[GraphSample], batch_size: int, seed: int | None = 0,
                 shuffle: bool = True) -> list[GraphBatch]:
    """Deterministically shuffle (per ``seed``) and cut into padded batches.

    The final short batch is kept.
    """
    if not samples:
        raise ValueError("no samples to batch")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(samples))
    return [collate([samples[i] for i in order[k:k + batch_size]])
            for k in range(0, len(samples), batch_size)]
