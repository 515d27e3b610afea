"""Synthetic labelled lattices: skinny for true triggers, bushy for false ones.

True-trigger lattices are a near-linear word sequence opening with the
trigger phrase, tight scores and high posteriors. False-trigger lattices
sprout competing sub-paths, have noisier AM/LM scores and lower posteriors,
and draw phone embeddings from a shifted cluster. Most false lattices still
carry the trigger flags, so the flags alone do not separate the classes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .lattice import EMBEDDING_DIM, Arc, ArcFeatures, Label, Lattice

TRIGGER_PHRASE = ("hi", "dan")


@dataclass(frozen=True)
class SynthSpec:
    num_true: int = 100
    num_false: int = 100
    path_length_min: int = 4
    path_length_max: int = 10
    false_branch_prob: float = 0.6
    true_branch_prob: float = 0.05
    false_extra_paths_min: int = 1
    false_extra_paths_max: int = 4
    score_noise_sigma_true: float = 0.2
    score_noise_sigma_false: float = 1.0
    trigger_flag_noise: float = 0.7
    vocab_size: int = 50
    embedding_separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("false_branch_prob", "true_branch_prob", "trigger_flag_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.num_true < 1 or self.num_false < 1:
            raise ValueError("counts must be >= 1")
        if not 1 <= self.path_length_min <= self.path_length_max:
            raise ValueError("empty path length range")
        if not 1 <= self.false_extra_paths_min <= self.false_extra_paths_max:
            raise ValueError("empty extra-path range")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.score_noise_sigma_true < 0 or self.score_noise_sigma_false < 0:
            raise ValueError("noise sigmas must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _q(x: float) -> float:
    # 4 decimals keeps every value exact under the 9-significant-digit text format
    return float(f"{round(float(x), 4):.9g}")


def _embedding_center(label: Label, separation: float) -> np.ndarray:
    direction = np.where(np.arange(EMBEDDING_DIM) % 2 == 0, 1.0, -1.0) / np.sqrt(EMBEDDING_DIM)
    sign = 0.5 if label is Label.TRUE_TRIGGER else -0.5
    return sign * separation * direction


def _arc_features(rng: np.random.Generator, spec: SynthSpec, label: Label, alternative: bool,
                  flags: tuple[int, int]) -> ArcFeatures:
    is_true = label is Label.TRUE_TRIGGER
    sigma = spec.score_noise_sigma_true if is_true else spec.score_noise_sigma_false
    frames = int(rng.integers(3, 31))
    am = frames * (-0.1 - 0.02 * abs(rng.normal(0.0, 1.0))) * (1.0 + 0.5 * sigma * abs(rng.normal()))
    lm = -abs(rng.normal(1.0, 0.5)) - sigma * abs(rng.normal())
    post = -abs(rng.normal(0.0, 0.1 * sigma))
    if alternative:
        post -= abs(rng.normal(1.0, 0.5))
    emb = rng.normal(_embedding_center(label, spec.embedding_separation), 1.0)
    return ArcFeatures(tuple(_q(v) for v in emb), _q(am), _q(lm), min(_q(post), 0.0),
                       frames, *flags)


def gen_lattice(spec: SynthSpec, label: Label, rng: np.random.Generator,
                utterance_id: str = "synth") -> Lattice:
    """One lattice: a backbone path plus optional competing sub-paths.

    Backbone states are 0..L with L the sampled path length; extra states for
    multi-word alternatives are numbered after L, so state L is the only
    final state.
    """
    is_true = label is Label.TRUE_TRIGGER
    length = int(rng.integers(spec.path_length_min, spec.path_length_max + 1))
    vocab = [f"w{k}" for k in range(spec.vocab_size)]

    with_trigger = is_true or rng.random() < spec.trigger_flag_noise
    words = [str(vocab[int(rng.integers(len(vocab)))]) for _ in range(length)]
    if with_trigger:
        for k, w in enumerate(TRIGGER_PHRASE[:length]):
            words[k] = w

    arcs: list[Arc] = []
    for k, w in enumerate(words):
        flags = (int(with_trigger and k == 0), int(with_trigger and k == 1))
        arcs.append(Arc(k, k + 1, w, _arc_features(rng, spec, label, False, flags)))

    branch_prob = spec.true_branch_prob if is_true else spec.false_branch_prob
    next_state = length + 1
    for s in range(length):
        if rng.random() >= branch_prob:
            continue
        n_paths = 1 if is_true else int(rng.integers(spec.false_extra_paths_min,
                                                       spec.false_extra_paths_max + 1))
        for _ in range(n_paths):
            target = int(rng.integers(s + 1, min(s + 2, length) + 1))
            n_words = int(rng.integers(1, 3))
            chain = [s] + list(range(next_state, next_state + n_words - 1)) + [target]
            next_state += n_words - 1
            for a, b in zip(chain[:-1], chain[1:]):
                w = vocab[int(rng.integers(len(vocab)))]
                arcs.append(Arc(a, b, w, _arc_features(rng, spec, label, True, (0, 0))))
    return Lattice(utterance_id, label, next_state, tuple(arcs))


def gen_corpus(spec: SynthSpec, prefix: str = "utt") -> list[Lattice]:
    """``num_true + num_false`` lattices in shuffled order, deterministic per seed.

    Lattice ``k`` is generated from its own child seed, so any subset can be
    regenerated independently.
    """
    labels = [Label.TRUE_TRIGGER] * spec.num_true + [Label.FALSE_TRIGGER] * spec.num_false
    root = np.random.SeedSequence(spec.seed)
    order_seed, *children = root.spawn(len(labels) + 1)
    order = np.random.default_rng(order_seed).permutation(len(labels))
    width = len(str(len(labels) - 1))
    corpus = []
    for position, k in enumerate(order):
        rng = np.random.default_rng(children[k])
        corpus.append(gen_lattice(spec, labels[k], rng, f"{prefix}{position:0{width}d}"))
    return corpus
