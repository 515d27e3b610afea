"""Mini-batch training with Adam and best-validation-AUC model selection."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .batching import GraphBatch, make_batches
from .evaluation import roc_curve
from .lattice import GraphSample
from .models import ModelConfig, ModelParams, init_params, model_forward
from .numerics import Parameter, bce_loss, no_grad

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 50
    early_stop_patience: int = 5
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0 or self.adam_epsilon <= 0:
            raise ValueError("learning rate and epsilon must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if self.epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("epochs must be >= 0 and patience >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,val_loss,val_auc\n")
        for r in self.epochs:
            buf.write(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_auc!r}\n")
        return buf.getvalue()

    @property
    def best(self) -> EpochRecord | None:
        return None if self.best_epoch is None else self.epochs[self.best_epoch - 1]


@dataclass
class AdamMoments:
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], gradients: Sequence[np.ndarray], hp: Hyperparams,
              step_index: int, moments: AdamMoments) -> None:
    """Bias-corrected Adam update, in place. Rejects non-finite gradients untouched."""
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    for p, g in zip(params, gradients):
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"non-finite gradient for {p.name} at step {step_index}")
    b1, b2 = hp.adam_beta1, hp.adam_beta2
    for p, g in zip(params, gradients):
        m = moments.first.get(p.name)
        v = moments.second.get(p.name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        moments.first[p.name], moments.second[p.name] = m, v
        m_hat = m / (1 - b1 ** step_index)
        v_hat = v / (1 - b2 ** step_index)
        p.data -= hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.adam_epsilon)


def batch_loss(config: ModelConfig, params: ModelParams, batch: GraphBatch, training: bool):
    if (batch.labels < 0).any():
        raise ValueError("training batches need labels")
    probs = model_forward(config, params, batch, training=training)
    return bce_loss(probs, batch.labels), probs


def _validate(config, params, batches: list[GraphBatch]) -> tuple[float, float]:
    losses, scores, labels = [], [], []
    with no_grad():
        for batch in batches:
            loss, probs = batch_loss(config, params, batch, training=False)
            losses.append(float(loss.data) * batch.size)
            scores.append(probs.data)
            labels.append(batch.labels)
    n = sum(b.size for b in batches)
    y = np.concatenate(labels)
    auc = roc_curve(np.concatenate(scores), y).auc if len(set(y.tolist())) == 2 else math.nan
    return sum(losses) / n, auc


def train(config: ModelConfig, train_samples: Sequence[GraphSample],
          val_samples: Sequence[GraphSample], hp: Hyperparams,
          params: ModelParams | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None
          ) -> tuple[ModelParams, TrainHistory]:
    """Train and return the parameters of the best validation-AUC epoch.

    With ``epochs=0`` the (initial) parameters are returned unchanged.
    """
    if not train_samples or not val_samples:
        raise ValueError("train and validation sets must be non-empty")
    params = init_params(config) if params is None else params
    history = TrainHistory()
    best_params = params.copy()
    best_auc = -math.inf
    stale = 0
    moments = AdamMoments()
    step = 0
    epoch_seeds = np.random.SeedSequence(hp.shuffle_seed).generate_state(max(hp.epochs, 1))
    val_batches = make_batches(val_samples, hp.batch_size, shuffle=False)
    plist = params.parameters()

    for epoch in range(1, hp.epochs + 1):
        total, count = 0.0, 0
        for b_index, batch in enumerate(make_batches(train_samples, hp.batch_size,
                                                     int(epoch_seeds[epoch - 1]))):
            params.zero_grad()
            loss, _ = batch_loss(config, params, batch, training=True)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b_index}")
            loss.backward()
            step += 1
            adam_step(plist, [p.grad for p in plist], hp, step, moments)
            total += value * batch.size
            count += batch.size
        val_loss, val_auc = _validate(config, params, val_batches)
        record = EpochRecord(epoch, total / count, val_loss, val_auc)
        history.epochs.append(record)
        logger.info("epoch %d train_loss=%.5f val_loss=%.5f val_auc=%.5f",
                    epoch, record.train_loss, val_loss, val_auc)
        if on_epoch is not None:
            on_epoch(record)
        if val_auc > best_auc:
            best_auc, stale = val_auc, 0
            history.best_epoch = epoch
            best_params = params.copy()
        else:
            stale += 1
            if stale >= hp.early_stop_patience:
                logger.info("early stop after epoch %d (best %d)", epoch, history.best_epoch)
                break
    return best_params, history
