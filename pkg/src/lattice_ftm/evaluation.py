"""ROC analysis for false-trigger scores and the 1-best ASR-output baseline.

Scores are P(false trigger); an utterance is accepted (treated as a true
trigger) when its score is below the threshold. TPR is the fraction of true
triggers accepted and FAR the fraction of false triggers accepted.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .batching import make_batches
from .lattice import Label, Lattice, best_path, build_line_graph, contains_trigger
from .models import ModelConfig, ModelParams, model_forward
from .numerics import no_grad


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    far: float


@dataclass
class RocCurve:
    points: list[RocPoint]
    auc: float


def _as_targets(labels) -> np.ndarray:
    """Labels as 1 = false trigger / 0 = true trigger."""
    out = []
    for lab in labels:
        if isinstance(lab, Label):
            out.append(lab.target)
        else:
            out.append(int(lab))
    y = np.asarray(out, dtype=np.int64)
    if y.size and not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be binary")
    return y


def roc_curve(scores: Sequence[float], labels) -> RocCurve:
    """Sweep thresholds (-inf, midpoints between distinct scores, +inf)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _as_targets(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    if not np.isfinite(s).all():
        raise MetricError("scores must be finite")
    n_true, n_false = int((y == 0).sum()), int((y == 1).sum())
    if n_true == 0 or n_false == 0:
        raise MetricError("ROC needs both true and false triggers")

    distinct = np.unique(s)
    thresholds = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2, [np.inf]])
    # accepted counts for "score < threshold" via sorted search
    true_sorted = np.sort(s[y == 0])
    false_sorted = np.sort(s[y == 1])
    tpr = np.searchsorted(true_sorted, thresholds, side="left") / n_true
    far = np.searchsorted(false_sorted, thresholds, side="left") / n_false
    auc = float(np.sum(np.diff(far) * (tpr[1:] + tpr[:-1]) / 2))
    points = [RocPoint(float(t), float(a), float(b)) for t, a, b in zip(thresholds, tpr, far)]
    return RocCurve(points, auc)


def far_at_tpr(curve: RocCurve, target_tpr: float) -> float:
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError("target_tpr must be in (0, 1]")
    return min(p.far for p in curve.points if p.tpr >= target_tpr)


def asr_output_baseline(lattices: Sequence[Lattice], trigger_phrase: Sequence[str],
                        am_weight: float = 1.0, lm_weight: float = 1.0) -> tuple[float, float]:
    """(TPR, FAR) of accepting exactly the lattices whose 1-best contains the phrase."""
    accepted = {0: 0, 1: 0}
    totals = {0: 0, 1: 0}
    for lat in lattices:
        y = lat.label.target
        totals[y] += 1
        if contains_trigger(best_path(lat, am_weight, lm_weight), trigger_phrase):
            accepted[y] += 1
    if totals[0] == 0 or totals[1] == 0:
        raise MetricError("baseline needs both true and false triggers")
    return accepted[0] / totals[0], accepted[1] / totals[1]


def score_lattices(config: ModelConfig, params: ModelParams, lattices: Sequence[Lattice],
                   batch_size: int = 64) -> np.ndarray:
    """P(false trigger) for each lattice, in input order (inference mode)."""
    samples = [build_line_graph(lat) for lat in lattices]
    out = []
    with no_grad():
        for batch in make_batches(samples, batch_size, shuffle=False):
            out.append(model_forward(config, params, batch, training=False).data)
    return np.concatenate(out)


@dataclass
class EvalReport:
    auc: float
    far_at_tpr99: float
    roc: RocCurve
    utterance_ids: list[str]
    labels: list[int]
    scores: np.ndarray = field(repr=False)

    def summary(self) -> str:
        return f"auc={self.auc:.6f} far_at_tpr99={self.far_at_tpr99:.6f}"

    def summary_text(self) -> str:
        n_false = sum(self.labels)
        return (f"auc: {self.auc!r}\nfar_at_tpr99: {self.far_at_tpr99!r}\n"
                f"num_true: {len(self.labels) - n_false}\nnum_false: {n_false}\n")

    def roc_csv(self) -> str:
        return roc_to_csv(self.roc)

    def scores_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["utterance_id", "label", "score"])
        for u, lab, sc in zip(self.utterance_ids, self.labels, self.scores):
            w.writerow([u, "false" if lab else "true", repr(float(sc))])
        return buf.getvalue()


def roc_to_csv(curve: RocCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "tpr", "far"])
    for p in curve.points:
        w.writerow([repr(p.threshold), repr(p.tpr), repr(p.far)])
    return buf.getvalue()


def evaluate(config: ModelConfig, params: ModelParams, lattices: Sequence[Lattice],
             batch_size: int = 64) -> EvalReport:
    labels = [lat.label for lat in lattices]
    if any(lab is Label.UNLABELED for lab in labels):
        raise MetricError("evaluation needs labelled lattices")
    scores = score_lattices(config, params, lattices, batch_size)
    curve = roc_curve(scores, labels)
    return EvalReport(curve.auc, far_at_tpr(curve, 0.99), curve,
                      [lat.utterance_id for lat in lattices], [lab.target for lab in labels],
                      scores)
