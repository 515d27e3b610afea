"""Gradient verification of whole models on a fixed 4-arc lattice."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .batching import collate
from .lattice import Arc, ArcFeatures, Label, Lattice, build_line_graph
from .models import ModelConfig, Variant, init_params, model_forward
from .numerics import GradCheckReport, bce_loss, grad_check_report

GRADCHECK_TOLERANCE = 1e-4

# variant -> depth used by default; keeps the full sweep well under a minute
DEFAULT_DEPTHS = {
    Variant.GCN: 2,
    Variant.RESGCN: 2,
    Variant.SAGNN: 1,
    Variant.MASKED_SAGNN: 1,
}


def pinned_lattice() -> Lattice:
    """hi -> {dan | don} -> what: a diamond with two parallel middle arcs."""
    rng = np.random.default_rng(20200504)

    def arc(start, end, word, flags=(0, 0)):
        emb = tuple(float(v) for v in np.round(rng.normal(size=14), 4))
        feats = ArcFeatures(emb, float(np.round(-rng.uniform(1, 4), 4)),
                            float(np.round(-rng.uniform(0.5, 3), 4)),
                            float(np.round(-rng.uniform(0, 1), 4)),
                            int(rng.integers(3, 12)), *flags)
        return Arc(start, end, word, feats)

    arcs = (arc(0, 1, "hi", (1, 0)), arc(1, 2, "dan", (0, 1)), arc(1, 2, "don"), arc(2, 3, "what"))
    return Lattice("gradcheck", Label.FALSE_TRIGGER, 4, arcs)


def check_variant(variant: Variant | str, depth: int | None = None, seed: int = 1,
                  eps: float = 1e-5,
                  analytic_hook: Callable[[list[np.ndarray]], None] | None = None
                  ) -> GradCheckReport:
    """Grad-check the training-mode BCE loss of one model on the pinned lattice."""
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    depth = DEFAULT_DEPTHS[variant] if depth is None else depth
    config = ModelConfig(variant, depth=depth, seed=seed)
    params = init_params(config)
    batch = collate([build_line_graph(pinned_lattice())])

    def loss():
        return bce_loss(model_forward(config, params, batch, training=True), batch.labels)

    return grad_check_report(loss, params.parameters(), eps, analytic_hook=analytic_hook)
