from __future__ import annotations

import numpy as np


def init_glorot(rows: int, cols: int, seed) -> np.ndarray:
    """Glorot-uniform matrix, deterministic for a given seed (int or Generator)."""
    if rows < 1 or cols < 1:
        raise ValueError("dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))
