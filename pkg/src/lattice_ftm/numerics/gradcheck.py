"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, no_grad

logger = logging.getLogger(__name__)


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_error: float
    worst_parameter: str
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    entries: int


def relative_error(g_ad: float, g_fd: float) -> float:
    return abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))


def grad_check_report(fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
                      analytic_hook: Callable[[list[np.ndarray]], None] | None = None
                      ) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``fn()`` against central differences.

    ``fn`` must read the current values of ``params`` each time it is called.
    ``analytic_hook`` may edit the analytic gradients before comparison; it
    exists so tests can confirm the check notices a wrong gradient.
    """
    for p in params:
        p.zero_grad()
    out = fn()
    if not np.isfinite(out.data).all():
        raise GradCheckError("function value is not finite")
    out.backward()
    analytic = [p.grad.copy() for p in params]
    if analytic_hook is not None:
        analytic_hook(analytic)

    worst = GradCheckReport(0.0, "", (), 0.0, 0.0, 0)
    entries = 0
    with no_grad():
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)  # view into the parameter
            gflat = g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                f_plus = float(fn().data)
                flat[k] = orig - eps
                f_minus = float(fn().data)
                flat[k] = orig
                numeric = (f_plus - f_minus) / (2 * eps)
                if not (math.isfinite(numeric) and math.isfinite(gflat[k])):
                    raise GradCheckError(f"non-finite gradient at {p.name}[{k}]")
                err = relative_error(float(gflat[k]), numeric)
                entries += 1
                if err > worst.max_error or not worst.worst_parameter:
                    worst = GradCheckReport(err, p.name, np.unravel_index(k, p.shape),
                                            float(gflat[k]), numeric, 0)
    worst.entries = entries
    worst.worst_index = tuple(int(i) for i in worst.worst_index)
    logger.debug("grad check over %d entries: max rel err %.3e at %s%s",
                 entries, worst.max_error, worst.worst_parameter, worst.worst_index)
    return worst


def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return grad_check_report(fn, params, eps).max_error
