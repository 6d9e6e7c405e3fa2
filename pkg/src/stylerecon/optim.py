"""Adam for latent-space objectives.

Affine coordinate constraints (fix a head and tail of the vector, leave a
middle block free) are handled by masking: only free coordinates receive
updates, which for this constraint class is exactly projected Adam with
post-step coordinate resetting and zeroed moments on the fixed entries.

The step size follows a cosine rampdown by default; a constant step
stalls an order of magnitude above the recovery tolerances the latent
reconstructions need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalFailure, ParameterError


@dataclass(frozen=True)
class AdamConfig:
    step: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    iters: int = 1500
    restarts: int = 3
    seed: int = 0
    eps: float = 1e-8

    def __post_init__(self):
        if self.step <= 0:
            raise ParameterError("step must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ParameterError("beta1, beta2 must lie in (0, 1)")
        if self.iters < 0:
            raise ParameterError("iters must be >= 0")
        if self.restarts < 1:
            raise ParameterError("restarts must be >= 1")
        if self.eps <= 0:
            raise ParameterError("stability constant must be positive")


@dataclass
class AdamRun:
    """Outcome of one Adam trajectory."""

    final_x: np.ndarray
    best_x: np.ndarray
    best_value: float
    trace: list[float]
    aux_trace: list[dict]


def cosine_step_scale(t: int, iters: int) -> float:
    """Rampdown factor for step t of `iters` (1 at the start, ~0 at the end)."""
    if iters <= 1:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * t / (iters - 1)))


def adam_minimize(
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray, dict]],
    x0: np.ndarray,
    cfg: AdamConfig,
    free_mask: np.ndarray | None = None,
    schedule: str = "cosine",
    iterate_hook: Callable[[int, np.ndarray], None] | None = None,
) -> AdamRun:
    """Minimize a smooth objective with Adam.

    ``value_and_grad`` returns (value, gradient, aux) where aux is a dict
    of extra per-iterate scalars recorded alongside the objective trace.
    ``free_mask`` selects the coordinates allowed to move; the rest stay
    bitwise equal to their values in ``x0``.  The trace always has
    ``cfg.iters + 1`` entries (initial point included).
    """
    if schedule not in ("cosine", "constant"):
        raise ParameterError(f"unknown schedule {schedule!r}")
    x = np.array(x0, dtype=np.float64)
    if free_mask is None:
        free_mask = np.ones(x.shape, dtype=bool)
    else:
        free_mask = np.asarray(free_mask, dtype=bool)
        if free_mask.shape != x.shape:
            raise ParameterError("free_mask shape must match x0")

    value, grad, aux = value_and_grad(x)
    trace = [float(value)]
    aux_trace = [dict(aux)]
    if not math.isfinite(value):
        raise NumericalFailure("objective non-finite at initialization", trace)
    best_x, best_value = x.copy(), float(value)
    if iterate_hook is not None:
        iterate_hook(0, x)

    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(cfg.iters):
        g = np.where(free_mask, grad, 0.0)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1 ** (t + 1))
        v_hat = v / (1.0 - cfg.beta2 ** (t + 1))
        scale = cosine_step_scale(t, cfg.iters) if schedule == "cosine" else 1.0
        update = cfg.step * scale * m_hat / (np.sqrt(v_hat) + cfg.eps)
        x = np.where(free_mask, x - update, x)
        value, grad, aux = value_and_grad(x)
        trace.append(float(value))
        aux_trace.append(dict(aux))
        if not math.isfinite(value):
            raise NumericalFailure(f"objective non-finite at iteration {t + 1}", trace)
        if value < best_value:
            best_value, best_x = float(value), x.copy()
        if iterate_hook is not None:
            iterate_hook(t + 1, x)
    return AdamRun(final_x=x, best_x=best_x, best_value=best_value, trace=trace, aux_trace=aux_trace)


# Fractions of the iteration budget and step multipliers of the phased
# schedule.  The coarse phase crosses the latent space; the two refinement
# phases (fresh moments, much smaller steps) grind down the flat valleys
# that a single cosine rampdown cannot finish off.
PHASE_FRACTIONS = (0.5, 0.3, 0.2)
PHASE_STEP_SCALES = (1.0, 0.1, 0.02)


def adam_minimize_phased(
    value_and_grad,
    x0: np.ndarray,
    cfg: AdamConfig,
    free_mask: np.ndarray | None = None,
) -> AdamRun:
    """Run Adam in three coarse-to-fine phases over ``cfg.iters`` total steps.

    Each phase is a fresh cosine-rampdown Adam run started from the best
    point found so far.  Traces concatenate to ``cfg.iters + 1`` entries.
    """
    budgets = [int(round(f * cfg.iters)) for f in PHASE_FRACTIONS]
    budgets[-1] = cfg.iters - sum(budgets[:-1])
    x = np.array(x0, dtype=np.float64)
    trace: list[float] = []
    aux_trace: list[dict] = []
    best_x, best_value = None, math.inf
    for phase, (budget, scale) in enumerate(zip(budgets, PHASE_STEP_SCALES)):
        if budget < 0:
            budget = 0
        phase_cfg = AdamConfig(
            step=cfg.step * scale, beta1=cfg.beta1, beta2=cfg.beta2,
            iters=budget, restarts=1, seed=cfg.seed, eps=cfg.eps,
        )
        run = adam_minimize(value_and_grad, x, phase_cfg, free_mask=free_mask)
        trace.extend(run.trace if phase == 0 else run.trace[1:])
        aux_trace.extend(run.aux_trace if phase == 0 else run.aux_trace[1:])
        if run.best_value < best_value:
            best_value, best_x = run.best_value, run.best_x
        x = run.best_x
    return AdamRun(final_x=x, best_x=best_x, best_value=best_value, trace=trace, aux_trace=aux_trace)
