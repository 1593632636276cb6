from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from seqshot.core.errors import ParameterError, ShapeError


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.01,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One AdamW update; returns new parameter arrays and the advanced state.

    Decay is decoupled: p <- p - lr*wd*p happens before the Adam step.
    Parameters without a gradient entry are carried over unchanged.
    """
    if lr <= 0:
        raise ParameterError(f"lr must be > 0, got {lr}", module="nn_core")
    b1, b2 = betas
    t = state.step + 1
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = dict(state.m)
    new_v: Dict[str, np.ndarray] = dict(state.v)
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            new_params[k] = p
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for '{k}' has shape {g.shape}, expected {p.shape}", module="nn_core")
        p64 = p.astype(np.float64)
        g64 = np.asarray(g, dtype=np.float64)
        m = b1 * state.m.get(k, 0.0) + (1.0 - b1) * g64
        v = b2 * state.v.get(k, 0.0) + (1.0 - b2) * g64 * g64
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p64 = p64 - lr * weight_decay * p64
        p64 = p64 - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_params[k] = p64.astype(p.dtype)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


def one_cycle_lr(
    step: int,
    total_steps: int,
    peak: float = 0.01,
    final: float = 0.0001,
    warmup_frac: float = 0.1,
) -> float:
    """Linear warmup final->peak, then cosine decay peak->final."""
    if total_steps <= 0:
        return peak
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]", module="nn_core")
    warm = warmup_frac * total_steps
    if warm > 0 and step <= warm:
        return final + (peak - final) * (step / warm)
    span = total_steps - warm
    progress = (step - warm) / span if span > 0 else 1.0
    return final + (peak - final) * 0.5 * (1.0 + math.cos(math.pi * progress))
