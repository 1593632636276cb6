"""Sigmoid-based losses returning (value, dL/dlogits)."""
from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy.special import expit, log_expit


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean binary cross entropy over every element."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    loss = -(y * log_expit(z) + (1.0 - y) * log_expit(-z))
    grad = (expit(z) - y) / z.size
    return float(loss.mean()), grad


def binary_kl_with_logits(
    student: np.ndarray, teacher: np.ndarray, temperature: float
) -> Tuple[float, np.ndarray]:
    """Per-class binary KL(sigma(t/T) || sigma(s/T)) * T^2, averaged over elements.

    Gradient is taken w.r.t. the student logits only.
    """
    tau = float(temperature)
    s = np.asarray(student, dtype=np.float64) / tau
    t = np.asarray(teacher, dtype=np.float64) / tau
    p = expit(t)
    kl = p * (log_expit(t) - log_expit(s)) + (1.0 - p) * (log_expit(-t) - log_expit(-s))
    grad = (expit(s) - p) * tau / s.size
    return float(kl.mean() * tau * tau), grad
