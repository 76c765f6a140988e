"""Bregman functions (mean square, smoothed KL, smoothed Itakura-Saito).

The logarithm is replaced below ``eps`` by its second-order Taylor
polynomial around ``eps``, which keeps the KL and IS functions finite,
differentiable and convex on the whole nonnegative orthant.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "BregmanKind",
    "BregmanSpec",
    "smoothed_log",
    "smoothed_log_and_derivative",
    "f_value",
    "f_gradient",
    "divergence",
]


class BregmanKind(str, Enum):
    MS = "ms"
    KL = "kl"
    IS = "is"


@dataclass(frozen=True)
class BregmanSpec:
    kind: BregmanKind = BregmanKind.MS
    eps_log: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", BregmanKind(str(getattr(self.kind, "value", self.kind)).lower()))
        if not self.eps_log > 0:
            raise ValueError(f"eps_log must be positive, got {self.eps_log}")

    @classmethod
    def parse(cls, kind: str, eps_log: float = 0.1) -> "BregmanSpec":
        return cls(BregmanKind(kind.lower()), eps_log)


def smoothed_log_and_derivative(x, eps: float):
    """Value and derivative of the smoothed log, sharing one branch test."""
    x = np.asarray(x, dtype=np.float64)
    smooth = x >= eps
    xs = np.where(smooth, x, eps)  # keeps log() away from nonpositive inputs
    dx = x - eps
    val = np.where(smooth, np.log(xs), np.log(eps) + dx / eps - dx * dx / (2.0 * eps * eps))
    der = np.where(smooth, 1.0 / xs, 1.0 / eps - dx / (eps * eps))
    return val, der


def smoothed_log(x, eps: float):
    """``ln(x)`` for ``x >= eps``, quadratic continuation below."""
    val, _ = smoothed_log_and_derivative(x, eps)
    return val if np.ndim(val) else float(val)


def _terms(spec: BregmanSpec, x: np.ndarray) -> np.ndarray:
    if spec.kind is BregmanKind.MS:
        return x * x
    lg, _ = smoothed_log_and_derivative(x, spec.eps_log)
    return x * lg if spec.kind is BregmanKind.KL else -lg


def f_value(spec: BregmanSpec, x) -> float:
    return float(np.sum(_terms(spec, np.asarray(x, dtype=np.float64))))


def f_gradient(spec: BregmanSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if spec.kind is BregmanKind.MS:
        return 2.0 * x
    lg, dlg = smoothed_log_and_derivative(x, spec.eps_log)
    if spec.kind is BregmanKind.KL:
        return lg + x * dlg
    return -dlg


def divergence(spec: BregmanSpec, x, y) -> float:
    """``D_f(x, y) = f(x) - f(y) - grad f(y) . (x - y)``.

    Summed per component to limit cancellation when ``f(x)`` is large.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if spec.kind is BregmanKind.MS:
        return float(np.sum((x - y) ** 2))
    return float(np.sum(_terms(spec, x) - _terms(spec, y) - f_gradient(spec, y) * (x - y)))
