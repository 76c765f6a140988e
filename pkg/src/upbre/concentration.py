"""Concentration of the minimizer of a random quadratic in gamma.

Toy objective, with ``b1, b2 ~ N(0, sigma^2)`` independent::

    phi(b, gamma) = (b1 + 1)^2 gamma^2 - (b2 + 1)^2 gamma + b1^2 / 2 + 2 b2^2

Its minimizer is ``(b2 + 1)^2 / (2 (b1 + 1)^2)`` and the minimizer of
``E phi`` is exactly 1/2.  For a grid argmin ``g_hat`` the probability of
landing within ``d`` of 1/2 (given some grid point does) is bounded below by

    1 - exp(-((lam/4) d^2 - L d)^2 / (4V)) - exp(-((lam/4) d^2)^2 / (4V))

with strong-convexity constant ``lam``, local Lipschitz constant ``L`` and
concentration variance proxy ``V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .select import GammaGrid

__all__ = [
    "ToyModel",
    "MinimizerSample",
    "CoverageReport",
    "phi",
    "toy_minimizer",
    "sample_minimizers",
    "expected_minimizer",
    "sample_average_minimizer",
    "probability_bound",
    "empirical_coverage",
    "default_coverage_grid",
]

GAMMA_STAR = 0.5


@dataclass(frozen=True)
class ToyModel:
    sigma: float
    r: float = 0.1
    lambda_sc: float = 2.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.lambda_sc > 0:
            raise ValueError("lambda_sc must be positive")

    @property
    def lipschitz(self) -> float:
        return (1.0 + 2.0 * self.r) * (1.0 + self.sigma) ** 2

    @property
    def variance(self) -> float:
        return self.sigma ** 2

    @property
    def radius(self) -> float:
        """``d = 9 L / (2 lam)``."""
        return 9.0 * self.lipschitz / (2.0 * self.lambda_sc)

    @property
    def threshold(self) -> float:
        """``c = (lam / 4) d^2``."""
        return 0.25 * self.lambda_sc * self.radius ** 2


def phi(b1, b2, gamma):
    return (b1 + 1.0) ** 2 * gamma ** 2 - (b2 + 1.0) ** 2 * gamma + 0.5 * b1 ** 2 + 2.0 * b2 ** 2


def toy_minimizer(b1, b2):
    return (b2 + 1.0) ** 2 / (2.0 * (b1 + 1.0) ** 2)


@dataclass
class MinimizerSample:
    values: np.ndarray
    b: np.ndarray  # (n, 2) draws actually used
    n_rejected: int
    seed: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


def _draw_b(sigma: float, n: int, rng: np.random.Generator):
    b = sigma * rng.standard_normal((n, 2))
    rejected = 0
    bad = np.abs(b[:, 0] + 1.0) < 1e-12
    while np.any(bad):
        k = int(bad.sum())
        rejected += k
        b[bad] = sigma * rng.standard_normal((k, 2))
        bad = np.abs(b[:, 0] + 1.0) < 1e-12
    return b, rejected


def sample_minimizers(model: ToyModel, n_samples: int, seed: int) -> MinimizerSample:
    """Closed-form minimizers of ``n_samples`` independent realizations."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    b, rejected = _draw_b(model.sigma, n_samples, np.random.default_rng(seed))
    return MinimizerSample(toy_minimizer(b[:, 0], b[:, 1]), b, rejected, seed)


def expected_minimizer(model: ToyModel) -> float:
    """Minimizer of ``E phi``: ``E(b2+1)^2 / (2 E(b1+1)^2)``, which is 1/2 for every sigma."""
    second_moment = 1.0 + model.sigma ** 2
    return second_moment / (2.0 * second_moment)


def sample_average_minimizer(b: np.ndarray) -> float:
    """Minimizer of the sample average of ``phi`` over the rows of ``b``."""
    b = np.asarray(b, dtype=np.float64)
    return float(np.mean((b[:, 1] + 1.0) ** 2) / (2.0 * np.mean((b[:, 0] + 1.0) ** 2)))


def probability_bound(model: ToyModel) -> float:
    """Lower bound on ``P[g_hat within d of gamma* | some grid point is]``,
    clipped at 0."""
    L, V, d, c = model.lipschitz, model.variance, model.radius, model.threshold
    if not L * d < c:
        raise ValueError(f"need L*d < (lam/4) d^2, got L*d={L * d:g}, (lam/4) d^2={c:g} (L={L:g}, d={d:g})")
    bound = 1.0 - math.exp(-((c - L * d) ** 2) / (4.0 * V)) - math.exp(-(c ** 2) / (4.0 * V))
    return max(bound, 0.0)


@dataclass
class CoverageReport:
    coverage: float
    n_trials: int
    bound: float
    se: float

    @property
    def passed(self) -> bool:
        return self.coverage >= self.bound - 3.0 * self.se


def default_coverage_grid(model: ToyModel, n: int = 401) -> GammaGrid:
    """Linear grid from near 0 to well beyond ``1/2 + d``."""
    return GammaGrid.linear(1e-3, GAMMA_STAR + 2.0 * model.radius, n)


def empirical_coverage(model: ToyModel, grid: GammaGrid | None, n_trials: int, seed: int,
                       chunk: int = 2000) -> CoverageReport:
    """Fraction of realizations whose grid argmin lies within ``d`` of 1/2."""
    grid = grid or default_coverage_grid(model)
    g = np.asarray(grid.values)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_trials:
        k = min(chunk, n_trials - done)
        b, _ = _draw_b(model.sigma, k, rng)
        vals = phi(b[:, :1], b[:, 1:], g[None, :])
        g_hat = g[np.argmin(vals, axis=1)]
        hits += int(np.count_nonzero(np.abs(g_hat - GAMMA_STAR) <= model.radius))
        done += k
    bound = probability_bound(model)
    se = math.sqrt(bound * (1.0 - bound) / n_trials)
    return CoverageReport(hits / n_trials, n_trials, bound, se)
