"""Unbiased predictive Bregman-risk estimators (G-UPBRE and P-UPBRE).

For a regularization map ``B_gamma``, a forward model ``A`` and a Bregman
function ``f``, write ``g_gamma = grad f o A o B_gamma``.  Up to an additive
constant that does not depend on gamma, the expected predictive Bregman risk
``E D_f(A(x*), A(x_gamma))`` is estimated from the data alone by

    D_f(b, A(x_gamma)) + (1/eps) * omega^T W (g_gamma(b + eps*omega) - g_gamma(b))

with a Rademacher probe ``omega``, ``W = sigma^2 I`` for Gaussian noise and
``W = diag(b)`` for Poisson noise.  The constant is never computed, so
estimator values are only comparable along one curve, never across
Bregman functions.

A *pipeline* is any object with ``solve(b, gamma) -> x`` (the map
``B_gamma``) and ``forward(x) -> A(x)``; :class:`TomoPipeline` is the
tomographic one, and tests plug in small analytic stubs.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .bregman import BregmanSpec, divergence, f_gradient
from .errors import NumericalError
from .geometry import GridSpec
from .physics import CLAMP_FLOOR, ForwardModel, MeasurementSet, log_correct
from .radon import radon_operator
from .recon import FistaConfig, fista_tv

__all__ = [
    "ProbeVector",
    "EstimatorEval",
    "EstimatorCurve",
    "TomoPipeline",
    "CachedPipeline",
    "g_gamma",
    "g_upbre",
    "p_upbre",
    "estimator_curve",
    "IdentityReport",
    "stein_identity_check",
    "poisson_identity_check",
    "poisson_taylor_check",
]


@dataclass(frozen=True)
class ProbeVector:
    """Rademacher vector, reproducible from its seed."""

    omega: np.ndarray
    seed: int

    @classmethod
    def draw(cls, m: int, seed: int) -> "ProbeVector":
        rng = np.random.default_rng(seed)
        omega = 2.0 * rng.integers(0, 2, size=m) - 1.0
        return cls(omega, int(seed))

    @classmethod
    def draw_many(cls, m: int, seed: int, n: int) -> list["ProbeVector"]:
        if n == 1:
            return [cls.draw(m, seed)]
        return [cls.draw(m, int(s.generate_state(1)[0])) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class EstimatorEval:
    gamma: float
    divergence_term: float
    trace_term: float
    eps_fd: float
    noise_model: str
    sigma2: float | None = None

    @property
    def total(self) -> float:
        return self.divergence_term + self.trace_term


class TomoPipeline:
    """``B_gamma``: log-correct the counts, then TV-FISTA on ``grid``.

    ``A``: the Beer-Lambert model with the flat and dark fields of ``model``.
    """

    def __init__(self, model: ForwardModel, grid: GridSpec, cfg: FistaConfig = FistaConfig(),
                 clamp_floor: float = CLAMP_FLOOR):
        self.model = model
        self.grid = grid
        self.cfg = cfg
        self.clamp_floor = clamp_floor
        self.R = radon_operator(model.geometry, grid)

    def sinogram(self, b: np.ndarray):
        mset = MeasurementSet(b, self.model.flat, self.model.dark, self.model.geometry)
        return log_correct(mset, self.clamp_floor)

    def solve(self, b: np.ndarray, gamma: float) -> np.ndarray:
        return self.solve_info(b, gamma)[0]

    def solve_info(self, b: np.ndarray, gamma: float, n_iters: int | None = None):
        """``(x, iterations)``; ``n_iters`` fixes the iteration count."""
        x, info = fista_tv(self.R, self.sinogram(b).values, gamma, self.cfg, n_iters=n_iters)
        return x, info.iterations

    def solve_perturbed(self, b: np.ndarray, b_pert: np.ndarray, gamma: float) -> np.ndarray:
        """Solve at ``b_pert`` with the iteration count the solve at ``b`` used.

        The finite difference then measures how the data move one fixed
        solver map, not where two independent stopping tests happened to fire.
        """
        _, k = self.solve_info(b, gamma)
        return self.solve_info(b_pert, gamma, n_iters=k)[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.model.from_sinogram(self.R(x))


class CachedPipeline:
    """Memoizes ``solve`` on ``(b, gamma)`` so that several Bregman functions
    and oracle objectives can share reconstructions."""

    def __init__(self, pipeline):
        self.pipeline = pipeline
        self._cache: dict = {}
        self.n_solves = 0

    @staticmethod
    def _key(b: np.ndarray, gamma: float):
        return hashlib.sha1(np.ascontiguousarray(b, dtype=np.float64).tobytes()).hexdigest(), float(gamma)

    def _solve_info(self, b, gamma):
        key = self._key(b, gamma)
        if key not in self._cache:
            if hasattr(self.pipeline, "solve_info"):
                self._cache[key] = self.pipeline.solve_info(b, gamma)
            else:
                self._cache[key] = (self.pipeline.solve(b, gamma), None)
            self.n_solves += 1
        return self._cache[key]

    def solve(self, b: np.ndarray, gamma: float) -> np.ndarray:
        return self._solve_info(b, gamma)[0]

    def solve_perturbed(self, b: np.ndarray, b_pert: np.ndarray, gamma: float) -> np.ndarray:
        _, k = self._solve_info(b, gamma)
        if k is None:
            return self.solve(b_pert, gamma)
        key = ("matched", k) + self._key(b_pert, gamma)
        if key not in self._cache:
            self._cache[key] = self.pipeline.solve_info(b_pert, gamma, n_iters=k)[0]
            self.n_solves += 1
        return self._cache[key]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.pipeline.forward(x)


def g_gamma(b: np.ndarray, gamma: float, pipeline, spec: BregmanSpec) -> np.ndarray:
    """``grad f(A(B_gamma(b)))``."""
    return f_gradient(spec, pipeline.forward(pipeline.solve(b, gamma)))


def _evaluate(b, gamma, pipeline, spec, probes, eps_fd, weight, noise_model, sigma2=None):
    if not eps_fd > 0:
        raise ValueError("eps_fd must be positive")
    if isinstance(probes, ProbeVector):
        probes = [probes]
    b = np.asarray(b, dtype=np.float64)
    x = pipeline.solve(b, gamma)
    Ax = pipeline.forward(x)
    g0 = f_gradient(spec, Ax)
    div = divergence(spec, b, Ax)
    traces = []
    matched = getattr(pipeline, "solve_perturbed", None)
    for probe in probes:
        bp = b + eps_fd * probe.omega
        if matched is None:
            g1 = g_gamma(bp, gamma, pipeline, spec)
        else:
            g1 = f_gradient(spec, pipeline.forward(matched(b, bp, gamma)))
        traces.append(float(np.dot(probe.omega * weight, g1 - g0)) / eps_fd)
    trace = float(np.mean(traces))
    if not (np.isfinite(div) and np.isfinite(trace)):
        raise NumericalError(f"non-finite estimator terms at gamma={gamma:g}: D={div}, trace={trace}")
    return EstimatorEval(float(gamma), div, trace, float(eps_fd), noise_model, sigma2)


def g_upbre(b, gamma, pipeline, spec: BregmanSpec, sigma2: float, probe, eps_fd: float = 0.1) -> EstimatorEval:
    """Gaussian-noise estimator with variance ``sigma2``.

    ``probe`` may be one :class:`ProbeVector` or a list, whose trace terms
    are averaged.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return _evaluate(b, gamma, pipeline, spec, probe, eps_fd, sigma2, "gaussian", float(sigma2))


def p_upbre(b, gamma, pipeline, spec: BregmanSpec, probe, eps_fd: float = 0.1) -> EstimatorEval:
    """Poisson-noise estimator: the trace term is weighted by ``diag(b)``."""
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 0):
        raise ValueError("Poisson data must be nonnegative")
    return _evaluate(b, gamma, pipeline, spec, probe, eps_fd, b, "poisson")


@dataclass
class EstimatorCurve:
    spec: BregmanSpec
    eps_fd: float
    probe_seed: int
    evals: list[EstimatorEval] = field(default_factory=list)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([e.gamma for e in self.evals])

    @property
    def totals(self) -> np.ndarray:
        return np.array([e.total for e in self.evals])

    def oscillation(self) -> float:
        """Total variation of the curve divided by its range (1 for monotone,
        2 for a clean single dip, larger when the curve wiggles)."""
        t = self.totals
        rng = t.max() - t.min()
        return float(np.sum(np.abs(np.diff(t))) / rng) if rng > 0 else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "divergence_term", "trace_term", "total"])
            for e in self.evals:
                w.writerow([repr(e.gamma), repr(e.divergence_term), repr(e.trace_term), repr(e.total)])


def estimator_curve(b, gammas: Sequence[float], pipeline, spec: BregmanSpec, probe,
                    eps_fd: float = 0.1, noise: str = "poisson", sigma2: float | None = None) -> EstimatorCurve:
    """Evaluate one estimator over a gamma grid with a single shared probe set."""
    probes = [probe] if isinstance(probe, ProbeVector) else list(probe)
    curve = EstimatorCurve(spec, float(eps_fd), probes[0].seed)
    for gamma in gammas:
        if noise == "poisson":
            curve.evals.append(p_upbre(b, gamma, pipeline, spec, probes, eps_fd))
        elif noise == "gaussian":
            curve.evals.append(g_upbre(b, gamma, pipeline, spec, sigma2, probes, eps_fd))
        else:
            raise ValueError(f"unknown noise model {noise!r}")
    return curve


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------

@dataclass
class IdentityReport:
    lhs: float
    rhs: float
    lhs_se: float = 0.0
    rhs_se: float = 0.0
    diff_se: float = 0.0
    truncation: int | None = None
    tail_mass: float | None = None
    passed: bool = False

    @property
    def abs_diff(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def rel_diff(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return self.abs_diff / scale if scale > 0 else 0.0


VectorField = Callable[[np.ndarray], np.ndarray]


def stein_identity_check(h: VectorField, dh: VectorField, beta, sigma2: float, n_samples: int,
                         seed: int, n_sigma: float = 3.0, chunk: int = 250_000) -> IdentityReport:
    """Monte-Carlo check of ``E[h(b).(b - beta)] = sigma2 * E[sum_i dh_i/db_i]``.

    ``h`` and ``dh`` map an ``(N, m)`` batch of samples to ``(N, m)``; ``dh``
    returns the diagonal partials.  Both sides use the same samples, and the
    pass criterion is on their paired difference.
    """
    beta = np.asarray(beta, dtype=np.float64)
    rng = np.random.default_rng(seed)
    sd = np.sqrt(sigma2)
    sums = np.zeros(3)
    sq = np.zeros(3)
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        b = beta + sd * rng.standard_normal((k, beta.size))
        lhs = np.sum(h(b) * (b - beta), axis=1)
        rhs = sigma2 * np.sum(dh(b), axis=1)
        for i, v in enumerate((lhs, rhs, lhs - rhs)):
            sums[i] += v.sum()
            sq[i] += np.dot(v, v)
        done += k
    mean = sums / n_samples
    var = np.maximum(sq / n_samples - mean ** 2, 0.0) * n_samples / max(n_samples - 1, 1)
    se = np.sqrt(var / n_samples)
    passed = abs(mean[2]) <= n_sigma * se[2] or abs(mean[2]) <= 1e-12 * max(1.0, abs(mean[0]))
    return IdentityReport(mean[0], mean[1], se[0], se[1], se[2], passed=bool(passed))


def _poisson_lattice(beta: np.ndarray, truncation: int | None, tail_tol: float, max_points: int = 10_000_000):
    if np.any(beta < 0):
        raise ValueError("Poisson means must be nonnegative")
    m = beta.size
    if truncation is None:
        truncation = int(max(stats.poisson.isf(tail_tol / (10 * m), beta).max(), 1)) + 1
    ks = np.arange(truncation + 1)
    tails = stats.poisson.sf(truncation, beta)
    tail_mass = float(1.0 - np.prod(1.0 - tails))
    if tail_mass >= tail_tol:
        raise ValueError(f"truncation {truncation} leaves tail mass {tail_mass:.3g} >= {tail_tol:g}")
    if (truncation + 1) ** m > max_points:
        raise ValueError(f"lattice of {(truncation + 1) ** m} points is too large for exact enumeration")
    grids = np.meshgrid(*([ks] * m), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1).astype(np.float64)
    pmf = np.ones(pts.shape[0])
    for i in range(m):
        pmf *= stats.poisson.pmf(pts[:, i], beta[i])
    return pts, pmf, truncation, tail_mass


def _shift_down_diag(h: VectorField, b: np.ndarray) -> np.ndarray:
    """``h_i(b - e_i)`` for every component ``i``.

    Where ``b_i = 0`` the shifted point leaves the lattice; that term is
    always multiplied by ``b_i`` so ``h_i(b)`` is returned there instead and
    ``h`` is never evaluated at ``-1``.
    """
    out = np.empty_like(b)
    hb = None
    for i in range(b.shape[1]):
        bs = b.copy()
        zero = bs[:, i] == 0
        bs[:, i] -= 1.0
        bs[zero, i] = 0.0
        out[:, i] = h(bs)[:, i]
        if np.any(zero):
            if hb is None:
                hb = h(b)
            out[zero, i] = hb[zero, i]
    return out


def poisson_identity_check(h: VectorField, beta, truncation: int | None = None,
                           tail_tol: float = 1e-12, atol: float = 1e-10) -> IdentityReport:
    """Exact check of ``E[h(b).(b - beta)] = E[b.(h(b) - h^{[-1]}(b))]`` for
    independent Poisson ``b`` by enumeration over a truncated lattice."""
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    pts, pmf, T, tail = _poisson_lattice(beta, truncation, tail_tol)
    hb = h(pts)
    lhs = float(np.sum(pmf * np.sum(hb * (pts - beta), axis=1)))
    rhs = float(np.sum(pmf * np.sum(pts * (hb - _shift_down_diag(h, pts)), axis=1)))
    return IdentityReport(lhs, rhs, truncation=T, tail_mass=tail, passed=abs(lhs - rhs) <= atol)


def poisson_taylor_check(h: VectorField, dh: VectorField, beta, truncation: int | None = None,
                         tail_tol: float = 1e-12, rtol: float = 0.02) -> IdentityReport:
    """Compare ``E[b.(h(b) - h^{[-1]}(b))]`` (lhs) with its first-order
    approximation ``E[b.dh(b)]`` (rhs), both by exact enumeration."""
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    pts, pmf, T, tail = _poisson_lattice(beta, truncation, tail_tol)
    exact = float(np.sum(pmf * np.sum(pts * (h(pts) - _shift_down_diag(h, pts)), axis=1)))
    approx = float(np.sum(pmf * np.sum(pts * dh(pts), axis=1)))
    rep = IdentityReport(exact, approx, truncation=T, tail_mass=tail)
    rep.passed = rep.rel_diff <= rtol
    return rep
