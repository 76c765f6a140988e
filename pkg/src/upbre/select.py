"""Regularization-parameter selection and the simulated-trial harness."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bregman import BregmanSpec, divergence
from .errors import NumericalError
from .estimator import CachedPipeline, ProbeVector, TomoPipeline, p_upbre
from .geometry import GridSpec, make_geometry
from .phantom import EllipsePhantom, SHEPP_LOGAN, block_average, render
from .physics import MeasurementSet, forward, simulate_counts, uniform_model
from .recon import FistaConfig

__all__ = [
    "GammaGrid",
    "SelectionReport",
    "golden_section_min",
    "select_gamma",
    "is_unimodal",
    "TrialConfig",
    "TrialResult",
    "run_trial",
    "run_batch",
    "write_trial_csv",
    "write_aggregate_csv",
]


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GammaGrid:
    values: tuple
    spacing: str = "log"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("gamma grid is empty")
        if any(v <= 0 for v in vals):
            raise ValueError("gamma grid values must be positive")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("gamma grid must be strictly increasing")
        if self.spacing not in ("log", "linear"):
            raise ValueError(f"unknown spacing {self.spacing!r}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def log(cls, lo: float, hi: float, n: int) -> "GammaGrid":
        if not lo > 0:
            raise ValueError("log-spaced gamma grid needs a positive lower end")
        vals = np.logspace(np.log10(lo), np.log10(hi), n)
        vals[0], vals[-1] = lo, hi
        return cls(tuple(vals), "log")

    @classmethod
    def linear(cls, lo: float, hi: float, n: int) -> "GammaGrid":
        return cls(tuple(np.linspace(lo, hi, n)), "linear")

    @classmethod
    def parse(cls, text: str) -> "GammaGrid":
        """``log:LO:HI:N`` or ``lin:LO:HI:N``."""
        try:
            kind, lo, hi, n = text.split(":")
            lo, hi, n = float(lo), float(hi), int(n)
        except ValueError:
            raise ValueError(f"bad gamma grid {text!r}; expected log:LO:HI:N or lin:LO:HI:N") from None
        if n < 1 or (n > 1 and not lo < hi):
            raise ValueError(f"bad gamma grid {text!r}")
        if n == 1:
            return cls((lo,), "log" if kind == "log" else "linear")
        if kind == "log":
            return cls.log(lo, hi, n)
        if kind in ("lin", "linear"):
            return cls.linear(lo, hi, n)
        raise ValueError(f"bad gamma grid kind {kind!r}")

    def spec(self) -> str:
        kind = "log" if self.spacing == "log" else "lin"
        return f"{kind}:{self.values[0]!r}:{self.values[-1]!r}:{len(self.values)}"

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


FULL_GAMMA_GRID = "log:1e-05:0.0003:33"


@dataclass
class SelectionReport:
    gamma_star_est: float
    gamma_star_sq: float | None = None
    gamma_star_breg: float | None = None
    rel_diff_sq: float | None = None
    rel_diff_breg: float | None = None
    grid_index: int = 0
    grid_values: np.ndarray | None = None
    evaluations: list = field(default_factory=list)
    kind: str | None = None
    eps_fd: float | None = None

    def fill_oracles(self, gamma_sq: float | None, gamma_breg: float | None) -> None:
        self.gamma_star_sq = gamma_sq
        self.gamma_star_breg = gamma_breg
        if gamma_sq is not None:
            self.rel_diff_sq = abs(gamma_sq - self.gamma_star_est) / gamma_sq
        if gamma_breg is not None:
            self.rel_diff_breg = abs(gamma_breg - self.gamma_star_est) / gamma_breg

    @property
    def unimodal(self) -> bool:
        return is_unimodal(self.grid_values)


def is_unimodal(values) -> bool:
    """Nonincreasing up to the (first) minimum, nondecreasing after it."""
    v = np.asarray(values, dtype=np.float64)
    k = int(np.argmin(v))
    d = np.diff(v)
    return bool(np.all(d[:k] <= 0) and np.all(d[k:] >= 0))


def _checked(objective: Callable[[float], float], gamma: float) -> float:
    val = float(objective(gamma))
    if not np.isfinite(val):
        raise NumericalError(f"non-finite objective {val} at gamma={gamma!r}")
    return val


def golden_section_min(objective: Callable[[float], float], bracket: tuple[float, float],
                       tol: float = 1e-6, max_evals: int = 100, log_scale: bool = False,
                       record: list | None = None) -> float:
    """Golden-section search for a unimodal objective on ``bracket``.

    Stops when the bracket has shrunk to ``tol`` times its initial width (in
    ``log`` coordinates if ``log_scale``) or after ``max_evals`` evaluations.
    Returns the best point evaluated.  Evaluated ``(gamma, value)`` pairs are
    appended to ``record`` when given.
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError(f"bracket must satisfy lo < hi, got {bracket}")
    if log_scale:
        if lo <= 0:
            raise ValueError("log-scale search needs a positive bracket")
        to_g, a, b = math.exp, math.log(lo), math.log(hi)
    else:
        to_g, a, b = (lambda u: u), lo, hi
    width0 = b - a
    seen = record if record is not None else []
    best = [None, math.inf]

    def f(u):
        g = to_g(u)
        v = _checked(objective, g)
        seen.append((g, v))
        if v < best[1] or (v == best[1] and g < best[0]):
            best[:] = [g, v]
        return v

    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while (b - a) > tol * width0 and evals < max_evals:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
        evals += 1
    return best[0]


def select_gamma(objective: Callable[[float], float], grid: GammaGrid, refine: bool = True,
                 tol: float = 0.05, max_evals: int = 6) -> SelectionReport:
    """Grid argmin (smallest gamma on ties), optionally refined by golden
    section between the neighbouring grid points."""
    gammas = np.array(grid.values)
    values = np.array([_checked(objective, g) for g in gammas])
    k = int(np.argmin(values))
    evaluations = list(zip(gammas.tolist(), values.tolist()))
    best_g, best_v = float(gammas[k]), float(values[k])
    if refine and len(gammas) > 1:
        lo = gammas[max(k - 1, 0)]
        hi = gammas[min(k + 1, len(gammas) - 1)]
        rec: list = []
        g_hat = golden_section_min(objective, (lo, hi), tol=tol, max_evals=max_evals,
                                   log_scale=grid.spacing == "log", record=rec)
        evaluations.extend(rec)
        v_hat = dict(rec)[g_hat]
        if v_hat < best_v:
            best_g, best_v = g_hat, v_hat
    return SelectionReport(best_g, grid_index=k, grid_values=values, evaluations=evaluations)


# ---------------------------------------------------------------------------
# Simulated trials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialConfig:
    """Desk-scale version of the simulated-data protocol."""

    fine_n: int = 256
    coarse_n: int = 64
    n_angles: int = 60
    n_offsets: int = 96
    flux: float = 1e4
    dark: float = 0.0
    kinds: tuple = ("ms", "kl", "is")
    eps_log: float = 0.1
    eps_fds: tuple = (0.1,)
    refine_eps: tuple | None = None  # None: refine every eps in eps_fds
    gamma_grid: str = "log:0.0001:0.1:13"
    refine: bool = True
    golden_evals: int = 6
    n_probes: int = 1
    fista: FistaConfig = FistaConfig()
    noiseless: bool = False
    phantom: EllipsePhantom = SHEPP_LOGAN

    def __post_init__(self):
        if self.fine_n % self.coarse_n:
            raise ValueError("fine grid size must be a multiple of the coarse grid size")
        if self.fine_n < self.coarse_n:
            raise ValueError("fine grid must be at least as fine as the coarse grid")


@dataclass
class TrialResult:
    data_seed: int
    probe_seed: int
    reports: list[SelectionReport]
    sq_errors: np.ndarray
    n_clamped: int
    n_solves: int

    def report(self, kind: str, eps_fd: float) -> SelectionReport:
        for r in self.reports:
            if r.kind == kind and r.eps_fd == eps_fd:
                return r
        raise KeyError((kind, eps_fd))


def run_trial(cfg: TrialConfig, data_seed: int, probe_seed: int) -> TrialResult:
    """Simulate one dataset and compare the estimator minimizers with the
    oracle minimizers of the squared image error and the true predictive
    Bregman risk.

    Counts are drawn from the phantom rendered on the fine grid; every
    reconstruction uses the coarse grid, and the reference image is the
    fine rendering block-averaged to the coarse grid.
    """
    geometry = make_geometry(cfg.n_angles, cfg.n_offsets)
    fine, coarse = GridSpec(cfg.fine_n), GridSpec(cfg.coarse_n)
    x_fine = render(cfg.phantom, fine)
    x_ref = block_average(x_fine, fine, cfg.fine_n // cfg.coarse_n)
    model = uniform_model(geometry, cfg.flux, cfg.dark)
    mean = forward(model, x_fine, fine)
    if cfg.noiseless:
        mset = MeasurementSet(mean, model.flat, model.dark, geometry)
    else:
        mset = simulate_counts(model, x_fine, data_seed, fine)
    b = mset.counts
    pipe = CachedPipeline(TomoPipeline(model, coarse, cfg.fista))
    n_clamped = pipe.pipeline.sinogram(b).n_clamped
    grid = GammaGrid.parse(cfg.gamma_grid)
    probes = ProbeVector.draw_many(geometry.n_rays, probe_seed, cfg.n_probes)
    refine_eps = cfg.eps_fds if cfg.refine_eps is None else cfg.refine_eps

    def sq_err(g):
        return float(np.sum((pipe.solve(b, g) - x_ref) ** 2))

    sq_sel = select_gamma(sq_err, grid, cfg.refine, max_evals=cfg.golden_evals)
    reports = []
    for kind in cfg.kinds:
        spec = BregmanSpec.parse(kind, cfg.eps_log)

        def breg_risk(g, spec=spec):
            return divergence(spec, mean, pipe.forward(pipe.solve(b, g)))

        breg_sel = select_gamma(breg_risk, grid, cfg.refine, max_evals=cfg.golden_evals)
        for eps in cfg.eps_fds:
            def est(g, spec=spec, eps=eps):
                return p_upbre(b, g, pipe, spec, probes, eps).total

            sel = select_gamma(est, grid, cfg.refine and eps in refine_eps, max_evals=cfg.golden_evals)
            sel.kind, sel.eps_fd = kind, eps
            sel.fill_oracles(sq_sel.gamma_star_est, breg_sel.gamma_star_est)
            reports.append(sel)
    return TrialResult(data_seed, probe_seed, reports, sq_sel.grid_values, n_clamped, pipe.n_solves)


def trial_seeds(master_seed: int, n_trials: int) -> list[tuple[int, int]]:
    """Per-trial ``(data_seed, probe_seed)`` pairs derived from one master seed."""
    out = []
    for child in np.random.SeedSequence(master_seed).spawn(n_trials):
        s = child.generate_state(2)
        out.append((int(s[0]), int(s[1])))
    return out


def run_batch(cfg: TrialConfig, n_trials: int, master_seed: int, threads: int = 1) -> list[TrialResult]:
    seeds = trial_seeds(master_seed, n_trials)
    if threads > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=threads)(delayed(run_trial)(cfg, ds, ps) for ds, ps in seeds)
    return [run_trial(cfg, ds, ps) for ds, ps in seeds]


_TRIAL_FIELDS = ["gamma_star_est", "gamma_star_sq", "gamma_star_breg", "rel_diff_sq", "rel_diff_breg"]


def write_trial_csv(path, results: Sequence[TrialResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "data_seed", "probe_seed", "bregman", "eps_fd", *_TRIAL_FIELDS,
                    "grid_index", "unimodal", "n_clamped"])
        for t, res in enumerate(results):
            for r in res.reports:
                w.writerow([t, res.data_seed, res.probe_seed, r.kind, repr(r.eps_fd),
                            *(repr(getattr(r, f)) for f in _TRIAL_FIELDS),
                            r.grid_index, int(r.unimodal), res.n_clamped])


def write_aggregate_csv(path, results: Sequence[TrialResult]) -> None:
    """Median and quartiles of each statistic per ``(bregman, eps_fd)``."""
    groups: dict = {}
    for res in results:
        for r in res.reports:
            groups.setdefault((r.kind, r.eps_fd), []).append(r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bregman", "eps_fd", "statistic", "n", "min", "q1", "median", "q3", "max"])
        for (kind, eps), reps in groups.items():
            for f in _TRIAL_FIELDS:
                v = np.array([getattr(r, f) for r in reps], dtype=np.float64)
                q = np.percentile(v, [0, 25, 50, 75, 100])
                w.writerow([kind, repr(eps), f, v.size, *(repr(float(x)) for x in q)])
