"""TV-regularized nonnegative least squares by FISTA.

Solves ``min_{x >= 0} 0.5 * ||Rx - y||^2 + gamma * TV(x)`` where

    TV(x) = sum_{i,j} sqrt((x[i,j] - x[i,j-1])^2 + (x[i,j] - x[i-1,j])^2)

with zero values outside the top/left edges (``x[i,-1] = x[-1,j] = 0`` in
0-based indexing).  The proximal step of ``gamma * TV`` plus the
nonnegativity constraint is computed by a fixed number of accelerated
projected-gradient iterations on the dual (Beck & Teboulle), warm-started
from the previous outer iteration, and the outer loop is the monotone
variant of FISTA.  Every iteration count is fixed by the
config, so the output is a deterministic function of the data and gamma.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .geometry import GridSpec
from .radon import RadonOperator, Sinogram, radon_operator

__all__ = [
    "FistaConfig",
    "TvProblem",
    "FistaInfo",
    "tv",
    "grad_op",
    "grad_adjoint",
    "objective",
    "tv_prox",
    "fista_tv",
    "reconstruct",
    "tikhonov_solve",
]

log = logging.getLogger(__name__)

# ||D||^2 <= 8 for the two zero-boundary backward differences
_DUAL_STEP_SCALE = 1.0 / 8.0
# safety margin on the power-method estimate of ||R||^2
_LIPSCHITZ_MARGIN = 1.05
# consecutive candidates 10x worse than the current objective before giving up
_DIVERGENCE_PATIENCE = 25


@dataclass(frozen=True)
class FistaConfig:
    max_iters: int = 500
    inner_tv_iters: int = 20
    rel_tol: float = 1e-6
    step: float | None = None  # None: 1 / ||R||^2 from the power method

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.inner_tv_iters < 1:
            raise ValueError("inner_tv_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")


@dataclass
class TvProblem:
    sinogram: Sinogram
    grid: GridSpec
    gamma: float

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")

    @property
    def geometry(self):
        return self.sinogram.geometry


@dataclass
class FistaInfo:
    iterations: int = 0
    objective: float = np.nan
    converged: bool = False
    history: list = field(default_factory=list)


def grad_op(img: np.ndarray) -> np.ndarray:
    """Backward differences with zero boundary; returns ``(2, n, n)``."""
    p = np.empty((2,) + img.shape)
    p[0, :, 0] = img[:, 0]
    p[0, :, 1:] = img[:, 1:] - img[:, :-1]
    p[1, 0, :] = img[0, :]
    p[1, 1:, :] = img[1:, :] - img[:-1, :]
    return p


def grad_adjoint(p: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`grad_op`."""
    out = p[0].copy()
    out[:, :-1] -= p[0][:, 1:]
    out += p[1]
    out[:-1, :] -= p[1][1:, :]
    return out


def tv(x: np.ndarray, n_side: int | None = None) -> float:
    """Isotropic total variation with zero top/left boundary."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        n = n_side or int(round(np.sqrt(x.size)))
        x = x.reshape(n, n)
    p = grad_op(x)
    return float(np.sum(np.sqrt(p[0] ** 2 + p[1] ** 2)))


def objective(R: RadonOperator, x: np.ndarray, y: np.ndarray, gamma: float) -> float:
    r = R(x) - y
    return 0.5 * float(np.dot(r, r)) + gamma * tv(x, R.grid.n_side)


def _project_ball(q: np.ndarray, radius: float) -> np.ndarray:
    nrm = np.sqrt(q[0] ** 2 + q[1] ** 2)
    over = nrm > radius
    scale = np.ones_like(nrm)
    scale[over] = radius / nrm[over]
    return q * scale


def tv_prox(z: np.ndarray, tau: float, n_iters: int, p0: np.ndarray | None = None):
    """``argmin_{x>=0} 0.5||x - z||^2 + tau * TV(x)`` for an ``(n, n)`` image.

    The dual variable is kept scaled by ``tau`` (pointwise norm at most
    ``tau``), which keeps the iteration well conditioned for tiny ``tau``.
    Returns the approximate minimizer and the final dual variable, which can
    be fed back as ``p0`` to warm-start the next call with the same ``tau``.
    """
    if tau <= 0:
        return np.maximum(z, 0.0), p0
    q = np.zeros((2,) + z.shape) if p0 is None else p0
    r = q
    t = 1.0
    for _ in range(n_iters):
        x = np.maximum(z - grad_adjoint(r), 0.0)
        q_new = _project_ball(r + _DUAL_STEP_SCALE * grad_op(x), tau)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        r = q_new + ((t - 1.0) / t_new) * (q_new - q)
        q, t = q_new, t_new
    return np.maximum(z - grad_adjoint(q), 0.0), q


def fista_tv(
    R: RadonOperator,
    y: np.ndarray,
    gamma: float,
    cfg: FistaConfig = FistaConfig(),
    x0: np.ndarray | None = None,
    n_iters: int | None = None,
) -> tuple[np.ndarray, FistaInfo]:
    """Monotone FISTA on the TV-regularized nonnegative least-squares objective.

    A proximal-gradient candidate replaces the iterate only if it lowers the
    objective; the momentum still follows the candidate.  This keeps the
    iterates monotone when the inner TV prox is inexact (large ``gamma``).

    With ``n_iters`` set, exactly that many iterations run and the stopping
    test is skipped, which makes the output a fixed map of ``y``.
    """
    n = R.grid.n_side
    y = np.asarray(y, dtype=np.float64)
    step = cfg.step if cfg.step is not None else 1.0 / (_LIPSCHITZ_MARGIN * R.lipschitz(50))
    tau = gamma * step

    x = np.zeros(R.grid.n_pixels) if x0 is None else np.maximum(np.asarray(x0, dtype=np.float64).ravel(), 0.0)
    Rx = R(x)
    v, Rv = x, Rx
    t = 1.0
    p = None
    f_x = 0.5 * float(np.dot(Rx - y, Rx - y)) + gamma * tv(x, n)
    blowups = 0
    info = FistaInfo(objective=f_x)
    if n_iters is not None and n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    fixed = n_iters is not None
    for k in range(1, (n_iters if fixed else cfg.max_iters) + 1):
        res_v = Rv - y
        grad = R.adjoint(res_v)
        z_img, p = tv_prox((v - step * grad).reshape(n, n), tau, cfg.inner_tv_iters, p)
        z = z_img.ravel()
        Rz = R(z)
        res = Rz - y
        smooth_z, smooth_v = 0.5 * float(np.dot(res, res)), 0.5 * float(np.dot(res_v, res_v))
        f_z = smooth_z + gamma * tv(z_img)
        if not np.isfinite(f_z):
            raise NumericalError(f"non-finite objective at iteration {k} (gamma={gamma:g})")
        dz = z - v
        bound = smooth_v + float(np.dot(grad, dz)) + float(np.dot(dz, dz)) / (2.0 * step)
        if smooth_z > bound + 1e-9 * max(smooth_v, 1.0):
            raise NumericalError(
                f"step {step:.6g} exceeds 1/||R||^2 at iteration {k} (gamma={gamma:g}); "
                "the quadratic upper bound is violated"
            )
        blowups = blowups + 1 if f_z > 10.0 * f_x and f_z - f_x > 1e-12 else 0
        if blowups >= _DIVERGENCE_PATIENCE:
            raise NumericalError(
                f"FISTA diverging at iteration {k} (gamma={gamma:g}): objective {f_z:.6g}, best {f_x:.6g}"
            )
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        accept = f_z <= f_x
        x_new, Rx_new, f_new = (z, Rz, f_z) if accept else (x, Rx, f_x)
        a, b = t / t_new, (t - 1.0) / t_new
        v = x_new + a * (z - x_new) + b * (x_new - x)
        Rv = Rx_new + a * (Rz - Rx_new) + b * (Rx_new - Rx)
        converged = not fixed and accept and abs(f_x - f_new) <= cfg.rel_tol * max(abs(f_new), 1e-300)
        x, Rx, f_x, t = x_new, Rx_new, f_new, t_new
        info.iterations = k
        info.objective = f_x
        if converged:
            info.converged = True
            break

    f_zero = 0.5 * float(np.dot(y, y))
    if info.objective > f_zero:
        log.warning("FISTA output worse than the zero image (gamma=%g); returning zeros", gamma)
        x = np.zeros_like(x)
        info.objective = f_zero
    return x, info


def reconstruct(p: TvProblem, cfg: FistaConfig = FistaConfig(), x0: np.ndarray | None = None) -> np.ndarray:
    """Approximate ``B_gamma``: the TV-regularized nonnegative least-squares image."""
    R = radon_operator(p.geometry, p.grid)
    x, _ = fista_tv(R, p.sinogram.values, p.gamma, cfg, x0)
    return x


def tikhonov_solve(A: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """``(A^T A + gamma I)^{-1} A^T b`` for small dense ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    if max(A.shape) > 64:
        raise ValueError(f"dense Tikhonov solver limited to 64x64, got {A.shape}")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    n = A.shape[1]
    M = A.T @ A + gamma * np.eye(n)
    if gamma == 0 and np.linalg.matrix_rank(M) < n:
        raise np.linalg.LinAlgError("A^T A is singular and gamma = 0")
    return np.linalg.solve(M, A.T @ b)
