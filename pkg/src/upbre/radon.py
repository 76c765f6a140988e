"""Discrete parallel-beam Radon transform with exact chord-length weights.

Entry ``r_ij`` of the system matrix is the length of the intersection of ray
``i`` with pixel ``j``.  Weights are computed by a Siddon-style traversal:
for each ray, the parametric positions where it crosses the grid lines are
merged and sorted, and each segment between consecutive crossings is charged
to the pixel containing its midpoint.  Pixels are half-open boxes, so a ray
running exactly along a grid line belongs to the pixel on its right (for
vertical lines) or above it (for horizontal lines), and rays along the
right or top border of the square miss the grid entirely.

The weights are assembled once per ``(geometry, grid)`` pair into a CSR
matrix; :func:`project` and :func:`backproject` are then sparse products
with that matrix and its transpose, so they are exact adjoints of each other.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import GridSpec, ScanGeometry, make_geometry

__all__ = [
    "Sinogram",
    "RadonOperator",
    "radon_operator",
    "project",
    "backproject",
    "lipschitz_estimate",
    "write_sinogram",
    "read_sinogram",
    "write_sinogram_csv",
    "SINO_MAGIC",
]

SINO_MAGIC = b"UPBRSINO"
_HEADER = struct.Struct("<8sII")

# direction cosines below this are treated as exactly zero (axis-parallel rays)
_AXIS_TOL = 1e-14


@dataclass
class Sinogram:
    """Line-integral data, one value per ray of ``geometry`` (angle-major)."""

    values: np.ndarray
    geometry: ScanGeometry
    n_clamped: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.geometry.n_rays:
            raise ValueError(
                f"sinogram has {self.values.size} values, geometry has {self.geometry.n_rays} rays"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram values must be finite")

    def as_array(self) -> np.ndarray:
        """``(n_angles, n_offsets)`` view."""
        return self.values.reshape(self.geometry.shape)


def _angle_weights(theta: float, offsets: np.ndarray, n: int):
    """Chord lengths for all rays at one angle.

    Returns ``(ray, pixel, length)`` triplets with ``ray`` local to the angle.
    """
    c, s = np.cos(theta), np.sin(theta)
    if abs(c) < _AXIS_TOL:
        c = 0.0
    if abs(s) < _AXIS_TOL:
        s = 0.0
    t = offsets
    n_rays = t.size
    # every point of the square satisfies |u| <= sqrt(2)
    lo = np.full(n_rays, -2.0)
    hi = np.full(n_rays, 2.0)
    edges = -1.0 + (2.0 / n) * np.arange(n + 1)
    edges[-1] = 1.0
    parts = []

    # x(u) = t c - u s,  y(u) = t s + u c
    if s != 0.0:
        a = (t * c + 1.0) / s
        b = (t * c - 1.0) / s
        lo = np.maximum(lo, np.minimum(a, b))
        hi = np.minimum(hi, np.maximum(a, b))
        parts.append((t[:, None] * c - edges[None, :]) / s)
    else:
        miss = np.abs(t * c) > 1.0
        hi = np.where(miss, lo, hi)
    if c != 0.0:
        a = (-1.0 - t * s) / c
        b = (1.0 - t * s) / c
        lo = np.maximum(lo, np.minimum(a, b))
        hi = np.minimum(hi, np.maximum(a, b))
        parts.append((edges[None, :] - t[:, None] * s) / c)
    else:
        miss = np.abs(t * s) > 1.0
        hi = np.where(miss, lo, hi)
    hi = np.maximum(hi, lo)

    u = np.concatenate([lo[:, None], hi[:, None]] + parts, axis=1)
    u = np.clip(u, lo[:, None], hi[:, None])
    u.sort(axis=1)
    seg = np.diff(u, axis=1)
    mid = 0.5 * (u[:, 1:] + u[:, :-1])
    xm = t[:, None] * c - mid * s
    ym = t[:, None] * s + mid * c
    col = np.floor((xm + 1.0) * (n / 2.0)).astype(np.int64)
    row = np.floor((ym + 1.0) * (n / 2.0)).astype(np.int64)
    keep = (seg > 1e-12 / n) & (col >= 0) & (col < n) & (row >= 0) & (row < n)
    ray = np.broadcast_to(np.arange(n_rays)[:, None], seg.shape)[keep]
    return ray, row[keep] * n + col[keep], seg[keep]


def build_matrix(geometry: ScanGeometry, grid: GridSpec) -> sp.csr_matrix:
    """Sparse ``(m, n_pixels)`` chord-length matrix."""
    n = grid.n_side
    rows, cols, vals = [], [], []
    for k, theta in enumerate(geometry.angles):
        ray, pix, seg = _angle_weights(float(theta), geometry.offsets, n)
        rows.append(ray + k * geometry.n_offsets)
        cols.append(pix)
        vals.append(seg)
    R = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geometry.n_rays, grid.n_pixels),
    ).tocsr()
    R.sum_duplicates()
    return R


class RadonOperator:
    """Projector/backprojector pair for a fixed geometry and grid."""

    def __init__(self, geometry: ScanGeometry, grid: GridSpec):
        self.geometry = geometry
        self.grid = grid
        self.matrix = build_matrix(geometry, grid)
        self._matrix_t = self.matrix.T.tocsr()
        self._lipschitz: dict[int, float] = {}

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=np.float64).ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self._matrix_t @ np.asarray(y, dtype=np.float64).ravel()

    def lipschitz(self, iters: int = 50) -> float:
        """Power-method estimate of ``||R||^2`` (cached per ``iters``)."""
        if iters < 1:
            raise ValueError("iters must be >= 1")
        if iters not in self._lipschitz:
            v = np.ones(self.grid.n_pixels) / np.sqrt(self.grid.n_pixels)
            est = 0.0
            for _ in range(iters):
                w = self.adjoint(self(v))
                nrm = np.linalg.norm(w)
                if nrm == 0.0:
                    break
                v = w / nrm
                est = float(np.dot(self(v), self(v)))
            self._lipschitz[iters] = est
        return self._lipschitz[iters]


@lru_cache(maxsize=8)
def radon_operator(geometry: ScanGeometry, grid: GridSpec) -> RadonOperator:
    """Cached :class:`RadonOperator` for ``(geometry, grid)``."""
    return RadonOperator(geometry, grid)


def project(x: np.ndarray, geometry: ScanGeometry, grid: GridSpec | None = None) -> Sinogram:
    """Forward projection ``Rx``.

    The grid is inferred from ``x`` when not given (``x`` must then be a
    square image or a vector of square length).
    """
    x = np.asarray(x, dtype=np.float64)
    if grid is None:
        n = int(round(np.sqrt(x.size)))
        if n * n != x.size:
            raise ValueError(f"cannot infer a square grid from {x.size} pixels")
        grid = GridSpec(n)
    return Sinogram(radon_operator(geometry, grid)(x), geometry)


def backproject(s: Sinogram, grid: GridSpec) -> np.ndarray:
    """Adjoint ``R^T s`` as a flat image vector."""
    return radon_operator(s.geometry, grid).adjoint(s.values)


def lipschitz_estimate(geometry: ScanGeometry, grid: GridSpec, iters: int = 50) -> float:
    """Largest squared singular value of ``R`` by power iteration."""
    return radon_operator(geometry, grid).lipschitz(iters)


def write_sinogram(path, sino: Sinogram) -> None:
    """Raw little-endian float64 preceded by the 16-byte ``UPBRSINO`` header."""
    g = sino.geometry
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SINO_MAGIC, g.n_angles, g.n_offsets))
        fh.write(sino.values.astype("<f8").tobytes())


def read_header(fh) -> tuple[int, int]:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated sinogram header")
    magic, n_angles, n_offsets = _HEADER.unpack(raw)
    if magic != SINO_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    return n_angles, n_offsets


def read_sinogram(path) -> Sinogram:
    """Inverse of :func:`write_sinogram`; geometry rebuilt with :func:`make_geometry`."""
    with open(path, "rb") as fh:
        n_angles, n_offsets = read_header(fh)
        values = np.frombuffer(fh.read(), dtype="<f8")
    return Sinogram(values.astype(np.float64), make_geometry(n_angles, n_offsets))


def write_sinogram_csv(path, sino: Sinogram) -> None:
    """Long-format CSV with columns ``theta, t, value``."""
    rays = sino.geometry.rays
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "t", "value"])
        for (th, t), v in zip(rays, sino.values):
            w.writerow([repr(float(th)), repr(float(t)), repr(float(v))])
