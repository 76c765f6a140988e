"""Beer-Lambert transmission model, Poisson count simulation and log-correction.

Expected counts on ray ``i`` for an attenuation image ``x`` are
``A_i(x) = d_i + f_i * exp(-(Rx)_i)`` with flat field ``f`` and dark field ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec, ScanGeometry, make_geometry
from .radon import _HEADER, SINO_MAGIC, Sinogram, radon_operator, read_header

__all__ = [
    "MeasurementSet",
    "ForwardModel",
    "forward",
    "simulate_counts",
    "log_correct",
    "uniform_model",
    "write_measurements",
    "read_measurements",
    "CLAMP_FLOOR",
    "MAX_POISSON_MEAN",
]

CLAMP_FLOOR = 0.5
MAX_POISSON_MEAN = 1e15
_BLOCK = 4096  # rays per independent RNG stream


def _check_fields(m: int, flat: np.ndarray, dark: np.ndarray) -> None:
    if flat.size != m or dark.size != m:
        raise ValueError(f"flat/dark must have {m} entries, got {flat.size}/{dark.size}")
    if not np.all(flat > 0):
        raise ValueError("flat field must be strictly positive")
    if not np.all(dark >= 0):
        raise ValueError("dark field must be nonnegative")


@dataclass
class MeasurementSet:
    """Photon counts with their flat and dark calibration fields.

    Counts are stored as floats so that perturbed data ``b + eps*omega`` can
    be pushed through the same pipeline.
    """

    counts: np.ndarray
    flat: np.ndarray
    dark: np.ndarray
    geometry: ScanGeometry

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64).ravel()
        self.flat = np.broadcast_to(np.asarray(self.flat, dtype=np.float64), self.counts.shape).copy()
        self.dark = np.broadcast_to(np.asarray(self.dark, dtype=np.float64), self.counts.shape).copy()
        if self.counts.size != self.geometry.n_rays:
            raise ValueError(f"{self.counts.size} counts for {self.geometry.n_rays} rays")
        _check_fields(self.counts.size, self.flat, self.dark)

    def with_counts(self, counts: np.ndarray) -> "MeasurementSet":
        return MeasurementSet(counts, self.flat, self.dark, self.geometry)

    def scaled(self, photon_scale: float) -> "MeasurementSet":
        """Divide all three measurements by ``photon_scale`` (detector yield correction)."""
        if photon_scale <= 0:
            raise ValueError("photon_scale must be positive")
        return MeasurementSet(
            self.counts / photon_scale, self.flat / photon_scale, self.dark / photon_scale, self.geometry
        )


@dataclass
class ForwardModel:
    geometry: ScanGeometry
    flat: np.ndarray
    dark: np.ndarray

    def __post_init__(self):
        m = self.geometry.n_rays
        self.flat = np.broadcast_to(np.asarray(self.flat, dtype=np.float64), (m,)).copy()
        self.dark = np.broadcast_to(np.asarray(self.dark, dtype=np.float64), (m,)).copy()
        _check_fields(m, self.flat, self.dark)

    def from_sinogram(self, y: np.ndarray) -> np.ndarray:
        """Expected counts for given line integrals."""
        return self.dark + self.flat * np.exp(-np.asarray(y, dtype=np.float64))


def uniform_model(geometry: ScanGeometry, flux: float, dark: float = 0.0) -> ForwardModel:
    """Constant flat field ``flux`` and dark field ``dark`` on every ray."""
    return ForwardModel(geometry, np.full(geometry.n_rays, float(flux)), np.full(geometry.n_rays, float(dark)))


def _grid_for(x: np.ndarray) -> GridSpec:
    n = int(round(np.sqrt(x.size)))
    if n * n != x.size:
        raise ValueError(f"image of {x.size} pixels is not square")
    return GridSpec(n)


def forward(model: ForwardModel, x: np.ndarray, grid: GridSpec | None = None) -> np.ndarray:
    """``d + f * exp(-Rx)`` componentwise."""
    x = np.asarray(x, dtype=np.float64).ravel()
    grid = grid or _grid_for(x)
    return model.from_sinogram(radon_operator(model.geometry, grid)(x))


def simulate_counts(
    model: ForwardModel, x_true: np.ndarray, seed: int, grid: GridSpec | None = None
) -> MeasurementSet:
    """Independent Poisson counts with mean ``forward(model, x_true)``.

    Rays are split into fixed blocks, each with its own Philox stream keyed
    by ``(seed, block)``, so the draw for a ray does not depend on how the
    work is scheduled.
    """
    mean = forward(model, x_true, grid)
    if np.any(mean > MAX_POISSON_MEAN):
        raise ValueError(f"Poisson mean {mean.max():.3g} exceeds {MAX_POISSON_MEAN:g}")
    counts = np.empty_like(mean)
    for k, start in enumerate(range(0, mean.size, _BLOCK)):
        ss = np.random.SeedSequence(seed, spawn_key=(k,))
        rng = np.random.Generator(np.random.Philox(ss))
        counts[start:start + _BLOCK] = rng.poisson(mean[start:start + _BLOCK])
    return MeasurementSet(counts, model.flat, model.dark, model.geometry)


def log_correct(mset: MeasurementSet, clamp_floor: float = CLAMP_FLOOR) -> Sinogram:
    """``-log((b - d) / f)`` with ``b - d`` clamped below at ``clamp_floor``.

    The number of clamped rays is recorded on the returned sinogram.
    """
    net = mset.counts - mset.dark
    low = net < clamp_floor
    y = -np.log(np.maximum(net, clamp_floor) / mset.flat)
    return Sinogram(y, mset.geometry, n_clamped=int(np.count_nonzero(low)))


_TAGS = (b"b", b"f", b"d")


def write_measurements(path, mset: MeasurementSet) -> None:
    """Sinogram header, then for each of counts/flat/dark a tag byte
    (``b``, ``f``, ``d``) followed by ``m`` little-endian float64 values."""
    g = mset.geometry
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SINO_MAGIC, g.n_angles, g.n_offsets))
        for tag, arr in zip(_TAGS, (mset.counts, mset.flat, mset.dark)):
            fh.write(tag)
            fh.write(arr.astype("<f8").tobytes())


def read_measurements(path) -> MeasurementSet:
    with open(path, "rb") as fh:
        n_angles, n_offsets = read_header(fh)
        m = n_angles * n_offsets
        fields = {}
        for _ in range(3):
            tag = fh.read(1)
            if tag not in _TAGS:
                raise ValueError(f"unknown measurement field tag {tag!r}")
            raw = fh.read(8 * m)
            if len(raw) != 8 * m:
                raise ValueError("truncated measurement file")
            fields[tag] = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    missing = set(_TAGS) - set(fields)
    if missing:
        raise ValueError(f"missing measurement fields {sorted(missing)}")
    return MeasurementSet(fields[b"b"], fields[b"f"], fields[b"d"], make_geometry(n_angles, n_offsets))
