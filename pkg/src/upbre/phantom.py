"""Ellipse phantoms rasterized at pixel centers, plus image file output."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec

__all__ = [
    "Ellipse",
    "EllipsePhantom",
    "SHEPP_LOGAN",
    "MODIFIED_SHEPP_LOGAN",
    "shepp_logan",
    "load_phantom",
    "render",
    "block_average",
    "load_phantom_csv",
    "save_phantom_csv",
    "write_pgm",
    "write_raw",
    "read_raw",
]


@dataclass(frozen=True)
class Ellipse:
    center_x: float
    center_y: float
    semi_axis_a: float  # along x before rotation
    semi_axis_b: float  # along y before rotation
    rotation_deg: float
    intensity: float

    def __post_init__(self):
        if self.semi_axis_a <= 0 or self.semi_axis_b <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def contains(self, x, y):
        phi = np.deg2rad(self.rotation_deg)
        dx = np.asarray(x) - self.center_x
        dy = np.asarray(y) - self.center_y
        xr = dx * np.cos(phi) + dy * np.sin(phi)
        yr = -dx * np.sin(phi) + dy * np.cos(phi)
        return (xr / self.semi_axis_a) ** 2 + (yr / self.semi_axis_b) ** 2 <= 1.0


@dataclass(frozen=True)
class EllipsePhantom:
    ellipses: tuple[Ellipse, ...]

    def value(self, x, y):
        """Sum of intensities of the ellipses containing each point."""
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        for e in self.ellipses:
            out += e.intensity * e.contains(x, y)
        return out

    @property
    def max_abs_intensity(self) -> float:
        return max((abs(e.intensity) for e in self.ellipses), default=0.0)


# (cx, cy, a, b, rotation in degrees, additive intensity); original head phantom
_SL_TABLE = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
]
# high-contrast variant: same ellipses, intensities rescaled for display
_MODIFIED_INTENSITIES = [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]

SHEPP_LOGAN = EllipsePhantom(tuple(Ellipse(*row) for row in _SL_TABLE))
MODIFIED_SHEPP_LOGAN = EllipsePhantom(
    tuple(Ellipse(*row[:5], v) for row, v in zip(_SL_TABLE, _MODIFIED_INTENSITIES))
)


def shepp_logan(modified: bool = False) -> EllipsePhantom:
    return MODIFIED_SHEPP_LOGAN if modified else SHEPP_LOGAN


def load_phantom(name: str) -> EllipsePhantom:
    """``shepp-logan``, ``modified`` (modified Shepp-Logan) or a CSV path."""
    key = name.strip().lower()
    if key in ("shepp-logan", "shepp_logan"):
        return SHEPP_LOGAN
    if key in ("modified", "modified-shepp-logan"):
        return MODIFIED_SHEPP_LOGAN
    return load_phantom_csv(name)


def render(p: EllipsePhantom, grid: GridSpec) -> np.ndarray:
    """Sample the phantom at pixel centers; returns a flat lexicographic vector."""
    X, Y = grid.centers()
    return p.value(X, Y).ravel()


def block_average(x: np.ndarray, grid: GridSpec, factor: int) -> np.ndarray:
    """Average ``factor x factor`` pixel blocks of a flat image on ``grid``."""
    n = grid.n_side
    if factor < 1 or n % factor:
        raise ValueError(f"factor {factor} does not divide grid size {n}")
    m = n // factor
    img = np.asarray(x, dtype=np.float64).reshape(m, factor, m, factor)
    return img.mean(axis=(1, 3)).ravel()


def load_phantom_csv(path) -> EllipsePhantom:
    """Read ellipse rows ``center_x,center_y,semi_axis_a,semi_axis_b,rotation_deg,intensity``.

    A header row is optional; blank lines and ``#`` comments are skipped.
    """
    ellipses = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if not ellipses:  # header
                    continue
                raise
            if len(vals) != 6:
                raise ValueError(f"ellipse row needs 6 fields, got {len(vals)}: {row}")
            ellipses.append(Ellipse(*vals))
    return EllipsePhantom(tuple(ellipses))


def save_phantom_csv(path, p: EllipsePhantom) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["center_x", "center_y", "semi_axis_a", "semi_axis_b", "rotation_deg", "intensity"])
        for e in p.ellipses:
            w.writerow([repr(float(v)) for v in (e.center_x, e.center_y, e.semi_axis_a,
                                                 e.semi_axis_b, e.rotation_deg, e.intensity)])


def write_pgm(path, x: np.ndarray, n_side: int | None = None) -> None:
    """16-bit binary PGM, min-max scaled to 0..65535.

    The top row of the file is the highest-y pixel row so that the image
    displays upright.
    """
    x = np.asarray(x, dtype=np.float64)
    if n_side is None:
        n_side = int(round(np.sqrt(x.size)))
    img = x.reshape(n_side, n_side)[::-1]
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    data = np.rint(scaled * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n_side} {n_side}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_raw(path, x: np.ndarray) -> None:
    """Little-endian float64, lexicographic pixel order, no header."""
    with open(path, "wb") as fh:
        fh.write(np.asarray(x, dtype="<f8").ravel().tobytes())


def read_raw(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").astype(np.float64)
