"""Image grid and parallel-beam sampling scheme.

The image lives on the square [-1, 1]^2 split into ``n_side x n_side``
half-open square pixels.  Pixel ``(i, j)`` (1-based) covers
``[-1 + (j-1)h, -1 + jh) x [-1 + (i-1)h, -1 + ih)`` with ``h = 2 / n_side``,
so ``i`` indexes rows along y and ``j`` columns along x.  Images are stored
as flat vectors in lexicographic order, ``index = n_side*(i-1) + j``, which
with 0-based numpy indexing is ``x.reshape(n_side, n_side)[i-1, j-1]``.

Rays are indexed angle-major: all offsets for the first angle, then all
offsets for the second angle, and so on.  A sinogram therefore reshapes to
``(n_angles, n_offsets)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GridSpec", "ScanGeometry", "make_geometry", "make_paper_geometry"]


@dataclass(frozen=True)
class GridSpec:
    """Square pixel grid over [-1, 1]^2."""

    n_side: int

    def __post_init__(self):
        if int(self.n_side) != self.n_side or self.n_side < 1:
            raise ValueError(f"n_side must be a positive integer, got {self.n_side!r}")

    @property
    def n_pixels(self) -> int:
        return self.n_side * self.n_side

    @property
    def pixel_width(self) -> float:
        return 2.0 / self.n_side

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_side, self.n_side)

    def index(self, i: int, j: int) -> int:
        """1-based lexicographic index of pixel (i, j)."""
        if not (1 <= i <= self.n_side and 1 <= j <= self.n_side):
            raise IndexError(f"pixel ({i}, {j}) outside a {self.n_side}x{self.n_side} grid")
        return self.n_side * (i - 1) + j

    def pixel(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`index`."""
        if not 1 <= index <= self.n_pixels:
            raise IndexError(f"index {index} outside 1..{self.n_pixels}")
        i, j = divmod(index - 1, self.n_side)
        return i + 1, j + 1

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates ``(X, Y)`` as ``(n_side, n_side)`` arrays."""
        h = self.pixel_width
        c = -1.0 + h * (np.arange(self.n_side) + 0.5)
        X, Y = np.meshgrid(c, c)  # Y varies along rows, X along columns
        return X, Y


@dataclass(frozen=True, eq=False)
class ScanGeometry:
    """Ray set Theta x T.

    Ray ``k`` is the line through ``t_k (cos a_k, sin a_k)`` with direction
    ``(-sin a_k, cos a_k)``.
    """

    angles: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        angles = np.array(self.angles, dtype=np.float64).ravel()
        offsets = np.array(self.offsets, dtype=np.float64).ravel()
        if angles.size < 1 or offsets.size < 1:
            raise ValueError("geometry needs at least one angle and one offset")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("angles must be strictly increasing")
        if np.any(np.diff(offsets) <= 0):
            raise ValueError("offsets must be strictly increasing")
        angles.flags.writeable = False
        offsets.flags.writeable = False
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "offsets", offsets)

    def __eq__(self, other):
        if not isinstance(other, ScanGeometry):
            return NotImplemented
        return np.array_equal(self.angles, other.angles) and np.array_equal(
            self.offsets, other.offsets
        )

    def __hash__(self):
        return hash((self.angles.tobytes(), self.offsets.tobytes()))

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def n_offsets(self) -> int:
        return self.offsets.size

    @property
    def n_rays(self) -> int:
        return self.n_angles * self.n_offsets

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_offsets)

    @property
    def rays(self) -> np.ndarray:
        """``(m, 2)`` array of ``(theta, t)`` pairs in angle-major order."""
        th = np.repeat(self.angles, self.n_offsets)
        t = np.tile(self.offsets, self.n_angles)
        return np.column_stack([th, t])


def make_geometry(n_angles: int, n_offsets: int) -> ScanGeometry:
    """Angles ``k*pi/n_angles`` for ``k < n_angles`` and ``n_offsets``
    equally spaced offsets on [-1, 1], endpoints included."""
    if n_angles < 1:
        raise ValueError(f"n_angles must be >= 1, got {n_angles}")
    if n_offsets < 2:
        raise ValueError(f"n_offsets must be >= 2, got {n_offsets}")
    angles = np.arange(n_angles) * (np.pi / n_angles)
    offsets = -1.0 + np.arange(n_offsets) * (2.0 / (n_offsets - 1))
    offsets[-1] = 1.0
    return ScanGeometry(angles, offsets)


def make_paper_geometry() -> ScanGeometry:
    """The full-size 512 angles x 2048 offsets scan (m = 1048576)."""
    return make_geometry(512, 2048)
