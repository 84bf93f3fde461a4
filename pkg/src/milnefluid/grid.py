"""Periodic grids and discrete derivative operators.

Fields live on a uniform periodic grid covering a 3-torus.  Array layout is
grid-first: a scalar field has shape ``dims``, a vector field ``dims + (3,)``,
a rank-2 tensor ``dims + (3, 3)`` and so on.  Degenerate axes (one point) are
legal and carry identically zero derivatives, which makes 1D/2D reductions
cheap without special cases downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STENCIL_WIDTH = 4  # minimum points per active axis for the fd4 stencil


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the 3-torus."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        if len(self.dims) != 3 or len(self.spacing) != 3:
            raise GridError("grid needs exactly three axes")
        for n, h in zip(self.dims, self.spacing):
            if n < 1:
                raise GridError(f"axis dimension {n} < 1")
            if n > 1 and n < STENCIL_WIDTH:
                raise GridError(f"active axis needs >= {STENCIL_WIDTH} points, got {n}")
            if h <= 0:
                raise GridError(f"spacing {h} <= 0")

    @classmethod
    def periodic(cls, dims, lengths=(2.0 * np.pi,) * 3) -> "Grid":
        """Grid covering [0, L) per axis; spacing L/n (degenerate axes get L)."""
        dims = tuple(int(n) for n in dims)
        spacing = tuple(L / n for n, L in zip(dims, lengths))
        return cls(dims, spacing)

    @property
    def active_axes(self) -> tuple[int, ...]:
        return tuple(a for a, n in enumerate(self.dims) if n > 1)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def coordinates(self):
        """Coordinate arrays x^1, x^2, x^3, each of shape ``dims``."""
        axes = [np.arange(n) * h for n, h in zip(self.dims, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    def min_active_spacing(self) -> float | None:
        act = self.active_axes
        if not act:
            return None
        return min(self.spacing[a] for a in act)


def _roll(f: np.ndarray, shift: int, axis: int) -> np.ndarray:
    return np.roll(f, shift, axis=axis)


def deriv_fd4(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """4th-order centered first derivative along a grid axis (periodic)."""
    if grid.dims[axis] == 1:
        return np.zeros_like(f)
    h = grid.spacing[axis]
    return (
        _roll(f, 2, axis) - 8.0 * _roll(f, 1, axis)
        + 8.0 * _roll(f, -1, axis) - _roll(f, -2, axis)
    ) / (12.0 * h)


def deriv_spectral(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """FFT first derivative along a grid axis; exact for resolved modes."""
    n = grid.dims[axis]
    if n == 1:
        return np.zeros_like(f)
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.spacing[axis])
    shape = [1] * f.ndim
    shape[axis] = n
    fk = np.fft.fft(f, axis=axis)
    dfk = 1j * k.reshape(shape) * fk
    # the Nyquist mode of an odd derivative is killed to keep output real
    if n % 2 == 0:
        idx = [slice(None)] * f.ndim
        idx[axis] = n // 2
        dfk[tuple(idx)] = 0.0
    return np.real(np.fft.ifft(dfk, axis=axis))


_SCHEMES = {"fd4": deriv_fd4, "spectral": deriv_spectral}


def partial_derivative(f: np.ndarray, axis: int, grid: Grid, scheme: str = "fd4") -> np.ndarray:
    try:
        op = _SCHEMES[scheme]
    except KeyError:
        raise GridError(f"unknown derivative scheme {scheme!r}") from None
    return op(f, axis, grid)


def gradient(f: np.ndarray, grid: Grid, scheme: str = "fd4") -> np.ndarray:
    """All three partial derivatives, stacked on a new trailing axis ... -> (..., 3).

    The derivative index is appended *after* the grid axes but before any
    existing tensor indices, matching the covariant-derivative convention of
    :mod:`milnefluid.geometry`: for input shape dims + idx the output is
    dims + (3,) + idx.
    """
    out = np.stack([partial_derivative(f, a, grid, scheme) for a in range(3)], axis=3)
    return out


def dissipation_ko6(f: np.ndarray, grid: Grid, sigma: float) -> np.ndarray:
    """Kreiss-Oliger style 6th-difference dissipation (damping for sigma > 0)."""
    out = np.zeros_like(f)
    if sigma == 0.0:
        return out
    for a in grid.active_axes:
        h = grid.spacing[a]
        st = (
            _roll(f, 3, a) - 6.0 * _roll(f, 2, a) + 15.0 * _roll(f, 1, a)
            - 20.0 * f
            + 15.0 * _roll(f, -1, a) - 6.0 * _roll(f, -2, a) + _roll(f, -3, a)
        )
        out += (sigma / (64.0 * h)) * st
    return out


@dataclass(frozen=True)
class FieldPack:
    """Convenience bundle used by tests: named fields on one grid."""

    grid: Grid
    fields: dict = field(default_factory=dict)
