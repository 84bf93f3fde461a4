"""Fixed linearly-expanding ADM backgrounds.

The conformal picture used throughout: physical metric exp(-2 Psi) g with
Psi = ln t, conformal metric g = -(alpha0/t)^2 dt^2 + g_ij dx^i dx^j on a
compactified time coordinate t > 0 whose future boundary is t -> 0+.  In
physical time tbar = 1/t this is -dtbar^2 + tbar^2 g0: linear expansion over
an arbitrary fixed spatial metric g0 (the flat-torus case recovers the
Milne-like FLRW model, lapse alpha = 1/t, zero shift).

Three time variables coexist and stay mutually consistent:

* compactified t (the coordinate of the conformal metric),
* physical tbar = 1/t,
* logarithmic T = -ln(t / t0), the solver's evolution variable.

The lapse is a function of time only (alpha = alpha0 / t) and the shift is
zero for every shipped background; a constant shift can be injected for
structure probing, which exercises the general source assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import Geometry, MetricField, build_geometry, make_metric
from .grid import Grid

# orientation of the conformal four-velocity parameterization: the sign of the
# quadratic-normalization root for nu = v^0.
FUTURE_DECREASING_T = "decreasing-t"   # physical future-pointing here: nu < 0
FUTURE_INCREASING_T = "increasing-t"   # relabeled v -> -v: nu > 0

ORIENTATIONS = (FUTURE_DECREASING_T, FUTURE_INCREASING_T)


@dataclass(frozen=True)
class AdmBackground:
    """Fixed spatial geometry plus lapse/shift/conformal-scalar profiles."""

    geometry: Geometry
    alpha0: float = 1.0                 # lapse alpha(t) = alpha0 / t
    shift: Optional[np.ndarray] = None  # beta^i, dims + (3,); None = zero
    t0: float = 1.0                     # log-time anchor T = -ln(t/t0)
    name: str = "mflrw"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.shift is not None and self.shift.shape != self.grid.dims + (3,):
            raise ValueError("shift shape mismatch")

    # -- time conventions ---------------------------------------------------
    def lapse(self, t: float) -> float:
        return self.alpha0 / t

    def dt_lapse(self, t: float) -> float:
        return -self.alpha0 / t**2

    @staticmethod
    def psi(t: float) -> float:
        """Conformal scalar Psi = ln t (spatially constant)."""
        return float(np.log(t))

    @staticmethod
    def dt_psi(t: float) -> float:
        return 1.0 / t

    def t_of_logtime(self, T: float) -> float:
        return self.t0 * float(np.exp(-T))

    def logtime_of_t(self, t: float) -> float:
        return -float(np.log(t / self.t0))

    @staticmethod
    def physical_time(t: float) -> float:
        return 1.0 / t

    # -- convenience --------------------------------------------------------
    @property
    def grid(self) -> Grid:
        return self.geometry.grid

    @property
    def metric(self) -> MetricField:
        return self.geometry.metric

    def shift_field(self) -> Optional[np.ndarray]:
        return self.shift

    def with_constant_shift(self, beta: np.ndarray) -> "AdmBackground":
        """Probe variant with a spatially constant shift vector."""
        b = np.broadcast_to(np.asarray(beta, dtype=float), self.grid.dims + (3,)).copy()
        return replace(self, shift=b, name=self.name + "+shift")

    @property
    def is_flat(self) -> bool:
        return self.metric.is_flat_constant and self.shift is None


def make_background(grid: Grid, metric_kind: str = "flat", amplitude: float = 0.0,
                    wavevector=(1, 0, 0), alpha0: float = 1.0, t0: float = 1.0,
                    scheme: str = "fd4", include_riemann: bool = False) -> AdmBackground:
    """Build a background from a named metric family."""
    metric = make_metric(grid, metric_kind, amplitude, wavevector)
    geom = build_geometry(metric, scheme, include_riemann=include_riemann)
    name = "mflrw" if metric_kind == "flat" else f"fixed-{metric_kind}"
    return AdmBackground(
        geometry=geom, alpha0=alpha0, t0=t0, name=name,
        params={"metric": metric_kind, "amplitude": amplitude,
                "wavevector": tuple(int(k) for k in wavevector), "alpha0": alpha0},
    )
