"""Fixed Riemannian 3-geometry on the periodic grid.

Computes Christoffel symbols, curvature, covariant derivatives and integrals
against the Riemannian measure for an arbitrary smooth metric given as a grid
field.  Curvature is obtained by numerically differentiating the Christoffel
symbols, so user-supplied metrics need no symbolic form; the analytic families
in :func:`make_metric` provide closed-form oracles for testing.

Index conventions (grid axes first, tensor axes trailing):

* metric ``g[..., i, j]``
* Christoffels ``gamma[..., k, i, j]`` = gamma^k_ij, symmetric in (i, j)
* Riemann ``riem[..., i, j, k, l]`` = R^i_jkl = d_k gamma^i_lj - d_l gamma^i_kj
  + gamma^i_km gamma^m_lj - gamma^i_lm gamma^m_kj
* Ricci ``ric[..., i, j]`` = R^k_ikj, scalar ``R = g^ij R_ij``

A covariant derivative prepends one lower index: for input index structure
``idx`` the output has structure ``('d',) + idx``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import Grid, gradient

IndexTypes = tuple[str, ...]  # entries 'u' (contravariant) or 'd' (covariant)

MAX_INPUT_RANK = 4


class SingularMetricError(ValueError):
    """Metric not invertible (or not positive definite) at some grid point."""


class ValenceError(ValueError):
    pass


@dataclass(frozen=True)
class MetricField:
    """Spatial metric g_ij on a grid, with optional time derivative d_t g_ij.

    All shipped backgrounds are static (``dt_g is None``); the time-derivative
    slot exists so the exact source assembly stays general.
    """

    grid: Grid
    g: np.ndarray                      # dims + (3, 3)
    dt_g: Optional[np.ndarray] = None  # dims + (3, 3) or None for static

    def __post_init__(self):
        expect = self.grid.dims + (3, 3)
        if self.g.shape != expect:
            raise ValueError(f"metric shape {self.g.shape}, expected {expect}")
        if not np.allclose(self.g, np.swapaxes(self.g, -1, -2), rtol=0.0, atol=1e-13):
            raise ValueError("metric must be symmetric")

    def inverse(self) -> np.ndarray:
        det = np.linalg.det(self.g)
        if np.any(det <= 0.0):
            bad = np.unravel_index(int(np.argmin(det)), self.grid.dims)
            raise SingularMetricError(f"metric not positive definite at point {bad}")
        return np.linalg.inv(self.g)

    def sqrt_det(self) -> np.ndarray:
        det = np.linalg.det(self.g)
        if np.any(det <= 0.0):
            bad = np.unravel_index(int(np.argmin(det)), self.grid.dims)
            raise SingularMetricError(f"metric not positive definite at point {bad}")
        return np.sqrt(det)

    @property
    def is_flat_constant(self) -> bool:
        g0 = self.g.reshape(-1, 3, 3)[0]
        return bool(np.all(self.g == g0))


@dataclass(frozen=True)
class CurvatureField:
    """Christoffels and curvature of a fixed metric.

    ``riemann_reconstructed`` carries the 3D Ricci-decomposition rebuild of the
    (fully lowered) Riemann tensor from Ricci alone; comparing it against the
    directly assembled tensor is a cross-check on the curvature pipeline.
    """

    christoffels: np.ndarray                      # dims + (3,3,3)
    riemann: Optional[np.ndarray] = None          # dims + (3,3,3,3), R^i_jkl
    ricci: Optional[np.ndarray] = None            # dims + (3,3)
    scalar: Optional[np.ndarray] = None           # dims
    riemann_reconstructed: Optional[np.ndarray] = None  # dims + (3,3,3,3), R_ijkl


@dataclass(frozen=True)
class Geometry:
    """Metric plus everything derived from it that assemblies reuse."""

    metric: MetricField
    ginv: np.ndarray
    sqrtg: np.ndarray
    curv: CurvatureField

    @property
    def grid(self) -> Grid:
        return self.metric.grid

    @property
    def g(self) -> np.ndarray:
        return self.metric.g


def christoffels_from_metric(metric: MetricField, scheme: str = "fd4") -> np.ndarray:
    """gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij).

    Constant metrics short-circuit to exact zeros: the analytic Christoffels
    vanish, so finite differencing must not introduce round-off there.
    """
    grid = metric.grid
    if metric.is_flat_constant:
        return np.zeros(grid.dims + (3, 3, 3))
    ginv = metric.inverse()
    dg = gradient(metric.g, grid, scheme)  # dims + (3, 3, 3): [a, i, j] = d_a g_ij
    # [i, j, l] block: d_i g_jl + d_j g_il - d_l g_ij
    term = dg + np.swapaxes(dg, 3, 4) - np.moveaxis(dg, 3, 5)
    return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, term)


def riemann_ricci(metric: MetricField, scheme: str = "fd4",
                  include_riemann: bool = True) -> CurvatureField:
    """Curvature from numerically differentiated Christoffels.

    With ``include_riemann=False`` only Ricci/scalar are assembled (direct
    contraction), which keeps large grids cheap.
    """
    grid = metric.grid
    gamma = christoffels_from_metric(metric, scheme)
    if metric.is_flat_constant:
        zero4 = np.zeros(grid.dims + (3, 3, 3, 3))
        zero2 = np.zeros(grid.dims + (3, 3))
        return CurvatureField(
            christoffels=gamma,
            riemann=zero4 if include_riemann else None,
            ricci=zero2,
            scalar=np.zeros(grid.dims),
            riemann_reconstructed=zero4 if include_riemann else None,
        )

    dgamma = gradient(gamma, grid, scheme)  # dims + (3, 3,3,3): [a, k, i, j]
    ginv = metric.inverse()

    if include_riemann:
        # R^i_jkl = d_k gamma^i_lj - d_l gamma^i_kj + gamma^i_km gamma^m_lj - gamma^i_lm gamma^m_kj
        riem = (
            np.einsum("...kilj->...ijkl", dgamma)
            - np.einsum("...likj->...ijkl", dgamma)
            + np.einsum("...ikm,...mlj->...ijkl", gamma, gamma)
            - np.einsum("...ilm,...mkj->...ijkl", gamma, gamma)
        )
        ric = np.einsum("...kikj->...ij", riem)
    else:
        riem = None
        ric = (
            np.einsum("...kklj->...lj", dgamma)
            - np.einsum("...lkkj->...lj", dgamma)
            + np.einsum("...kkm,...mlj->...lj", gamma, gamma)
            - np.einsum("...klm,...mkj->...lj", gamma, gamma)
        )
        # rename: contraction gives R_lj with l as first free index
    scalar = np.einsum("...ij,...ij->...", ginv, ric)

    recon = None
    if include_riemann:
        g = metric.g
        V = -ric + (scalar[..., None, None] / 3.0) * g
        recon = (
            -(scalar[..., None, None, None, None] / 6.0)
            * (np.einsum("...il,...jk->...ijkl", g, g) - np.einsum("...ik,...jl->...ijkl", g, g))
            + np.einsum("...il,...jk->...ijkl", V, g)
            - np.einsum("...jl,...ik->...ijkl", V, g)
            - np.einsum("...ik,...jl->...ijkl", V, g)
            + np.einsum("...jk,...il->...ijkl", V, g)
        )
    return CurvatureField(christoffels=gamma, riemann=riem, ricci=ric,
                          scalar=scalar, riemann_reconstructed=recon)


def build_geometry(metric: MetricField, scheme: str = "fd4",
                   include_riemann: bool = False) -> Geometry:
    return Geometry(
        metric=metric,
        ginv=metric.inverse(),
        sqrtg=metric.sqrt_det(),
        curv=riemann_ricci(metric, scheme, include_riemann=include_riemann),
    )


def covariant_derivative(data: np.ndarray, idx: IndexTypes, geom: Geometry,
                         scheme: str = "fd4") -> tuple[np.ndarray, IndexTypes]:
    """Levi-Civita covariant derivative; prepends one lower index.

    Supports any mix of up/down indices up to total input rank 4.  On a flat
    constant metric this reduces bit-for-bit to the partial-derivative stencil
    because the Christoffel field is exactly zero.
    """
    if len(idx) != data.ndim - 3:
        raise ValenceError(f"index list {idx} does not match array rank {data.ndim - 3}")
    if len(idx) > MAX_INPUT_RANK:
        raise ValenceError(f"rank {len(idx)} input not supported (max {MAX_INPUT_RANK})")
    if any(t not in ("u", "d") for t in idx):
        raise ValenceError(f"bad index types {idx}")

    grid = geom.grid
    out = gradient(data, grid, scheme)  # dims + (3,) + idx-shape
    gamma = geom.curv.christoffels
    if geom.metric.is_flat_constant:
        return out, ("d",) + tuple(idx)

    letters = "ijklm"
    for p, t in enumerate(idx):
        # tensor axis p sits at array axis 4 + p of `out`, 3 + p of `data`
        names = [letters[q] for q in range(len(idx))]
        src = "".join(names)
        if t == "u":
            # + gamma^i_am T^{...m...}
            names_m = names.copy()
            names_m[p] = "m"
            corr = np.einsum(f"...{names[p]}am,...{''.join(names_m)}->...a{src}",
                             gamma, data)
            out = out + corr
        else:
            # - gamma^m_ai T_{...m...}
            names_m = names.copy()
            names_m[p] = "m"
            corr = np.einsum(f"...ma{names[p]},...{''.join(names_m)}->...a{src}",
                             gamma, data)
            out = out - corr
    return out, ("d",) + tuple(idx)


def integrate(f: np.ndarray, geom: Geometry) -> float:
    """integral of a scalar field against the Riemannian measure sqrt(det g) dx.

    On the uniform periodic grid the trapezoid rule degenerates to a plain sum
    times the coordinate cell volume (spectrally accurate for smooth data).
    """
    return float(np.sum(f * geom.sqrtg) * geom.grid.cell_volume)


def norm_g_vector(z: np.ndarray, geom_or_g) -> np.ndarray:
    """Pointwise |z|_g for a contravariant vector field."""
    g = geom_or_g.g if hasattr(geom_or_g, "g") else geom_or_g
    return np.sqrt(np.einsum("...ij,...i,...j->...", g, z, z))


def commutator_defect(psi: np.ndarray, z: np.ndarray, geom: Geometry,
                      scheme: str = "fd4") -> tuple[float, float]:
    """Two routes to the first-order curvature commutator integral.

    direct    = int g^mn grad_m psi (nab_n nab_a - nab_a nab_n) z^a dmu_g
    via_ricci = -int g^mn grad_m psi Ric_bn z^b dmu_g

    Both vanish identically on flat metrics; on curved metrics they agree in
    the continuum, so their difference converges to zero at the order of the
    derivative scheme under grid refinement.
    """
    dpsi = gradient(psi, geom.grid, scheme)           # dims + (3,)
    dz, _ = covariant_derivative(z, ("u",), geom, scheme)          # [a, i]
    ddz, _ = covariant_derivative(dz, ("d", "u"), geom, scheme)    # [n, a, i]
    comm = np.einsum("...naa->...n", ddz) - np.einsum("...ana->...n", ddz)
    direct = integrate(np.einsum("...mn,...m,...n->...", geom.ginv, dpsi, comm), geom)
    ric = geom.curv.ricci
    via = -integrate(np.einsum("...mn,...m,...bn,...b->...", geom.ginv, dpsi, ric, z), geom)
    return direct, via


# ---------------------------------------------------------------------------
# analytic metric families


def make_metric(grid: Grid, kind: str = "flat", amplitude: float = 0.0,
                wavevector=(1, 0, 0)) -> MetricField:
    """Named metric families used in configs and tests.

    * ``flat``: g = delta
    * ``conformal-bump``: g = exp(2 phi) delta with phi = amplitude * sin(k.x)
      for an integer mode vector k (periodic on the torus).
    """
    if kind == "flat":
        g = np.broadcast_to(np.eye(3), grid.dims + (3, 3)).copy()
        return MetricField(grid, g)
    if kind == "conformal-bump":
        phi = conformal_bump_phi(grid, amplitude, wavevector)
        g = np.exp(2.0 * phi)[..., None, None] * np.eye(3)
        return MetricField(grid, g)
    raise ValueError(f"unknown metric kind {kind!r}")


def conformal_bump_phi(grid: Grid, amplitude: float, wavevector=(1, 0, 0)) -> np.ndarray:
    xs = grid.coordinates()
    phase = sum(int(k) * x for k, x in zip(wavevector, xs))
    return amplitude * np.sin(phase)


def conformal_christoffels_exact(grid: Grid, amplitude: float,
                                 wavevector=(1, 0, 0)) -> np.ndarray:
    """Closed-form Christoffels of g = exp(2 phi) delta:

    gamma^k_ij = delta^k_i d_j phi + delta^k_j d_i phi - delta_ij delta^kl d_l phi.
    """
    xs = grid.coordinates()
    phase = sum(int(k) * x for k, x in zip(wavevector, xs))
    dphi = np.stack([amplitude * int(k) * np.cos(phase) for k in wavevector], axis=-1)
    eye = np.eye(3)
    gam = (
        np.einsum("ki,...j->...kij", eye, dphi)
        + np.einsum("kj,...i->...kij", eye, dphi)
        - np.einsum("ij,...k->...kij", eye, dphi)
    )
    return gam


def conformal_ricci_exact(grid: Grid, amplitude: float,
                          wavevector=(1, 0, 0)) -> np.ndarray:
    """Closed-form Ricci of g = exp(2 phi) delta in three dimensions:

    R_ij = -(d_i d_j phi - d_i phi d_j phi) - delta_ij (lap phi + |grad phi|^2),

    with flat derivatives of phi.
    """
    xs = grid.coordinates()
    phase = sum(int(k) * x for k, x in zip(wavevector, xs))
    k = np.array([float(v) for v in wavevector])
    dphi = np.stack([amplitude * kv * np.cos(phase) for kv in k], axis=-1)
    hess = -amplitude * np.sin(phase)[..., None, None] * np.einsum("i,j->ij", k, k)
    lap = np.einsum("...ii->...", hess)
    grad2 = np.einsum("...i,...i->...", dphi, dphi)
    eye = np.eye(3)
    return (
        -(hess - np.einsum("...i,...j->...ij", dphi, dphi))
        - (lap + grad2)[..., None, None] * eye
    )
