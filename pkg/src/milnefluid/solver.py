"""Method-of-lines evolution of the transformed fluid system in log time.

The evolution variable is T = -ln(t/t0): the future boundary t -> 0+ maps to
T -> +infinity and the 1/t coefficient of the compactified-time form cancels
identically (see :mod:`milnefluid.fuchsian`).  Space is discretized with
4th-order centered differences or FFT derivatives on the periodic grid;
time stepping is classical RK4.  Z = 0 is an exact fixed point of the
discrete flow: every source term is exactly zero there, so the state stays
bit-identical.

Blowup (domain-ceiling violation, loss of hyperbolicity, non-finite values)
is a recorded outcome, not an exception: the trajectory is returned with a
termination reason and the offending point.
"""

from __future__ import annotations

import json
import struct
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .background import AdmBackground, make_background
from .fluid import DomainLimits, EosParams, FluidStateZ, TransformParams
from .fuchsian import FuchsianMatrices, HyperbolicityError, assemble_fuchsian, rhs_logtime
from .geometry import norm_g_vector
from .grid import Grid, dissipation_ko6, gradient

CHECKPOINT_MAGIC = b"MFLD1\n"


@dataclass(frozen=True)
class IntegratorConfig:
    T_start: float = 0.0
    T_end: float = 5.0
    dt: float | str = "auto"      # time step in T, or "auto" for CFL control
    cfl: float = 0.8
    scheme: str = "fd4"           # fd4 | spectral
    dissipation: float = 0.0      # Kreiss-Oliger coefficient, default off
    capture_stride: int = 1       # energy/snapshot sampling interval in steps
    snapshot_stride: int = 0      # 0: first/last only

    def __post_init__(self):
        if self.T_end <= self.T_start:
            raise ValueError("T_end must exceed T_start")
        if self.T_start < 0.0:
            raise ValueError("T_start must be >= 0")
        if isinstance(self.dt, str):
            if self.dt != "auto":
                raise ValueError("dt must be a positive number or 'auto'")
        elif self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError("cfl fraction must lie in (0, 1]")
        if self.capture_stride < 1:
            raise ValueError("capture stride must be >= 1")


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    max_abs: list[float] = field(default_factory=list)
    energies: list[dict] = field(default_factory=list)
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    termination: str = "completed"
    reason: str = ""
    n_steps: int = 0
    dt: float = 0.0
    wall_time: float = 0.0

    @property
    def blewup(self) -> bool:
        return self.termination != "completed"

    def series(self, key: str) -> np.ndarray:
        return np.array([e[key] for e in self.energies])


def spatial_gradients(Zarr: np.ndarray, bg: AdmBackground, scheme: str = "fd4") -> np.ndarray:
    """Covariant gradient of the state: (..., 3, 4) with the derivative slot
    leading.  Scalar slot uses partial derivatives; the vector slot adds the
    Christoffel correction (exactly zero on flat metrics)."""
    grid = bg.grid
    psi = Zarr[..., 0]
    z = Zarr[..., 1:]
    dpsi = gradient(psi, grid, scheme)          # dims + (3,)
    dz = gradient(z, grid, scheme)              # dims + (3, 3): [a, i]
    if not bg.metric.is_flat_constant:
        gamma = bg.geometry.curv.christoffels
        dz = dz + np.einsum("...iam,...m->...ai", gamma, z)
    out = np.empty(Zarr.shape[:-1] + (3, 4))
    out[..., 0] = dpsi
    out[..., 1:] = dz
    return out


class RhsOps:
    """Right-hand-side evaluator d_T Z = rhs(Z, T) with optional test hooks.

    ``zero_source`` drops damping and F (flux-only regression runs) and
    ``freeze_m0`` pins the time matrix at its origin value; both are for
    discretization tests, never used by production runs.
    """

    def __init__(self, bg: AdmBackground, eos: EosParams, tp: TransformParams,
                 scheme: str = "fd4", dissipation: float = 0.0,
                 zero_source: bool = False, freeze_m0: bool = False):
        if bg.shift is not None:
            raise ValueError("evolution supports zero-shift backgrounds only")
        self.bg = bg
        self.eos = eos
        self.tp = tp
        self.scheme = scheme
        self.dissipation = dissipation
        self.zero_source = zero_source
        self.freeze_m0 = freeze_m0
        self._m0_frozen = None
        if freeze_m0:
            m0 = np.zeros(bg.grid.dims + (4, 4))
            m0[..., 0, 0] = 1.0
            m0[..., 1:, 1:] = bg.geometry.g / eos.K
            self._m0_frozen = m0
        self.last_fuchsian: Optional[FuchsianMatrices] = None

    def __call__(self, Zarr: np.ndarray, T: float) -> np.ndarray:
        t = self.bg.t_of_logtime(T)
        state = FluidStateZ.from_array(Zarr)
        DZ = spatial_gradients(Zarr, self.bg, self.scheme)
        fuch = assemble_fuchsian(state, self.bg, t, self.eos, self.tp,
                                 scheme=self.scheme)
        self.last_fuchsian = fuch
        if self.zero_source or self.freeze_m0:
            flux = np.einsum("...kij,...kj->...i", fuch.Ck + fuch.Mk, DZ)
            rhs = flux
            if not self.zero_source:
                rhs = rhs - fuch.damping_vec - fuch.F
            M0 = self._m0_frozen if self.freeze_m0 else fuch.M0
            out = np.linalg.solve(M0, rhs[..., None])[..., 0]
        else:
            out = rhs_logtime(state, DZ, fuch)
        if self.dissipation:
            out = out + dissipation_ko6(Zarr, self.bg.grid, self.dissipation)
        return out


def rk4_step(Zarr: np.ndarray, T: float, dt: float, rhs: Callable) -> np.ndarray:
    k1 = rhs(Zarr, T)
    k2 = rhs(Zarr + 0.5 * dt * k1, T + 0.5 * dt)
    k3 = rhs(Zarr + 0.5 * dt * k2, T + 0.5 * dt)
    k4 = rhs(Zarr + dt * k3, T + dt)
    return Zarr + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def characteristic_speed(Zarr: np.ndarray, bg: AdmBackground, eos: EosParams,
                         tp: TransformParams, T: float = 0.0,
                         max_points: int = 512) -> float:
    """Bound on |eigenvalues| of M0^{-1}(C^k + M^k) n_k over grid samples and
    coordinate directions.  At Z = 0 on the flat background this is sqrt(K)."""
    t = bg.t_of_logtime(T)
    state = FluidStateZ.from_array(Zarr)
    fuch = assemble_fuchsian(state, bg, t, eos, tp)
    M0 = fuch.M0.reshape(-1, 4, 4)
    CM = (fuch.Ck + fuch.Mk).reshape(-1, 3, 4, 4)
    npts = M0.shape[0]
    if npts > max_points:
        idx = np.linspace(0, npts - 1, max_points).astype(int)
        M0, CM = M0[idx], CM[idx]
    lam = 0.0
    for a in range(3):
        P = np.linalg.solve(M0, CM[:, a])
        ev = np.linalg.eigvals(P)
        lam = max(lam, float(np.max(np.abs(ev.real))), float(np.max(np.abs(ev))))
    return lam


def cfl_dt(Zarr: np.ndarray, bg: AdmBackground, eos: EosParams,
           tp: TransformParams, cfl: float = 0.8, T: float = 0.0) -> float:
    h = bg.grid.min_active_spacing()
    if h is None:
        raise ValueError("fully degenerate grid: provide an explicit dt")
    lam = characteristic_speed(Zarr, bg, eos, tp, T)
    return cfl * h / lam


def evolve(initial: FluidStateZ, bg: AdmBackground, eos: EosParams,
           tp: TransformParams, cfg: IntegratorConfig,
           limits: DomainLimits = DomainLimits(),
           energy_fn: Optional[Callable] = None,
           rhs_ops: Optional[RhsOps] = None) -> Trajectory:
    """Integrate the transformed system from T_start to T_end.

    ``energy_fn(state, bg, t, T) -> dict`` is sampled every capture stride;
    blowup terminates the run and is recorded on the trajectory.
    """
    t_wall = _time.perf_counter()
    rhs = rhs_ops or RhsOps(bg, eos, tp, cfg.scheme, cfg.dissipation)
    Z = initial.as_array().astype(float).copy()
    T = cfg.T_start
    if cfg.dt == "auto":
        dt = cfl_dt(Z, bg, eos, tp, cfg.cfl, T)
    else:
        dt = float(cfg.dt)

    traj = Trajectory(dt=dt)

    def capture(Tnow, Zarr):
        state = FluidStateZ.from_array(Zarr)
        traj.times.append(Tnow)
        traj.max_abs.append(float(np.max(np.abs(Zarr))) if Zarr.size else 0.0)
        if energy_fn is not None:
            traj.energies.append(energy_fn(state, bg, bg.t_of_logtime(Tnow), Tnow))

    def check_domain(Zarr) -> Optional[str]:
        state = FluidStateZ.from_array(Zarr)
        zn = norm_g_vector(state.z, bg.geometry)
        return limits.violation(state.psi, zn)

    bad = check_domain(Z)
    if bad:
        traj.termination = "invalid-initial-state"
        traj.reason = bad
        return traj

    capture(T, Z)
    traj.snapshots.append((T, Z.copy()))

    step = 0
    while T < cfg.T_end - 1e-12:
        dt_step = min(dt, cfg.T_end - T)
        try:
            Z = rk4_step(Z, T, dt_step, rhs)
        except (HyperbolicityError, FloatingPointError) as exc:
            traj.termination = "terminated-with-blowup"
            traj.reason = str(exc)
            break
        T += dt_step
        step += 1
        bad = check_domain(Z)
        if bad:
            traj.termination = "terminated-with-blowup"
            traj.reason = bad
            capture(T, Z)
            break
        if step % cfg.capture_stride == 0 or T >= cfg.T_end - 1e-12:
            capture(T, Z)
        if cfg.snapshot_stride and step % cfg.snapshot_stride == 0:
            traj.snapshots.append((T, Z.copy()))

    if not traj.blewup:
        if not traj.snapshots or traj.snapshots[-1][0] < T:
            traj.snapshots.append((T, Z.copy()))
    traj.n_steps = step
    traj.wall_time = _time.perf_counter() - t_wall
    return traj


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, Zarr: np.ndarray, bg: AdmBackground, eos: EosParams,
                    tp: TransformParams, T: float, scheme: str = "fd4") -> None:
    """Versioned binary checkpoint: magic, JSON header, then row-major
    little-endian float64 arrays (psi, then z)."""
    grid = bg.grid
    header = {
        "format": "milnefluid-checkpoint",
        "version": 1,
        "dims": list(grid.dims),
        "spacing": list(grid.spacing),
        "K": eos.K,
        "rho0": eos.rho0,
        "c1": tp.c1,
        "c2": tp.c2,
        "T": T,
        "t0": bg.t0,
        "alpha0": bg.alpha0,
        "scheme": scheme,
        "background": bg.params or {"metric": "flat"},
        "fields": ["psi", "z"],
        "dtype": "<f8",
        "order": "C",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    psi = np.ascontiguousarray(Zarr[..., 0], dtype="<f8")
    z = np.ascontiguousarray(Zarr[..., 1:], dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(psi.tobytes(order="C"))
        fh.write(z.tobytes(order="C"))


def load_checkpoint(path):
    """Returns (Zarr, background, eos, transform_params, T, scheme)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a milnefluid checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        dims = tuple(header["dims"])
        n = int(np.prod(dims))
        psi = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(dims)
        z = np.frombuffer(fh.read(8 * n * 3), dtype="<f8").reshape(dims + (3,))
    grid = Grid(dims, tuple(header["spacing"]))
    bgp = header["background"]
    bg = make_background(
        grid,
        metric_kind=bgp.get("metric", "flat"),
        amplitude=bgp.get("amplitude", 0.0),
        wavevector=tuple(bgp.get("wavevector", (1, 0, 0))),
        alpha0=header.get("alpha0", 1.0),
        t0=header.get("t0", 1.0),
    )
    eos = EosParams(K=header["K"], rho0=header.get("rho0", 1.0))
    tp = TransformParams(c1=header["c1"], c2=header["c2"])
    Zarr = np.concatenate([psi[..., None], z], axis=-1)
    return Zarr, bg, eos, tp, float(header["T"]), header.get("scheme", "fd4")
