"""Run configuration: strict YAML loading, validation, canonical dumping.

Every acceptance experiment is a single config file; unknown keys are fatal
(typos in mathematical constants must not pass silently).  ``config_dump``
produces a canonical text whose SHA-256 is stamped into all emitted results
for provenance, and load -> dump -> load is the identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import yaml

from .background import AdmBackground, make_background
from .fluid import DomainLimits, EosParams, TransformParams
from .grid import Grid
from .solver import IntegratorConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class BackgroundConfig:
    metric: str = "flat"
    amplitude: float = 0.0
    wavevector: tuple[int, int, int] = (1, 0, 0)
    alpha0: float = 1.0
    t0: float = 1.0


@dataclass(frozen=True)
class GridConfig:
    dims: tuple[int, int, int] = (16, 16, 16)
    lengths: tuple[float, float, float] = (2 * np.pi, 2 * np.pi, 2 * np.pi)


@dataclass(frozen=True)
class ModeSpec:
    wavevector: tuple[int, int, int] = (1, 0, 0)
    amplitude: float = 1e-3
    slot: str = "z1"            # psi | z1 | z2 | z3
    phase: float = 0.0


@dataclass(frozen=True)
class InitialDataConfig:
    kind: str = "homogeneous"   # homogeneous | fourier-modes | random-band
    psi0: float = 0.0
    z0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    modes: tuple[ModeSpec, ...] = ()
    seed: Optional[int] = None
    band: tuple[float, float] = (1.0, 2.0)
    amplitude: float = 1e-3
    slots: tuple[str, ...] = ("z1",)


@dataclass(frozen=True)
class EnergyConfig:
    orders: tuple[int, ...] = (0, 1)
    delta1: Optional[float] = None
    milne_orders: tuple[int, ...] = ()
    c_slack: Optional[float] = None


@dataclass(frozen=True)
class ProbeSettings:
    eps_min: float = 1e-4
    eps_max: float = 1e-2
    samples_per_decade: int = 50
    psi_scale: float = 0.01
    seed: int = 2024


@dataclass(frozen=True)
class RunConfig:
    version: int
    background: BackgroundConfig = BackgroundConfig()
    eos_K: float = 0.2
    eos_rho0: float = 1.0
    c1: float = 0.0
    c2: float = -2.0
    grid: GridConfig = GridConfig()
    integrator: IntegratorConfig = IntegratorConfig()
    initial_data: InitialDataConfig = InitialDataConfig()
    energy: EnergyConfig = EnergyConfig()
    limits: DomainLimits = DomainLimits()
    probe: ProbeSettings = ProbeSettings()
    out_dir: str = "out"

    def eos(self) -> EosParams:
        return EosParams(K=self.eos_K, rho0=self.eos_rho0)

    def transform(self) -> TransformParams:
        return TransformParams(c1=self.c1, c2=self.c2)

    def build_grid(self) -> Grid:
        return Grid.periodic(self.grid.dims, self.grid.lengths)

    def build_background(self, scheme: Optional[str] = None) -> AdmBackground:
        return make_background(
            self.build_grid(), metric_kind=self.background.metric,
            amplitude=self.background.amplitude,
            wavevector=self.background.wavevector,
            alpha0=self.background.alpha0, t0=self.background.t0,
            scheme=scheme or self.integrator.scheme)


_SECTIONS = {
    "version", "background", "eos", "transform", "grid", "integrator",
    "initial_data", "energy", "limits", "probe", "output",
}

_KEYS = {
    "background": {"metric", "amplitude", "wavevector", "alpha0", "t0"},
    "eos": {"K", "rho0"},
    "transform": {"c1", "c2"},
    "grid": {"dims", "lengths"},
    "integrator": {"T_start", "T_end", "dt", "cfl", "scheme", "dissipation",
                   "capture_stride", "snapshot_stride"},
    "initial_data": {"kind", "psi0", "z0", "modes", "seed", "band", "amplitude",
                     "slots"},
    "energy": {"orders", "delta1", "milne_orders", "c_slack"},
    "limits": {"z_max", "psi_range"},
    "probe": {"eps_min", "eps_max", "samples_per_decade", "psi_scale", "seed"},
    "output": {"dir"},
}

_SLOTS = ("psi", "z1", "z2", "z3")


def _check_keys(section: str, data: dict, errors: list):
    unknown = set(data) - _KEYS[section]
    if unknown:
        errors.append(f"[{section}] unknown keys: {sorted(unknown)}")


def _triple(val, cast, name, errors, default):
    try:
        t = tuple(cast(v) for v in val)
        if len(t) != 3:
            raise ValueError
        return t
    except Exception:
        errors.append(f"{name} must be a 3-vector")
        return default


def config_from_dict(raw: dict) -> RunConfig:
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _SECTIONS
    if unknown:
        errors.append(f"unknown top-level sections: {sorted(unknown)}")
    if "version" not in raw:
        errors.append("missing mandatory 'version' field")
    elif int(raw["version"]) != CONFIG_VERSION:
        errors.append(f"unsupported config version {raw['version']} (expected {CONFIG_VERSION})")

    def sect(name) -> dict:
        d = raw.get(name, {}) or {}
        if not isinstance(d, dict):
            errors.append(f"[{name}] must be a mapping")
            return {}
        _check_keys(name, d, errors)
        return d

    b = sect("background")
    background = BackgroundConfig(
        metric=str(b.get("metric", "flat")),
        amplitude=float(b.get("amplitude", 0.0)),
        wavevector=_triple(b.get("wavevector", (1, 0, 0)), int, "background.wavevector",
                           errors, (1, 0, 0)),
        alpha0=float(b.get("alpha0", 1.0)),
        t0=float(b.get("t0", 1.0)),
    )
    if background.metric not in ("flat", "conformal-bump"):
        errors.append(f"background.metric {background.metric!r} not a known family")

    e = sect("eos")
    K = float(e.get("K", 0.2))
    if not (0.0 < K <= 1.0 / 3.0 + 1e-12):
        errors.append(f"eos.K = {K} violates the stability constraint K in (0, 1/3] "
                      "(1/3 is the critical radiation case)")
    rho0 = float(e.get("rho0", 1.0))
    if rho0 <= 0:
        errors.append("eos.rho0 must be positive")

    tr = sect("transform")
    c1 = float(tr.get("c1", 0.0))
    c2 = float(tr.get("c2", -2.0))
    if c2 == 0.0:
        errors.append("transform.c2 must be nonzero")

    g = sect("grid")
    grid = GridConfig(
        dims=_triple(g.get("dims", (16, 16, 16)), int, "grid.dims", errors, (16, 16, 16)),
        lengths=_triple(g.get("lengths", (2 * np.pi,) * 3), float, "grid.lengths",
                        errors, (2 * np.pi,) * 3),
    )
    try:
        Grid.periodic(grid.dims, grid.lengths)
    except Exception as exc:
        errors.append(f"grid: {exc}")

    it = sect("integrator")
    dt_raw = it.get("dt", "auto")
    try:
        integrator = IntegratorConfig(
            T_start=float(it.get("T_start", 0.0)),
            T_end=float(it.get("T_end", 5.0)),
            dt=dt_raw if dt_raw == "auto" else float(dt_raw),
            cfl=float(it.get("cfl", 0.8)),
            scheme=str(it.get("scheme", "fd4")),
            dissipation=float(it.get("dissipation", 0.0)),
            capture_stride=int(it.get("capture_stride", 1)),
            snapshot_stride=int(it.get("snapshot_stride", 0)),
        )
        if integrator.scheme not in ("fd4", "spectral"):
            errors.append(f"integrator.scheme {integrator.scheme!r} unknown")
    except ValueError as exc:
        errors.append(f"integrator: {exc}")
        integrator = IntegratorConfig()

    lm = sect("limits")
    pr = lm.get("psi_range", (-0.5, 0.5))
    if not (isinstance(pr, (list, tuple)) and len(pr) == 2):
        errors.append("limits.psi_range must be a 2-list [min, max]")
        pr = (-0.5, 0.5)
    limits = DomainLimits(z_max=float(lm.get("z_max", 0.1)),
                          psi_min=float(pr[0]), psi_max=float(pr[1]))

    idd = sect("initial_data")
    kind = str(idd.get("kind", "homogeneous"))
    modes = []
    for m in idd.get("modes", []) or []:
        extra = set(m) - {"wavevector", "amplitude", "slot", "phase"}
        if extra:
            errors.append(f"[initial_data.modes] unknown keys: {sorted(extra)}")
        slot = str(m.get("slot", "z1"))
        if slot not in _SLOTS:
            errors.append(f"initial_data mode slot {slot!r} not in {_SLOTS}")
        modes.append(ModeSpec(
            wavevector=_triple(m.get("wavevector", (1, 0, 0)), int,
                               "initial_data.modes.wavevector", errors, (1, 0, 0)),
            amplitude=float(m.get("amplitude", 1e-3)),
            slot=slot, phase=float(m.get("phase", 0.0))))
    seed = idd.get("seed", None)
    initial = InitialDataConfig(
        kind=kind,
        psi0=float(idd.get("psi0", 0.0)),
        z0=_triple(idd.get("z0", (0.0, 0.0, 0.0)), float, "initial_data.z0",
                   errors, (0.0, 0.0, 0.0)),
        modes=tuple(modes),
        seed=None if seed is None else int(seed),
        band=tuple(float(v) for v in idd.get("band", (1.0, 2.0)))[:2],
        amplitude=float(idd.get("amplitude", 1e-3)),
        slots=tuple(str(s) for s in idd.get("slots", ("z1",))),
    )
    if kind not in ("homogeneous", "fourier-modes", "random-band"):
        errors.append(f"initial_data.kind {kind!r} unknown")
    if kind == "random-band" and initial.seed is None:
        errors.append("initial_data.seed is mandatory for random-band data")
    if any(s not in _SLOTS for s in initial.slots):
        errors.append(f"initial_data.slots entries must be in {_SLOTS}")

    amp = _initial_amplitude(initial)
    if amp > limits.z_max:
        errors.append(f"initial amplitude {amp} exceeds smallness ceiling {limits.z_max}")

    en = sect("energy")
    energy = EnergyConfig(
        orders=tuple(int(s) for s in en.get("orders", (0, 1))),
        delta1=None if en.get("delta1") is None else float(en["delta1"]),
        milne_orders=tuple(int(s) for s in en.get("milne_orders", ())),
        c_slack=None if en.get("c_slack") is None else float(en["c_slack"]),
    )
    if any(s < 0 or s > 3 for s in energy.orders):
        errors.append("energy.orders must lie in 0..3")
    if any(s not in (1, 2) for s in energy.milne_orders):
        errors.append("energy.milne_orders must lie in {1, 2}")

    p = sect("probe")
    probe = ProbeSettings(
        eps_min=float(p.get("eps_min", 1e-4)),
        eps_max=float(p.get("eps_max", 1e-2)),
        samples_per_decade=int(p.get("samples_per_decade", 50)),
        psi_scale=float(p.get("psi_scale", 0.01)),
        seed=int(p.get("seed", 2024)),
    )

    o = sect("output")
    out_dir = str(o.get("dir", "out"))

    if errors:
        raise ConfigError(errors)
    return RunConfig(version=CONFIG_VERSION, background=background, eos_K=K,
                     eos_rho0=rho0, c1=c1, c2=c2, grid=grid, integrator=integrator,
                     initial_data=initial, energy=energy, limits=limits,
                     probe=probe, out_dir=out_dir)


def _initial_amplitude(idc: InitialDataConfig) -> float:
    if idc.kind == "homogeneous":
        return float(np.linalg.norm(idc.z0))
    if idc.kind == "fourier-modes":
        return float(sum(abs(m.amplitude) for m in idc.modes)) if idc.modes else 0.0
    return abs(idc.amplitude)


def config_load(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"YAML parse error: {exc}") from None
    return config_from_dict(raw or {})


def config_to_dict(cfg: RunConfig) -> dict:
    d = {
        "version": cfg.version,
        "background": asdict(cfg.background),
        "eos": {"K": cfg.eos_K, "rho0": cfg.eos_rho0},
        "transform": {"c1": cfg.c1, "c2": cfg.c2},
        "grid": {"dims": list(cfg.grid.dims), "lengths": list(cfg.grid.lengths)},
        "integrator": {
            "T_start": cfg.integrator.T_start, "T_end": cfg.integrator.T_end,
            "dt": cfg.integrator.dt, "cfl": cfg.integrator.cfl,
            "scheme": cfg.integrator.scheme, "dissipation": cfg.integrator.dissipation,
            "capture_stride": cfg.integrator.capture_stride,
            "snapshot_stride": cfg.integrator.snapshot_stride,
        },
        "initial_data": {
            "kind": cfg.initial_data.kind, "psi0": cfg.initial_data.psi0,
            "z0": list(cfg.initial_data.z0),
            "modes": [asdict(m) for m in cfg.initial_data.modes],
            "seed": cfg.initial_data.seed,
            "band": list(cfg.initial_data.band),
            "amplitude": cfg.initial_data.amplitude,
            "slots": list(cfg.initial_data.slots),
        },
        "energy": {"orders": list(cfg.energy.orders),
                   "delta1": cfg.energy.delta1,
                   "milne_orders": list(cfg.energy.milne_orders),
                   "c_slack": cfg.energy.c_slack},
        "limits": {"z_max": cfg.limits.z_max,
                   "psi_range": [cfg.limits.psi_min, cfg.limits.psi_max]},
        "probe": asdict(cfg.probe),
        "output": {"dir": cfg.out_dir},
    }
    d["background"]["wavevector"] = list(cfg.background.wavevector)
    for m in d["initial_data"]["modes"]:
        m["wavevector"] = list(m["wavevector"])
    return d


def config_dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_dump(cfg).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# initial data


def build_initial_data(cfg: RunConfig, seed_override: Optional[int] = None):
    """Construct the initial state on the configured grid (deterministic)."""
    from .fluid import FluidStateZ

    grid = cfg.build_grid()
    idc = cfg.initial_data
    psi = np.full(grid.dims, idc.psi0, dtype=float)
    z = np.zeros(grid.dims + (3,))
    if idc.kind == "homogeneous":
        z[:] = np.asarray(idc.z0)
    elif idc.kind == "fourier-modes":
        xs = grid.coordinates()
        for m in idc.modes:
            phase = sum(int(k) * x for k, x in zip(m.wavevector, xs)) + m.phase
            f = m.amplitude * np.sin(phase)
            if m.slot == "psi":
                psi += f
            else:
                z[..., int(m.slot[1]) - 1] += f
    elif idc.kind == "random-band":
        seed = seed_override if seed_override is not None else idc.seed
        rng = np.random.default_rng(seed)
        kmin, kmax = idc.band
        # integer mode numbers per axis
        ks = [np.rint(np.fft.fftfreq(n) * n).astype(int) if n > 1
              else np.zeros(1, dtype=int) for n in grid.dims]
        kk = np.meshgrid(*ks, indexing="ij")
        kmag = np.sqrt(sum(np.asarray(k, dtype=float)**2 for k in kk))
        mask = (kmag >= kmin) & (kmag <= kmax)
        for slot in idc.slots:
            noise = rng.standard_normal(grid.dims)
            fk = np.fft.fftn(noise) * mask
            f = np.real(np.fft.ifftn(fk))
            peak = np.max(np.abs(f))
            if peak > 0:
                f *= idc.amplitude / peak
            if slot == "psi":
                psi += f
            else:
                z[..., int(slot[1]) - 1] += f
    return FluidStateZ(psi=psi, z=z)
