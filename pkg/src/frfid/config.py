"""Campaign configuration: strict JSON with a schema version."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .graybox import FitOptions, WeightingScheme
from .local import LocalFitConfig
from .plant import ControllerConfig, DisturbanceConfig, PlantModel, ThetaVector, default_controller, \
    default_disturbances, default_plant
from .sigproc import MultisineSpec

SCHEMA_VERSION = 1
CLASSICAL_METHODS = ("H1", "ARI", "LOG", "JIO")
LOCAL_METHODS = ("LPM", "LRM_MISO", "LRM_MIMO", "JIO_LRM")


class ConfigError(ValueError):
    pass


def _strict(cls, data, where: str):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    nested = getattr(cls, "_nested", {})
    for k, v in data.items():
        if k in nested:
            sub, is_list = nested[k]
            if v is None:
                kwargs[k] = None
            elif is_list:
                if not isinstance(v, list):
                    raise ConfigError(f"{where}.{k}: expected a list")
                kwargs[k] = [_strict(sub, item, f"{where}.{k}[{i}]") for i, item in enumerate(v)]
            else:
                kwargs[k] = _strict(sub, v, f"{where}.{k}")
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class ThetaSection:
    k_g: list
    d_g: list
    k_e: list = field(default_factory=list)
    d_e: list = field(default_factory=list)
    k_c: list = field(default_factory=list)

    def build(self) -> ThetaVector:
        return ThetaVector(k_g=self.k_g, d_g=self.d_g, k_e=self.k_e, d_e=self.d_e, k_c=self.k_c or None)

    @classmethod
    def from_theta(cls, th: ThetaVector) -> "ThetaSection":
        return cls(*(getattr(th, g).tolist() for g in ("k_g", "d_g", "k_e", "d_e", "k_c")))


@dataclass
class PlantSection:
    motor_inertia: list
    gear: list
    link_mass: list
    link_length: list
    link_com: list
    link_inertia: list
    friction: list
    theta: ThetaSection
    elastic_axes: list = field(default_factory=list)
    flange_inertia: list = field(default_factory=list)
    gravity: float = 9.81

    _nested = {"theta": (ThetaSection, False)}

    def build(self) -> PlantModel:
        return PlantModel(motor_inertia=self.motor_inertia, gear=self.gear, link_mass=self.link_mass,
                          link_length=self.link_length, link_com=self.link_com, link_inertia=self.link_inertia,
                          theta=self.theta.build(), friction=self.friction, elastic_axes=tuple(self.elastic_axes),
                          flange_inertia=self.flange_inertia, gravity=self.gravity)

    @classmethod
    def from_model(cls, m: PlantModel) -> "PlantSection":
        return cls(m.motor_inertia.tolist(), m.gear.tolist(), m.link_mass.tolist(), m.link_length.tolist(),
                   m.link_com.tolist(), m.link_inertia.tolist(), m.friction.tolist(),
                   ThetaSection.from_theta(m.theta), list(m.elastic_axes), m.flange_inertia.tolist(), m.gravity)


@dataclass
class ControllerSection:
    kp: list
    kv: list
    ki: list
    saturation: Optional[float] = None

    def build(self) -> ControllerConfig:
        sat = np.inf if self.saturation is None else self.saturation
        return ControllerConfig(kp=self.kp, kv=self.kv, ki=self.ki, saturation=sat)


@dataclass
class DisturbanceSection:
    """Harmonics as ``[axis, order, amplitude, phase]`` lists."""

    position_noise_std: list
    torque_ripple: list = field(default_factory=list)
    position_harmonics: list = field(default_factory=list)

    def build(self) -> DisturbanceConfig:
        return DisturbanceConfig(self.position_noise_std, tuple(map(tuple, self.torque_ripple)),
                                 tuple(map(tuple, self.position_harmonics)))


@dataclass
class MultisineSection:
    sample_rate: float = 500.0
    period_samples: int = 4000
    f_min: float = 2.0
    f_max: float = 60.0
    n_lines: int = 1000  # more targets than odd bins in the band: every odd bin is excited
    amplitude: float = 0.5
    input_phases: str = "independent"
    offset_sine: Optional[list] = None

    def build(self, n_inputs: int, phase_seed: int) -> MultisineSpec:
        off = None if self.offset_sine is None else tuple(self.offset_sine)
        return MultisineSpec(sample_rate=self.sample_rate, period_samples=self.period_samples, f_min=self.f_min,
                             f_max=self.f_max, n_lines=self.n_lines, n_inputs=n_inputs, amplitude=self.amplitude,
                             phase_seed=phase_seed, orthogonal_blocks=True, offset_sine=off,
                             input_phases=self.input_phases)


@dataclass
class SimulationSection:
    n_experiments: int = 12
    n_periods: int = 1
    settle_periods: int = 1
    substeps: int = 5


@dataclass
class ConfigurationsSection:
    """Either explicit ``points`` or ``count`` uniform draws in ``[low, high]``."""

    points: Optional[list] = None
    count: int = 5
    seed: int = 1
    low: list = field(default_factory=lambda: [-1.2, -1.5, -1.5])
    high: list = field(default_factory=lambda: [1.2, 1.5, 1.5])

    def draw(self) -> list:
        if self.points is not None:
            return [np.asarray(p, dtype=float) for p in self.points]
        rng = np.random.default_rng(self.seed)
        return [rng.uniform(self.low, self.high) for _ in range(self.count)]


@dataclass
class EstimatorEntry:
    """One cell of the estimator matrix.

    Classical methods use the first ``n_e = M n_u`` experiments, local
    methods the first ``n_e`` (log-averaged when ``n_e > 1``).
    """

    method: str
    n_e: int
    M: Optional[int] = None
    order: int = 2
    half_width: Optional[int] = 12
    parametrization: str = "LRM_MIMO"
    fit: bool = False

    @property
    def label(self) -> str:
        return f"{self.method}_ne{self.n_e}"

    def local_config(self) -> LocalFitConfig:
        kind = self.parametrization if self.method == "JIO_LRM" else self.method
        return LocalFitConfig(order=self.order, half_width=self.half_width, parametrization=kind)


@dataclass
class GrayboxSection:
    """``theta0`` is the initial guess; ``names`` the fitted subset (None: all
    linear stiffness/damping parameters)."""

    theta0: ThetaSection
    names: Optional[list] = None
    n_starts: int = 3
    perturbation: float = 0.2
    max_iter: int = 200
    diag_boost: float = 4.0
    band_boost: float = 4.0
    band_rel: float = 0.2
    inverse_variance: bool = True
    zoh: bool = True

    _nested = {"theta0": (ThetaSection, False)}

    def scheme(self) -> WeightingScheme:
        return WeightingScheme(self.diag_boost, self.band_boost, self.band_rel, self.inverse_variance)

    def options(self, seed: int, sample_rate: float) -> FitOptions:
        return FitOptions(n_starts=self.n_starts, perturbation=self.perturbation, seed=seed,
                          names=tuple(self.names) if self.names else None, max_iter=self.max_iter,
                          sample_rate=sample_rate if self.zoh else None)


@dataclass
class CampaignConfig:
    plant: PlantSection
    controller: ControllerSection
    disturbances: DisturbanceSection
    graybox: GrayboxSection
    multisine: MultisineSection = field(default_factory=MultisineSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    configurations: ConfigurationsSection = field(default_factory=ConfigurationsSection)
    estimators: list = field(default_factory=list)
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    _nested = {"plant": (PlantSection, False), "controller": (ControllerSection, False),
               "disturbances": (DisturbanceSection, False), "graybox": (GrayboxSection, False),
               "multisine": (MultisineSection, False), "simulation": (SimulationSection, False),
               "configurations": (ConfigurationsSection, False), "estimators": (EstimatorEntry, True)}

    def __post_init__(self):
        self.validate()

    @property
    def n_u(self) -> int:
        return len(self.plant.motor_inertia)

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        n_u, n_exp = self.n_u, self.simulation.n_experiments
        if n_exp % n_u:
            raise ConfigError(f"simulation.n_experiments={n_exp} must be a multiple of n_u={n_u}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        labels = set()
        for e in self.estimators:
            if e.method not in CLASSICAL_METHODS + LOCAL_METHODS:
                raise ConfigError(f"unknown estimator method {e.method!r}")
            if e.n_e < 1 or e.n_e > n_exp:
                raise ConfigError(f"{e.label}: n_e must be in [1, {n_exp}]")
            if e.method in CLASSICAL_METHODS:
                M = e.n_e // n_u if e.M is None else e.M
                if e.n_e != M * n_u:
                    raise ConfigError(f"{e.label}: classical methods need n_e = M*n_u (n_u={n_u})")
            elif e.M is not None:
                raise ConfigError(f"{e.label}: M applies to classical methods only")
            if e.label in labels:
                raise ConfigError(f"duplicate estimator cell {e.label}")
            labels.add(e.label)
            if e.method in LOCAL_METHODS:
                e.local_config()

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        if not isinstance(data, dict) or "schema_version" not in data:
            raise ConfigError("config must be an object with a schema_version field")
        return _strict(cls, data, "config")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def default_estimators(n_u: int = 3, n_experiments: int = 12) -> list:
    ne = [n_experiments, n_u]
    out = [EstimatorEntry("LOG", n, M=n // n_u, fit=True) for n in ne]
    out += [EstimatorEntry("JIO", n, M=n // n_u) for n in ne]
    for m in ("LRM_MISO", "LRM_MIMO"):
        out += [EstimatorEntry(m, n) for n in ne + [1]]
    out += [EstimatorEntry("JIO_LRM", n, fit=True) for n in ne + [1]]
    return out


def default_theta0(theta: ThetaVector) -> ThetaVector:
    """Coarse initial guess: stiffnesses 30% high, dampings 40% low."""
    return ThetaVector(k_g=1.3 * theta.k_g, d_g=0.6 * theta.d_g, k_e=1.3 * theta.k_e, d_e=0.6 * theta.d_e,
                       k_c=theta.k_c)


def default_config(seed: int = 0) -> CampaignConfig:
    plant = default_plant()
    ctrl = default_controller()
    dist = default_disturbances()
    return CampaignConfig(
        plant=PlantSection.from_model(plant),
        controller=ControllerSection(ctrl.kp.tolist(), ctrl.kv.tolist(), ctrl.ki.tolist(),
                                     None if not np.isfinite(ctrl.saturation) else float(ctrl.saturation)),
        disturbances=DisturbanceSection(dist.position_noise_std.tolist(), [list(h) for h in dist.torque_ripple],
                                        [list(h) for h in dist.position_harmonics]),
        graybox=GrayboxSection(theta0=ThetaSection.from_theta(default_theta0(plant.theta))),
        estimators=default_estimators(len(plant.motor_inertia)),
        seed=seed,
    )
