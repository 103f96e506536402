"""Declarative experiment configuration.

One YAML file holds every numeric constant of an experiment: the model
and its parameters, the simulation grid, the hypothesis spaces, solver
regularization, snapshot times, reference values for comparison, and the
blocking tolerances used by reproduce mode.  Configs round-trip through
YAML losslessly, and bundled configs for the five built-in experiments
ship at both paper and desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .drift import Regularization
from .errors import ConfigurationError
from .models import BUILTIN_NAMES

__all__ = [
    "BasisConfig",
    "SimulationSettings",
    "DiffusionSettings",
    "WassersteinSettings",
    "KernelSettings",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "builtin_config_path",
    "builtin_config",
    "BUILTIN_SCALES",
]

BUILTIN_SCALES = ("paper", "desk")


def _require(d: dict, keys, path: str):
    unknown = set(d) - set(keys)
    if unknown:
        raise ConfigurationError(
            f"unknown field(s) {sorted(unknown)} under '{path}'")


def _get(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigurationError(f"missing required field '{path}.{key}'")
    return d[key]


@dataclass(frozen=True)
class BasisConfig:
    """Hypothesis-space settings for one feature block."""

    family: str | tuple[str, ...] = "bspline"
    degree: int = 2
    segments: int = 8
    padding_fraction: float = 0.05

    def to_dict(self) -> dict:
        fam = list(self.family) if isinstance(self.family, tuple) else self.family
        return {"family": fam, "degree": self.degree, "segments": self.segments,
                "padding_fraction": self.padding_fraction}

    @staticmethod
    def from_dict(d: dict, path: str) -> "BasisConfig":
        _require(d, ("family", "degree", "segments", "padding_fraction"), path)
        fam = d.get("family", "bspline")
        if isinstance(fam, list):
            fam = tuple(str(f) for f in fam)
        return BasisConfig(family=fam, degree=int(d.get("degree", 2)),
                           segments=int(d.get("segments", 8)),
                           padding_fraction=float(d.get("padding_fraction", 0.05)))


@dataclass(frozen=True)
class SimulationSettings:
    T: float
    dt: float
    M: int
    seed: int

    @staticmethod
    def from_dict(d: dict, path: str) -> "SimulationSettings":
        _require(d, ("T", "dt", "M", "seed"), path)
        return SimulationSettings(T=float(_get(d, "T", path)),
                                  dt=float(_get(d, "dt", path)),
                                  M=int(_get(d, "M", path)),
                                  seed=int(_get(d, "seed", path)))

    def to_dict(self) -> dict:
        return {"T": self.T, "dt": self.dt, "M": self.M, "seed": self.seed}


@dataclass(frozen=True)
class DiffusionSettings:
    """constant: closed-form covariance; diagonal_state_dependent: per-entry
    variance functions over a y-basis.  drift_corrected subtracts the fitted
    drift from increments before squaring (removes the O(dt) bias)."""

    model_class: str = "constant"
    drift_corrected: bool = True
    basis: BasisConfig | None = None

    def __post_init__(self):
        if self.model_class not in ("constant", "diagonal_state_dependent"):
            raise ConfigurationError(
                f"diffusion.model_class must be 'constant' or "
                f"'diagonal_state_dependent', got {self.model_class!r}")
        if self.model_class == "diagonal_state_dependent" and self.basis is None:
            raise ConfigurationError(
                "diffusion.basis is required for the diagonal_state_dependent class")

    def to_dict(self) -> dict:
        return {"model_class": self.model_class,
                "drift_corrected": self.drift_corrected,
                "basis": None if self.basis is None else self.basis.to_dict()}

    @staticmethod
    def from_dict(d: dict, path: str) -> "DiffusionSettings":
        _require(d, ("model_class", "drift_corrected", "basis"), path)
        basis = d.get("basis")
        return DiffusionSettings(
            model_class=str(d.get("model_class", "constant")),
            drift_corrected=bool(d.get("drift_corrected", True)),
            basis=None if basis is None else BasisConfig.from_dict(basis, path + ".basis"))


@dataclass(frozen=True)
class WassersteinSettings:
    exact_cutoff: int = 2000
    eps_scale: float = 1e-3

    def to_dict(self) -> dict:
        return {"exact_cutoff": self.exact_cutoff, "eps_scale": self.eps_scale}

    @staticmethod
    def from_dict(d: dict, path: str) -> "WassersteinSettings":
        _require(d, ("exact_cutoff", "eps_scale"), path)
        return WassersteinSettings(exact_cutoff=int(d.get("exact_cutoff", 2000)),
                                   eps_scale=float(d.get("eps_scale", 1e-3)))


@dataclass(frozen=True)
class KernelSettings:
    """Interaction-kernel learning block (Cucker-Smale only)."""

    basis: BasisConfig = field(default_factory=lambda: BasisConfig(segments=6))
    domain_percentile: float = 99.0
    domain_pad: float = 0.05

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(),
                "domain_percentile": self.domain_percentile,
                "domain_pad": self.domain_pad}

    @staticmethod
    def from_dict(d: dict, path: str) -> "KernelSettings":
        _require(d, ("basis", "domain_percentile", "domain_pad"), path)
        return KernelSettings(
            basis=BasisConfig.from_dict(_get(d, "basis", path), path + ".basis"),
            domain_percentile=float(d.get("domain_percentile", 99.0)),
            domain_pad=float(d.get("domain_pad", 0.05)))


_TOP_KEYS = ("model", "simulation", "basis_f", "basis_g", "diffusion",
             "regularization", "snapshot_times", "wasserstein", "kernel",
             "output_dir", "report_precision", "reference", "acceptance")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run simulate -> fit -> evaluate for one system."""

    model_name: str
    model_params: dict
    simulation: SimulationSettings
    basis_f: BasisConfig
    basis_g: BasisConfig
    diffusion: DiffusionSettings = field(default_factory=DiffusionSettings)
    regularization: Regularization = field(default_factory=Regularization)
    snapshot_times: tuple[float, ...] = ()
    wasserstein: WassersteinSettings = field(default_factory=WassersteinSettings)
    kernel: KernelSettings | None = None
    output_dir: str | None = None
    report_precision: int = 4
    reference: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_name not in BUILTIN_NAMES:
            raise ConfigurationError(
                f"model.name {self.model_name!r} is not one of {BUILTIN_NAMES}")
        if self.report_precision < 1:
            raise ConfigurationError("report_precision must be >= 1")
        if self.model_name == "cucker_smale" and self.kernel is None:
            raise ConfigurationError(
                "cucker_smale experiments need a 'kernel' block")

    def to_dict(self) -> dict:
        return {
            "model": {"name": self.model_name, "params": dict(self.model_params)},
            "simulation": self.simulation.to_dict(),
            "basis_f": self.basis_f.to_dict(),
            "basis_g": self.basis_g.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "regularization": self.regularization.to_dict(),
            "snapshot_times": list(self.snapshot_times),
            "wasserstein": self.wasserstein.to_dict(),
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
            "output_dir": self.output_dir,
            "report_precision": self.report_precision,
            "reference": dict(self.reference),
            "acceptance": dict(self.acceptance),
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config root must be a mapping")
        _require(d, _TOP_KEYS, "<root>")
        model = _get(d, "model", "<root>")
        _require(model, ("name", "params"), "model")
        kernel = d.get("kernel")
        reg = d.get("regularization", {"kind": "truncated_svd", "strength": 1e-10})
        _require(reg, ("kind", "strength"), "regularization")
        try:
            regularization = Regularization.from_dict(reg)
        except Exception as exc:
            raise ConfigurationError(f"bad 'regularization' block: {exc}") from exc
        return ExperimentConfig(
            model_name=str(_get(model, "name", "model")),
            model_params=dict(model.get("params") or {}),
            simulation=SimulationSettings.from_dict(
                _get(d, "simulation", "<root>"), "simulation"),
            basis_f=BasisConfig.from_dict(_get(d, "basis_f", "<root>"), "basis_f"),
            basis_g=BasisConfig.from_dict(_get(d, "basis_g", "<root>"), "basis_g"),
            diffusion=DiffusionSettings.from_dict(
                d.get("diffusion", DiffusionSettings().to_dict()), "diffusion"),
            regularization=regularization,
            snapshot_times=tuple(float(t) for t in d.get("snapshot_times") or ()),
            wasserstein=WassersteinSettings.from_dict(
                d.get("wasserstein", WassersteinSettings().to_dict()), "wasserstein"),
            kernel=None if kernel is None else KernelSettings.from_dict(kernel, "kernel"),
            output_dir=d.get("output_dir"),
            report_precision=int(d.get("report_precision", 4)),
            reference=dict(d.get("reference") or {}),
            acceptance=dict(d.get("acceptance") or {}),
        )


def load_config(path) -> ExperimentConfig:
    """Parse a YAML experiment config; raises ConfigurationError with the
    offending field path on malformed input."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid YAML in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def builtin_config_path(name: str, scale: str) -> Path:
    """Path to a bundled experiment config."""
    if name not in BUILTIN_NAMES:
        raise ConfigurationError(f"unknown experiment {name!r}; expected {BUILTIN_NAMES}")
    if scale not in BUILTIN_SCALES:
        raise ConfigurationError(f"unknown scale {scale!r}; expected {BUILTIN_SCALES}")
    ref = resources.files("msdelearn") / "configs" / f"{name}_{scale}.yaml"
    return Path(str(ref))


def builtin_config(name: str, scale: str) -> ExperimentConfig:
    return load_config(builtin_config_path(name, scale))
