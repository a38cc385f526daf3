"""Experiment configuration and the figure presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from .expr import ExpressionError, parse
from .reconstruct import Bounds
from .synth import NoiseConfig

__all__ = ["ConfigError", "ExperimentConfig", "PRESETS", "preset", "load_config"]


class ConfigError(ValueError):
    pass


SMOOTH_PHANTOM = "3/(1+exp(2*(x1+x2)))"
OSCILLATORY_PHANTOM = "2+cos(10*(x1-x2))"
HALF_CLIPPED_DIRICHLET = "max(0, x1)"


@dataclass
class ExperimentConfig:
    phantom: str = SMOOTH_PHANTOM
    dirichlet: str = HALF_CLIPPED_DIRICHLET
    p: float = 2.0
    q: float = 2.0
    M: int = 1000
    source: str = "fem"
    oracle_u: Optional[str] = None
    mesh_h: float = 0.02
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    bounds: Bounds = field(default_factory=lambda: Bounds(0.1, 5.0))
    kernel_std: Optional[float] = None
    out: str = "out"

    def __post_init__(self):
        for name in ("phantom", "dirichlet"):
            try:
                parse(getattr(self, name))
            except ExpressionError as exc:
                raise ConfigError(f"field {name!r}: {exc}") from None
        if self.source not in ("fem", "oracle"):
            raise ConfigError(f"field 'source': expected 'fem' or 'oracle', got {self.source!r}")
        if self.source == "oracle":
            if not self.oracle_u:
                raise ConfigError("field 'oracle_u' is required when source is 'oracle'")
            try:
                parse(self.oracle_u)
            except ExpressionError as exc:
                raise ConfigError(f"field 'oracle_u': {exc}") from None
        if not isinstance(self.M, int) or self.M < 4:
            raise ConfigError(f"field 'M': need an integer >= 4, got {self.M!r}")
        if not (0 < self.mesh_h < 1):
            raise ConfigError(f"field 'mesh_h': need 0 < h < 1, got {self.mesh_h!r}")
        if not self.p > 1 or self.q < 0:
            raise ConfigError(f"fields 'p'/'q': need p > 1 and q >= 0, got p={self.p}, q={self.q}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        if "noise" in kwargs:
            kwargs["noise"] = _sub(NoiseConfig, kwargs["noise"], "noise")
        if "bounds" in kwargs:
            kwargs["bounds"] = _sub(Bounds, kwargs["bounds"], "bounds")
        for key in ("p", "q", "mesh_h"):
            if key in kwargs and not isinstance(kwargs[key], (int, float)):
                raise ConfigError(f"field {key!r}: expected a number, got {kwargs[key]!r}")
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def _sub(kind, data, name):
    if isinstance(data, kind):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"field {name!r}: expected an object")
    known = {f.name for f in fields(kind)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"field {name!r}: unknown key(s) {', '.join(sorted(unknown))}")
    try:
        return kind(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {name!r}: {exc}") from None


PRESETS = {
    "paper-fig1": dict(phantom=SMOOTH_PHANTOM, M=1000, bounds={"sigma_lo": 0.1, "sigma_hi": 5.0}),
    "paper-fig2": dict(phantom=SMOOTH_PHANTOM, M=100, bounds={"sigma_lo": 0.1, "sigma_hi": 5.0}),
    "paper-fig3": dict(phantom=OSCILLATORY_PHANTOM, M=100,
                       bounds={"sigma_lo": 0.5, "sigma_hi": 6.0}),
}
PRESETS["fig1"] = PRESETS["paper-fig1"]
PRESETS["fig2"] = PRESETS["paper-fig2"]
PRESETS["fig3"] = PRESETS["paper-fig3"]


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    data = dict(PRESETS[name])
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return ExperimentConfig.from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
