"""JSON run configuration.

Every field has a default, so an empty document is a valid default
commercial HVAC run; unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .capacity import QoSSpec
from .loads import LoadSimulator, QoSChannel, ThermalParams, steps_from_seconds
from .refsd import Passband, RationalSD

__all__ = ["RunConfig", "load_config", "ValidationError"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LoadConfig(_Strict):
    R: float = Field(8.0, gt=0)
    Cth: float = Field(22.0, gt=0)
    eta0: float = Field(3.5, gt=0)
    alpha1: float = 0.0
    alpha2: float = 0.0
    Ta: float = 30.0
    Tbar: float = 22.0
    qint: float = 0.0
    delta_t_s: float = Field(20.0, gt=0)

    def params(self) -> ThermalParams:
        return ThermalParams(self.R, self.Cth, self.eta0, self.alpha1, self.alpha2, self.Ta, self.Tbar, self.qint)

    def simulator(self, storage_model: str = "lti") -> LoadSimulator:
        return LoadSimulator(self.params(), self.delta_t_s, storage_model)


class QoSConfig(_Strict):
    kind: Literal["power", "ramp", "energy", "storage"]
    c: float = Field(gt=0)
    epsilon: float = Field(0.05, gt=0, le=1)
    delta_s: float | None = Field(None, gt=0)
    window_s: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _needs_lengths(self):
        if self.kind == "ramp" and self.delta_s is None:
            raise ValueError("ramp constraint needs delta_s")
        if self.kind == "energy" and self.window_s is None:
            raise ValueError("energy constraint needs window_s")
        return self

    def spec(self, delta_t: float) -> QoSSpec:
        delta = steps_from_seconds(self.delta_s, delta_t) if self.kind == "ramp" else 1
        window = steps_from_seconds(self.window_s, delta_t) if self.kind == "energy" else 1
        return QoSSpec(QoSChannel(self.kind, delta, window), self.c, self.epsilon)


def _default_qos():
    return [
        QoSConfig(kind="power", c=40.0),
        QoSConfig(kind="ramp", c=8.0, delta_s=20.0),
        QoSConfig(kind="energy", c=8.0, window_s=5 * 3600.0),
        QoSConfig(kind="storage", c=1.0),
    ]


class PassbandConfig(_Strict):
    name: str = Field(pattern=r"^[A-Za-z0-9_-]+$")
    low: float = Field(ge=0)
    high: float = Field(gt=0)
    unit: Literal["per_hour", "per_minute", "hz"] = "per_hour"

    @property
    def per_hour(self) -> tuple[float, float]:
        factor = {"per_hour": 1.0, "per_minute": 60.0, "hz": 3600.0}[self.unit]
        return self.low * factor, self.high * factor

    def passband(self) -> Passband:
        lo, hi = self.per_hour
        return Passband.per_hour(lo, hi)


def _default_passbands():
    return [
        PassbandConfig(name="low", low=1 / 6, high=1 / 2, unit="per_hour"),
        PassbandConfig(name="high", low=1 / 30, high=1.0, unit="per_minute"),
    ]


class SyntheticConfig(_Strict):
    ar: tuple[float, float] = (-1.4, 0.45)
    ma: float = -0.4
    gain: float = Field(20.0, ge=0)
    length: int = Field(25600, gt=0)

    def model(self, native_dt: float) -> RationalSD:
        return RationalSD(self.ar, self.ma, self.gain, native_dt)


class ReferenceConfig(_Strict):
    source: Literal["synthetic", "csv"] = "synthetic"
    csv_path: str | None = None
    native_delta_t_s: float = Field(600.0, gt=0)
    unit_scale: float = Field(1e6, gt=0, description="multiplies the density, MW^2 to kW^2 by default")
    segment_length: int = Field(512, gt=0)
    synthetic: SyntheticConfig = SyntheticConfig()
    passbands: list[PassbandConfig] = Field(default_factory=_default_passbands, min_length=1)

    @model_validator(mode="after")
    def _csv_path(self):
        if self.source == "csv" and not self.csv_path:
            raise ValueError("reference.source 'csv' needs reference.csv_path")
        names = [p.name for p in self.passbands]
        if len(set(names)) != len(names):
            raise ValueError("passband names must be unique")
        return self


class EstimationConfig(_Strict):
    n_real: int = Field(50, ge=2)
    N: int = Field(131072, gt=0)
    probe_scale: float = Field(1.0, gt=0)


class ValidationConfig(_Strict):
    n_real: int = Field(20, ge=2)
    N: int = Field(65536, gt=0)


class SolverConfig(_Strict):
    tol: float = Field(1e-6, gt=0)
    refine_rounds: int = Field(0, ge=0)


class RunConfig(_Strict):
    seed: int = Field(0, ge=0)
    n_freq: int = Field(65536, gt=0)
    basis_count: int = Field(40, ge=1)
    ensemble_n: int = Field(2000, ge=1)
    load: LoadConfig = LoadConfig()
    qos: list[QoSConfig] = Field(default_factory=_default_qos, min_length=1)
    reference: ReferenceConfig = ReferenceConfig()
    estimation: EstimationConfig = EstimationConfig()
    validation: ValidationConfig = ValidationConfig()
    solver: SolverConfig = SolverConfig()

    def specs(self) -> list[QoSSpec]:
        return [q.spec(self.load.delta_t_s) for q in self.qos]


def load_config(path, seed: int | None = None) -> RunConfig:
    """Parse and validate a config file; ``seed`` overrides the document's seed."""
    path = Path(path)
    data = json.loads(path.read_text())
    if seed is not None:
        data["seed"] = seed
    return RunConfig.model_validate(data)
