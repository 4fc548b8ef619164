"""Experiment configuration: JSON file <-> nested dataclasses.

Every field has a default, so ``{}`` is a valid config file. Unknown keys are
rejected to catch typos.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


class ConfigError(ValueError):
    pass


@dataclass
class ModelParams:
    d1: int = 8
    d2: int = 8
    r: int = 2
    snr1: float = 4.0
    snr2: float = 4.0
    kappa: float = 1.5
    seed: int = 0


@dataclass
class TrainParams:
    """``eta`` and ``init_rho`` of ``None`` mean ``1/(2 beta_u)`` and ``gamma/4``."""

    eta: Optional[float] = None
    T: int = 4000
    b: int = 100
    c: float = 1.0
    sigma: float = 0.0
    loss_kind: str = "linear"
    alpha: float = 0.5
    tau: float = 1.0
    similarity: str = "inner_product"
    init_rho: Optional[float] = None


@dataclass
class PrivacyParams:
    """``delta`` of ``None`` means ``1/(2n)``."""

    delta: Optional[float] = None
    c_sigma: float = 1.0
    c_eps: float = 1.0


@dataclass
class SweepParams:
    axis: str = "epsilon"
    values: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 3.0, 10.0])


@dataclass
class ExperimentConfig:
    model: ModelParams = field(default_factory=ModelParams)
    n: int = 2000
    train: TrainParams = field(default_factory=TrainParams)
    privacy: PrivacyParams = field(default_factory=PrivacyParams)
    sweep: SweepParams = field(default_factory=SweepParams)
    repeats: int = 10
    seed: int = 0
    paired: bool = True
    out: str = "out"

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.sweep.axis not in ("epsilon", "n", "sigma"):
            raise ConfigError(f"sweep axis must be one of epsilon, n, sigma; got {self.sweep.axis!r}")
        if not self.sweep.values:
            raise ConfigError("sweep values must be non-empty")

    def delta(self, n: Optional[int] = None) -> float:
        if self.privacy.delta is not None:
            return self.privacy.delta
        return 1.0 / (2 * (n if n is not None else self.n))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def provenance_dict(self) -> dict[str, Any]:
        """Everything that determines results; the output directory does not."""
        data = self.to_dict()
        del data["out"]
        return data

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ExperimentConfig":
        obj = dict(obj)
        parts = {"model": ModelParams, "train": TrainParams, "privacy": PrivacyParams,
                 "sweep": SweepParams}
        try:
            for key, kind in parts.items():
                if key in obj:
                    obj[key] = kind(**obj[key])
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)


def epsilon_sweep_config(**overrides: Any) -> ExperimentConfig:
    cfg = ExperimentConfig()
    return dataclasses.replace(cfg, **overrides)


def n_sweep_config(**overrides: Any) -> ExperimentConfig:
    cfg = ExperimentConfig(sweep=SweepParams("n", [500, 2000, 8000]), repeats=20)
    return dataclasses.replace(cfg, **overrides)


def convergence_config(**overrides: Any) -> ExperimentConfig:
    cfg = ExperimentConfig(
        n=1000,
        train=TrainParams(T=500, b=1000, c=1.0),
        sweep=SweepParams("sigma", [0.0, 0.001, 0.01]),
        repeats=5,
    )
    return dataclasses.replace(cfg, **overrides)
