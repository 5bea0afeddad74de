"""Declarative run configuration (one JSON document); unknown keys are rejected."""

from __future__ import annotations

import json
import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .basis import SMOOTHNESS, BasisConfig
from .errors import ConfigurationError
from .inference import FitConfig, HMCConfig, SVIConfig
from .mixture import PriorSpec


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Section):
    preset: str | None = None
    truth: dict | None = None
    n: int | None = Field(default=None, ge=1)
    n_match: int | None = Field(default=None, ge=0)
    n_nonmatch: int | None = Field(default=None, ge=0)
    csv: str | None = None


class StreamsSection(_Section):
    match_covariates: list[str] | None = None
    nonmatch_covariates: list[str] | None = None


class BasisSection(_Section):
    grid: int | list[int] = 10
    bandwidth: float | None = Field(default=None, gt=0)
    prune_distance: float = Field(default=1.0, gt=0)
    smoothness: Literal["smooth", "rough"] = "smooth"


class PriorSection(_Section):
    coefficient_scale: float | None = Field(default=None, gt=0)
    log_sigma_loc: float = -1.0
    log_sigma_scale: float = Field(default=1.0, gt=0)


class HMCSection(_Section):
    step_size: float = Field(default=0.1, gt=0)
    leapfrog_steps: int = Field(default=32, ge=1)
    warmup: int = Field(default=500, ge=0)
    target_accept: float = Field(default=0.8, gt=0, lt=1)
    adapt_mass: bool = True


class SVISection(_Section):
    iterations: int = Field(default=10_000, ge=1)
    minibatch_size: int = Field(default=1024, ge=1)
    learning_rate: float = Field(default=1e-2, gt=0)
    posterior_samples: int | None = Field(default=None, ge=2)
    mc_samples: int = Field(default=1, ge=1)
    init_scale: float = Field(default=0.1, gt=0)


class FitSection(_Section):
    method: Literal["svi", "hmc"] = "svi"
    draws: int = Field(default=100, ge=2)
    components: int = Field(default=4, ge=1)
    chains: int = Field(default=1, ge=1)
    hmc: HMCSection = HMCSection()
    svi: SVISection = SVISection()


class MetricsSection(_Section):
    metric: Literal["tpr", "auc", "threshold"] = "tpr"
    fpr: float = Field(default=1e-3, gt=0, lt=1)
    grid: str | None = None
    queries: list[dict[str, float]] | None = None
    mass: float = Field(default=0.95, gt=0, lt=1)
    similarity: bool = False


class BaselineSection(_Section):
    covariate: str = "age"
    edges: list[float] = [16, 30, 50, 70]
    labels: list[str] | None = ["young", "middle", "old"]
    metric: Literal["tpr", "auc"] = "tpr"
    fpr: float = Field(default=1e-3, gt=0, lt=1)
    replicates: int = Field(default=100, ge=1)
    mass: float = Field(default=0.95, gt=0, lt=1)


class OracleSection(_Section):
    enabled: bool = True
    grid: str = "10x10"
    n_per_point: int = Field(default=1_000_000, ge=1)
    metric: Literal["tpr", "auc", "threshold"] = "tpr"
    fpr: float = Field(default=1e-3, gt=0, lt=1)


class RunConfig(_Section):
    seed: int | None = None
    output_dir: str = "."
    workers: int | None = Field(default=None, ge=1)
    dataset: DatasetSection = DatasetSection()
    streams: StreamsSection = StreamsSection()
    basis: BasisSection = BasisSection()
    prior: PriorSection = PriorSection()
    fit: FitSection = FitSection()
    metrics: MetricsSection = MetricsSection()
    baseline: BaselineSection = BaselineSection()
    oracle: OracleSection = OracleSection()

    @field_validator("basis")
    @classmethod
    def _grid_positive(cls, v):
        grid = [v.grid] if isinstance(v.grid, int) else v.grid
        if not grid or any(g < 1 for g in grid):
            raise ValueError("basis.grid entries must be >= 1")
        return v

    def resolved_seed(self) -> int:
        if self.seed is not None:
            return self.seed
        env = os.environ.get("COVAROC_SEED")
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise ConfigurationError(f"COVAROC_SEED={env!r} is not an integer") from None
        return 0

    def resolved_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def basis_config(self) -> BasisConfig:
        bw_scale, _ = SMOOTHNESS[self.basis.smoothness]
        return BasisConfig(grid=self.basis.grid, bandwidth=self.basis.bandwidth,
                           prune_distance=self.basis.prune_distance, bandwidth_scale=bw_scale)

    def prior_spec(self) -> PriorSpec:
        _, coef = SMOOTHNESS[self.basis.smoothness]
        return PriorSpec(coefficient_scale=self.prior.coefficient_scale or coef,
                         log_sigma_loc=self.prior.log_sigma_loc,
                         log_sigma_scale=self.prior.log_sigma_scale)

    def fit_config(self) -> FitConfig:
        f = self.fit
        return FitConfig(method=f.method, draws=f.draws, components=f.components, chains=f.chains,
                         seed=self.resolved_seed(), hmc=HMCConfig(**f.hmc.model_dump()),
                         svi=SVIConfig(**f.svi.model_dump()))


def set_path(d: dict, dotted: str, value) -> None:
    """Set ``d["a"]["b"] = value`` for ``dotted = "a.b"``, creating sections as needed."""
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def load_config(path=None, overrides=None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            set_path(data, key, value)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration:\n{e}") from None
