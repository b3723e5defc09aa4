"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class PriorComponentModel(BaseModel):
    kind: Literal["normal", "gamma-exp"]
    mean: Optional[float] = None
    std: Optional[float] = None
    shape: Optional[float] = None
    rate: Optional[float] = None


class ProposalModel(BaseModel):
    kind: Literal["full-gaussian-random-walk", "single-coordinate-gaussian"]
    stds: list[float]


class ObservedModel(BaseModel):
    inline: Optional[list[float]] = None
    file: Optional[str] = None
    generate: Optional[dict] = None


class ManifestModel(BaseModel):
    manifest_version: int = 1
    name: str = "experiment"
    sampler: str
    simulator: str
    prior: list[PriorComponentModel]
    proposal: ProposalModel
    observed: ObservedModel
    init_theta: list[float]
    chain_length: int
    burn_in: int
    seed: int
    s0: int = 5
    delta_s: int = 10
    epsilon: float = 0.0
    xi: float = 0.05
    m_draws: int = 50
    error_grid_size: int = 201
    diagonal_covariance: bool = False
    simulator_options: dict = Field(default_factory=dict)
    asl_step_sim_budget: int = 10_000
    gps_acquisition_budget: int = 50
    surrogate_admission_band: float = 20.0
    gps_fit_enabled: bool = True
    output_dir: str = "out"
    analytic_oracle: bool = False

    def to_manifest_dict(self) -> dict:
        raw = self.model_dump(exclude_none=True)
        raw["prior"] = [c.model_dump(exclude_none=True) for c in self.prior]
        raw["proposal"] = self.proposal.model_dump()
        raw["observed"] = self.observed.model_dump(exclude_none=True)
        return raw


class RunRequest(BaseModel):
    manifest: ManifestModel
    seed: Optional[int] = None
    out_dir: Optional[str] = None
    wait: bool = True


class RunResult(BaseModel):
    name: str
    chain_file: str
    metadata_file: str
    observed_file: str
    total_sim_calls: int
    setup_sim_calls: int
    acceptance_rate: float
    kept_samples: int
    wall_time_s: float


class JobInfo(BaseModel):
    job_id: str
    status: Literal["queued", "running", "done", "error"]
    result: Optional[RunResult] = None
    error: Optional[str] = None


class OracleRequest(BaseModel):
    alpha: float
    beta: float
    n: int
    y_bar: float


class OracleResult(BaseModel):
    shape: float
    rate: float
    mean: float
    std: float


class SummarizeRequest(BaseModel):
    chain_file: str
    out_dir: Optional[str] = None


class SummaryModel(BaseModel):
    n_samples: int
    means: list[float]
    stds: list[float]
    quantiles: dict[str, list[float]]
    ess: list[float]
    total_sim_calls: int
    acceptance_rate: float


class PredictiveRequest(BaseModel):
    chain_file: str
    simulator: str
    draws_per_sample: int = 1
    thin: int = 1
    seed: int = 0
    simulator_options: dict = Field(default_factory=dict)
    out_file: Optional[str] = None


class PredictiveResult(BaseModel):
    n_predictive: int
    n_failures: int
    means: list[float]
    stds: list[float]
    out_file: Optional[str] = None


class CompareRequest(BaseModel):
    chain_a: str
    chain_b: str


class DimensionComparison(BaseModel):
    dimension: int
    mean_a: float
    mean_b: float
    mean_delta: float
    std_a: float
    std_b: float
    std_delta: float
    ks_stat: float
    ks_pvalue: float


class CompareResult(BaseModel):
    dimensions: list[DimensionComparison]


class SimulatorInfo(BaseModel):
    name: str
    param_dim: int
    stat_dim: int
    param_names: list[str]
    stat_names: list[str]
    sampling_transform: list[str]
