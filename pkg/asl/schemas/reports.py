from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from asl.core.config import settings

CommandName = Literal["validate", "simulate", "sweep", "normality", "drift", "lemma"]


class Command(BaseModel):
    name: CommandName
    scenario: Path
    out: Optional[Path] = None
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    workers: int = Field(settings.DEFAULT_WORKERS, ge=1)

    @field_validator("scenario")
    @classmethod
    def validate_scenario(cls, v):
        if not v.is_file():
            raise ValueError(f"Scenario file {v} does not exist.")
        return v

    @model_validator(mode="after")
    def check_out(self):
        if self.name != "validate" and self.out is None:
            raise ValueError(f"'{self.name}' needs an output directory (--out)")
        if self.out is not None and self.out.exists() and not self.out.is_dir():
            raise ValueError(f"Output path {self.out} is not a directory.")
        return self


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


class RunManifest(BaseModel):
    scenario_hash: str
    seed: int
    artifact_version: str = settings.ARTIFACT_VERSION
    command: CommandName
    status: Literal["running", "complete", "failed"] = "running"
    started_at: datetime = Field(default_factory=utcnow)
    finished_at: Optional[datetime] = None
    files: List[str] = Field(default_factory=list)


class AgentSummary(BaseModel):
    agent: int
    mean: List[float]
    covariance: List[List[float]]
    mean_gap: float
    trace_ratio: Optional[float] = None
    errors: int
    error_rate: float
    error_ci: List[float] = Field(..., description="95% interval [lower, upper]")


class SteadyStateSummary(BaseModel):
    theta0: int
    delta: float
    horizon: int
    n_runs: int
    perron: List[float]
    m_ave: List[float]
    c_ave: List[List[float]]
    agents: List[AgentSummary]


class EllipseSummary(BaseModel):
    coverage: float
    center: List[float]
    semi_axes: List[float]
    rotation_deg: Optional[float] = None


class NormalityEntry(BaseModel):
    delta: float
    n: int
    skewness: List[float]
    excess_kurtosis: List[float]
    ks_statistic: List[Optional[float]]
    ks_pvalue: List[Optional[float]]
    coverage_1sigma: float
    coverage_2sigma: float
    degenerate_directions: List[List[float]]
    limiting_mean: List[float]
    limiting_covariance: List[List[float]]
    empirical_mean: List[float]
    empirical_covariance: List[List[float]]


class NormalitySummary(BaseModel):
    agent: int
    distance_shrinks: bool
    entries: List[NormalityEntry]


class RecoveryEntry(BaseModel):
    change_time: int
    theta_from: str
    theta_to: str
    agent: int
    asl_faster: int
    n_runs: int
    median: Dict[str, Optional[float]]
    not_recovered: Dict[str, int]
    times: Dict[str, List[Optional[float]]]


class RecoverySummary(BaseModel):
    delta: float
    window: int
    labels: List[str]
    recoveries: List[RecoveryEntry]
