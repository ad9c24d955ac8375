import hashlib
import json
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from asl.core.config import settings


class NetworkSection(BaseModel):
    """How the topology and combination matrix are produced."""

    kind: Literal["ring", "ring_with_chords", "circulant", "complete", "star", "edges", "matrix"] = "ring_with_chords"
    n_agents: Optional[int] = Field(None, gt=0)
    chords: int = Field(0, ge=0)
    seed: int = Field(0, ge=0, description="Seed of the chord placement, independent of the experiment seed")
    bidirectional: bool = True
    self_loops: bool = True
    hub: int = Field(1, ge=1)
    offsets: Optional[List[int]] = Field(None, description="Neighbour offsets of a circulant network")
    edges: Optional[List[Tuple[int, int]]] = None
    weights: Optional[List[List[float]]] = Field(None, description="Left-stochastic matrix, weights[l][k]")

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind == "matrix":
            if not self.weights:
                raise ValueError("network.kind 'matrix' requires 'weights'")
            if self.n_agents is not None and self.n_agents != len(self.weights):
                raise ValueError(f"n_agents={self.n_agents} disagrees with a {len(self.weights)}x.. weight matrix")
            self.n_agents = len(self.weights)
        elif self.n_agents is None:
            raise ValueError(f"network.kind '{self.kind}' requires 'n_agents'")
        if self.kind == "edges" and not self.edges:
            raise ValueError("network.kind 'edges' requires 'edges'")
        if self.kind == "circulant":
            if not self.offsets:
                raise ValueError("network.kind 'circulant' requires 'offsets'")
            if any(not 0 < s < self.n_agents for s in self.offsets):
                raise ValueError(f"Circulant offsets must lie in [1, {self.n_agents - 1}]")
        return self


class AgentGroup(BaseModel):
    """Agents sharing one likelihood family."""

    agents: List[int] = Field(..., min_length=1)
    means: Optional[List[float]] = None
    pmfs: Optional[List[List[float]]] = None

    @field_validator("agents")
    @classmethod
    def validate_agents(cls, v):
        if any(a < 1 for a in v):
            raise ValueError("Agent ids are 1-based")
        return v


class LikelihoodSection(BaseModel):
    family: Literal["laplace", "gaussian", "discrete"] = "laplace"
    scale: float = Field(1.0, gt=0)
    support: Optional[List[float]] = None
    labels: Optional[List[str]] = None
    groups: List[AgentGroup] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_groups(self):
        sizes = set()
        for group in self.groups:
            if self.family == "discrete":
                if group.pmfs is None or self.support is None:
                    raise ValueError("Discrete likelihoods need 'support' and per-group 'pmfs'")
                sizes.add(len(group.pmfs))
            else:
                if group.means is None:
                    raise ValueError(f"{self.family} likelihoods need per-group 'means'")
                sizes.add(len(group.means))
        if len(sizes) != 1:
            raise ValueError(f"Groups disagree on the number of hypotheses: {sorted(sizes)}")
        n_hyp = sizes.pop()
        if n_hyp < 2:
            raise ValueError("At least two hypotheses are required")
        if self.labels is not None and len(self.labels) != n_hyp:
            raise ValueError(f"Expected {n_hyp} labels, got {len(self.labels)}")
        return self

    @property
    def n_hypotheses(self) -> int:
        group = self.groups[0]
        return len(group.pmfs) if self.family == "discrete" else len(group.means)

    def assigned_agents(self) -> List[int]:
        return sorted(a for g in self.groups for a in g.agents)


class Segment(BaseModel):
    start: int = Field(..., ge=0, description="First step at which theta0 holds")
    theta0: int = Field(..., ge=1)


class ScheduleSection(BaseModel):
    segments: List[Segment] = Field(..., min_length=1)

    @field_validator("segments")
    @classmethod
    def validate_segments(cls, v):
        if v[0].start != 0:
            raise ValueError("The first schedule segment must start at 0")
        starts = [s.start for s in v]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"Schedule start times must be strictly increasing, got {starts}")
        return v

    @property
    def change_times(self) -> List[int]:
        return [s.start for s in self.segments[1:]]


class DeltaGrid(BaseModel):
    """Log-spaced grid over [start, stop); stop itself is excluded since delta < 1."""

    start: float = Field(1e-3, gt=0)
    stop: float = Field(1.0, gt=0, le=1)
    points: int = Field(50, ge=2)

    @model_validator(mode="after")
    def check_range(self):
        if self.start >= self.stop:
            raise ValueError("delta grid needs start < stop")
        return self


class LemmaSection(BaseModel):
    z: Literal["gaussian", "rademacher", "deterministic", "likelihood_ratio"] = "gaussian"
    z_mean: float = 1.0
    z_sd: float = Field(1.0, ge=0)
    alpha: Literal["constant", "geometric", "matrix_power"] = "constant"
    alpha_value: float = Field(1.0, gt=0, le=1)
    kappa: float = Field(0.0, ge=0)
    beta: float = Field(0.5, gt=0, lt=1)
    agent: int = Field(1, ge=1, description="Agent whose likelihood drives the likelihood_ratio z")
    theta: int = Field(2, ge=1)
    source: int = Field(1, ge=1)
    target: int = Field(1, ge=1)
    n_runs: int = Field(1000, gt=0)
    deltas: List[float] = Field(default_factory=lambda: [0.1, 0.01, 0.001])
    epsilons: List[float] = Field(default_factory=lambda: [0.1, 0.05])

    @field_validator("deltas")
    @classmethod
    def validate_deltas(cls, v):
        if not v or any(not 0 < d < 1 for d in v):
            raise ValueError("lemma.deltas must lie in (0, 1)")
        return v


class ExperimentSection(BaseModel):
    delta: float = Field(..., gt=0, lt=1)
    horizon: int = Field(..., gt=0)
    n_runs: int = Field(..., gt=0)
    seed: int = Field(settings.DEFAULT_SEED, ge=0)
    initial_beliefs: Union[Literal["uniform"], List[List[float]]] = "uniform"
    path: Literal["log", "belief"] = "log"
    focus_agent: int = Field(1, ge=1)
    sweep: DeltaGrid = Field(default_factory=DeltaGrid)
    sweep_runs: int = Field(1, gt=0, description="Realizations per grid point")
    normality_deltas: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.01, 0.005])
    lemma: LemmaSection = Field(default_factory=LemmaSection)

    @field_validator("normality_deltas")
    @classmethod
    def validate_normality_deltas(cls, v):
        if not v or any(not 0 < d < 1 for d in v):
            raise ValueError("normality_deltas must lie in (0, 1)")
        return v


class ScenarioConfig(BaseModel):
    """A scenario file: four sections, numbers accepted as decimal strings."""

    name: str = "scenario"
    network: NetworkSection
    likelihoods: LikelihoodSection
    schedule: ScheduleSection
    experiment: ExperimentSection

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_consistency(self):
        n = self.network.n_agents
        assigned = self.likelihoods.assigned_agents()
        if assigned != list(range(1, n + 1)):
            raise ValueError(f"Likelihood groups must assign every agent 1..{n} exactly once, got {assigned}")
        n_hyp = self.likelihoods.n_hypotheses
        for seg in self.schedule.segments:
            if seg.theta0 > n_hyp:
                raise ValueError(f"Schedule theta0={seg.theta0} outside [1, {n_hyp}]")
        init = self.experiment.initial_beliefs
        if init != "uniform" and (len(init) != n or any(len(row) != n_hyp for row in init)):
            raise ValueError(f"initial_beliefs must have shape ({n}, {n_hyp})")
        if self.experiment.focus_agent > n:
            raise ValueError(f"focus_agent {self.experiment.focus_agent} outside [1, {n}]")
        return self

    def scenario_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
