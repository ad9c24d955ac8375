# asl/services/scenario.py
"""Turn a validated ScenarioConfig into the runtime objects the simulators consume."""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from asl.core.errors import ASLError
from asl.schemas.scenario import NetworkSection, ScenarioConfig
from asl.schemas.topology import Topology
from asl.services import graph
from asl.services.graph import CombinationMatrix
from asl.services.likelihood import (AgentLikelihoods, LikelihoodModel, discrete_family, gaussian_family,
                                     laplace_family)

logger = logging.getLogger(__name__)


class ScenarioError(ASLError):
    """Raised for scenario files that parse but cannot be turned into a runnable experiment."""
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: Topology
    matrix: CombinationMatrix
    models: AgentLikelihoods
    segments: Tuple[Tuple[int, int], ...]  # (start, theta0)
    delta: float
    horizon: int
    n_runs: int
    seed: int
    initial_beliefs: Optional[np.ndarray] = None  # (N, H); None means uniform
    path: str = "log"
    focus_agent: int = 1
    config: Optional[ScenarioConfig] = None

    @property
    def n_agents(self) -> int:
        return self.models.n_agents

    @property
    def n_hypotheses(self) -> int:
        return self.models.n_hypotheses

    @property
    def theta0(self) -> int:
        """True hypothesis of the first segment."""
        return self.segments[0][1]

    @property
    def change_times(self) -> List[int]:
        return [start for start, _ in self.segments[1:]]

    @property
    def is_stationary(self) -> bool:
        return len({theta for _, theta in self.segments}) == 1

    def theta_schedule(self, horizon: Optional[int] = None) -> np.ndarray:
        """True hypothesis in force at steps i = 1..horizon."""
        horizon = self.horizon if horizon is None else horizon
        steps = np.arange(1, horizon + 1)
        starts = np.array([s for s, _ in self.segments])
        thetas = np.array([t for _, t in self.segments])
        return thetas[np.searchsorted(starts, steps, side="right") - 1]

    def initial_log_beliefs(self) -> np.ndarray:
        if self.initial_beliefs is None:
            return np.full((self.n_agents, self.n_hypotheses), -np.log(self.n_hypotheses))
        with np.errstate(divide="ignore"):
            return np.log(self.initial_beliefs)

    def with_overrides(self, **changes) -> "Scenario":
        return replace(self, **changes)


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """
    Read a JSON scenario file.

    Raises:
        ScenarioError: missing file or malformed JSON.
        pydantic.ValidationError: well-formed JSON with an invalid shape.
    """
    path = Path(path)
    if not path.is_file():
        logger.error(f"Scenario file not found: {path}")
        raise ScenarioError(f"Scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        logger.error(f"Scenario file {path} is not valid JSON: {e}")
        raise ScenarioError(f"Scenario file {path} is not valid JSON: {e}") from e
    return ScenarioConfig.model_validate(raw)


def build_topology(section: NetworkSection) -> Topology:
    n = section.n_agents
    if section.kind == "ring":
        return graph.ring_topology(n, bidirectional=section.bidirectional, self_loops=section.self_loops)
    if section.kind == "ring_with_chords":
        return graph.ring_with_chords(n, section.chords, section.seed, bidirectional=section.bidirectional,
                                      self_loops=section.self_loops)
    if section.kind == "circulant":
        return graph.circulant_topology(n, section.offsets, self_loops=section.self_loops)
    if section.kind == "complete":
        return graph.complete_topology(n, self_loops=section.self_loops)
    if section.kind == "star":
        return graph.star_topology(n, hub=section.hub, self_loops=section.self_loops)
    if section.kind == "edges":
        return Topology(n_agents=n, edges=section.edges, self_loops=section.self_loops)
    raise ScenarioError(f"network.kind '{section.kind}' does not describe a topology")


def build_matrix(section: NetworkSection) -> Tuple[Topology, CombinationMatrix]:
    if section.kind == "matrix":
        matrix = graph.matrix_from_weights(section.weights)
        return graph.topology_of(matrix), matrix
    topology = build_topology(section)
    return topology, graph.build_averaging_matrix(topology)


def build_likelihoods(config: ScenarioConfig) -> AgentLikelihoods:
    section = config.likelihoods
    per_agent: List[Optional[LikelihoodModel]] = [None] * config.network.n_agents
    for group in section.groups:
        if section.family == "laplace":
            model = laplace_family(group.means, section.scale)
        elif section.family == "gaussian":
            model = gaussian_family(group.means, section.scale)
        else:
            model = discrete_family(section.support, group.pmfs)
        for agent in group.agents:
            per_agent[agent - 1] = model
    labels = tuple(section.labels) if section.labels else None
    return AgentLikelihoods(models=tuple(per_agent), labels=labels)


def build_scenario(config: ScenarioConfig) -> Scenario:
    """
    Assemble topology, combination matrix, likelihood table and schedule.

    Raises:
        NotStronglyConnectedError, NotStochasticError: from the network section.
        LikelihoodError: from the likelihood section.
        ScenarioError: initial beliefs that are not probability vectors.
    """
    topology, matrix = build_matrix(config.network)
    models = build_likelihoods(config)
    exp = config.experiment

    initial = None
    if exp.initial_beliefs != "uniform":
        initial = np.asarray(exp.initial_beliefs, dtype=float)
        sums = initial.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-12)
        if np.any(initial < 0) or bad.size:
            raise ScenarioError(f"initial_beliefs of agents {[int(k) + 1 for k in bad]} are not probability vectors")

    scenario = Scenario(
        name=config.name,
        topology=topology,
        matrix=matrix,
        models=models,
        segments=tuple((s.start, s.theta0) for s in config.schedule.segments),
        delta=exp.delta,
        horizon=exp.horizon,
        n_runs=exp.n_runs,
        seed=exp.seed,
        initial_beliefs=initial,
        path=exp.path,
        focus_agent=exp.focus_agent,
        config=config,
    )
    logger.info(f"Scenario '{config.name}': {scenario.n_agents} agents, {scenario.n_hypotheses} hypotheses, "
                f"segments {list(scenario.segments)}")
    return scenario


def load_scenario(path: Union[str, Path], seed: Optional[int] = None) -> Scenario:
    scenario = build_scenario(load_config(path))
    return scenario if seed is None else scenario.with_overrides(seed=seed)
