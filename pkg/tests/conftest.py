import json
from pathlib import Path

import pytest

from asl.schemas.scenario import ScenarioConfig
from asl.services.scenario import build_scenario

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

LAPLACE_GROUPS = [
    {"agents": [1, 2, 3], "means": [0.5, 0.5, 1.5]},
    {"agents": [4, 5, 6], "means": [0.5, 1.5, 1.5]},
    {"agents": [7, 8, 9, 10], "means": [0.5, 1.0, 0.5]},
]


def scenario_dict(**experiment) -> dict:
    """Three-group Laplace likelihoods on the shipped circulant network, with experiment overrides."""
    exp = {"delta": 0.1, "horizon": 2000, "n_runs": 100, "seed": 1234}
    exp.update(experiment)
    return {
        "name": "laplace_groups_test",
        "network": {"kind": "circulant", "n_agents": 10, "offsets": [1, 2, 3]},
        "likelihoods": {"family": "laplace", "scale": 1.0, "groups": LAPLACE_GROUPS},
        "schedule": {"segments": [{"start": 0, "theta0": 1}]},
        "experiment": exp,
    }


@pytest.fixture
def laplace_groups_config() -> ScenarioConfig:
    return ScenarioConfig.model_validate(scenario_dict())


@pytest.fixture
def laplace_groups(laplace_groups_config):
    return build_scenario(laplace_groups_config)


@pytest.fixture
def uniform_laplace_groups():
    """Three-group Laplace likelihoods on a complete graph: uniform Perron vector."""
    raw = scenario_dict()
    raw["network"] = {"kind": "complete", "n_agents": 10}
    return build_scenario(ScenarioConfig.model_validate(raw))


@pytest.fixture
def drift_scenario():
    raw = scenario_dict(horizon=1000, n_runs=20)
    raw["likelihoods"]["labels"] = ["sunny", "cloudy", "rainy"]
    raw["schedule"] = {"segments": [{"start": 0, "theta0": 1}, {"start": 200, "theta0": 3}]}
    return build_scenario(ScenarioConfig.model_validate(raw))


@pytest.fixture
def write_scenario(tmp_path):
    def _write(raw: dict, name: str = "scenario.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(raw))
        return path
    return _write
