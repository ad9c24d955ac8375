# asl/services/validation.py
"""
Checks a scenario against the three modelling assumptions before anything is simulated:
strictly positive initial beliefs, finite KL divergences and global identifiability.
"""

import logging
import math
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from asl.core.errors import ASLError
from asl.services.likelihood import AgentLikelihoods, DivergentIntegralError, kl_divergence
from asl.services.scenario import Scenario

logger = logging.getLogger(__name__)

POSITIVE_BELIEFS = "positive-initial-beliefs"
FINITE_KL = "finite-kl"
IDENTIFIABILITY = "global-identifiability"


class Diagnostic(NamedTuple):
    assumption: str
    message: str
    agent: Optional[int] = None
    theta: Optional[int] = None
    theta0: Optional[int] = None


class AssumptionViolation(ASLError):
    """Raised with every failed assumption of a scenario."""

    def __init__(self, diagnostics: List[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(d.message for d in diagnostics))


class ValidationReport(NamedTuple):
    kl_tables: Dict[int, np.ndarray]  # theta0 -> (N, H), inf where divergent
    perron: np.ndarray
    diagnostics: List[Diagnostic]

    @property
    def passed(self) -> bool:
        return not self.diagnostics


def check_initial_beliefs(beliefs: Optional[np.ndarray]) -> List[Diagnostic]:
    if beliefs is None:
        return []
    out = []
    for k, h in np.argwhere(~(np.asarray(beliefs) > 0)):
        out.append(Diagnostic(POSITIVE_BELIEFS, f"Initial belief of agent {k + 1} at hypothesis {h + 1} is zero",
                              agent=int(k) + 1, theta=int(h) + 1))
    return out


def kl_table_with_divergences(models: AgentLikelihoods, theta0: int) -> np.ndarray:
    """Same as AgentLikelihoods.kl_table but records an infinite divergence as inf instead of raising."""
    table = np.zeros((models.n_agents, models.n_hypotheses))
    for k, model in enumerate(models.models):
        for t in range(1, models.n_hypotheses + 1):
            try:
                table[k, t - 1] = kl_divergence(model, theta0, t)
            except DivergentIntegralError:
                table[k, t - 1] = math.inf
    return table


def check_finite_kl(table: np.ndarray, theta0: int) -> List[Diagnostic]:
    return [Diagnostic(FINITE_KL, f"KL divergence of agent {k + 1} against hypothesis {t + 1} is infinite "
                                  f"(true hypothesis {theta0})", agent=int(k) + 1, theta=int(t) + 1, theta0=theta0)
            for k, t in np.argwhere(~np.isfinite(table))]


def check_identifiability(table: np.ndarray, theta0: int) -> List[Diagnostic]:
    out = []
    for t in range(1, table.shape[1] + 1):
        if t != theta0 and not np.any(table[:, t - 1] > 0):
            out.append(Diagnostic(IDENTIFIABILITY, f"No agent can distinguish hypothesis {t} from the true "
                                                   f"hypothesis {theta0}", theta=t, theta0=theta0))
    return out


def validate_scenario(scenario: Scenario, raise_on_violation: bool = True) -> ValidationReport:
    """
    Run every assumption check for each true hypothesis of the schedule.

    Raises:
        AssumptionViolation: when `raise_on_violation` and some check failed.
    """
    diagnostics = check_initial_beliefs(scenario.initial_beliefs)
    tables = {}
    for theta0 in sorted({theta for _, theta in scenario.segments}):
        table = kl_table_with_divergences(scenario.models, theta0)
        tables[theta0] = table
        diagnostics += check_finite_kl(table, theta0)
        diagnostics += check_identifiability(table, theta0)

    for d in diagnostics:
        logger.error(f"Assumption '{d.assumption}' violated: {d.message}")
    report = ValidationReport(kl_tables=tables, perron=np.asarray(scenario.matrix.perron), diagnostics=diagnostics)
    if diagnostics and raise_on_violation:
        raise AssumptionViolation(diagnostics)
    if not diagnostics:
        logger.info(f"Scenario '{scenario.name}' satisfies all assumptions")
    return report
