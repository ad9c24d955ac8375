# asl/services/learning.py
"""
One time-step of adaptive (ASL) or classic social learning.

Every array carries arbitrary leading batch dimensions followed by (agents, hypotheses), so a
single call advances many independent chains. Beliefs are held as normalized log-beliefs and
renormalized with log-sum-exp at every step.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp

from asl.core.errors import ASLError
from asl.services.graph import CombinationMatrix
from asl.services.likelihood import AgentLikelihoods, wrong_hypotheses

logger = logging.getLogger(__name__)


class StepSizeError(ASLError):
    pass


class BeliefError(ASLError):
    """Raised when a belief vector is not a strictly positive probability vector."""
    pass


@dataclass(frozen=True)
class BeliefState:
    log_beliefs: np.ndarray  # (..., N, H), each agent row log-normalized
    time: int = 0

    @property
    def beliefs(self) -> np.ndarray:
        return np.exp(self.log_beliefs)

    @property
    def n_agents(self) -> int:
        return self.log_beliefs.shape[-2]

    @property
    def n_hypotheses(self) -> int:
        return self.log_beliefs.shape[-1]

    @classmethod
    def from_beliefs(cls, beliefs, time: int = 0) -> "BeliefState":
        """
        Build a state from probability vectors.

        Raises:
            BeliefError: naming the first agent/hypothesis with a non-positive entry, or an
                agent whose vector does not sum to 1.
        """
        mu = np.asarray(beliefs, dtype=float)
        if mu.ndim < 2:
            raise BeliefError(f"Beliefs need shape (..., agents, hypotheses), got {mu.shape}")
        bad = np.argwhere(~(mu > 0))
        if bad.size:
            *_, k, h = bad[0]
            raise BeliefError(f"Belief of agent {k + 1} at hypothesis {h + 1} is not strictly positive")
        sums = mu.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            k = int(np.argwhere(np.abs(sums - 1.0) > 1e-12)[0][-1])
            raise BeliefError(f"Belief of agent {k + 1} sums to {sums.flat[k]!r}, not 1")
        return cls(log_beliefs=np.log(mu), time=time)


@dataclass(frozen=True)
class LogBeliefRatios:
    """lambda_k(theta) = log mu_k(theta0) - log mu_k(theta) for theta != theta0, ascending theta."""

    values: np.ndarray  # (..., N, H-1)
    theta0: int
    delta: Optional[float] = None
    time: int = 0

    @property
    def n_hypotheses(self) -> int:
        return self.values.shape[-1] + 1


def check_step_size(delta: float) -> float:
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise StepSizeError(f"Step-size must satisfy 0 < delta < 1, got {delta}")
    return delta


def normalize_log(log_values: np.ndarray) -> np.ndarray:
    return log_values - logsumexp(log_values, axis=-1, keepdims=True)


def uniform_beliefs(n_agents: int, n_hypotheses: int, batch=()) -> BeliefState:
    shape = tuple(batch) + (n_agents, n_hypotheses)
    return BeliefState(log_beliefs=np.full(shape, -np.log(n_hypotheses)))


# --- Belief domain ---

def adapt_log_beliefs(log_prior: np.ndarray, log_likelihoods: np.ndarray, delta: float) -> np.ndarray:
    """log psi = normalize((1 - delta) log mu + delta log L)."""
    return normalize_log((1.0 - delta) * log_prior + delta * log_likelihoods)


def combine_log_beliefs(log_intermediate: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """log mu_k = normalize(sum_l a_lk log psi_l): neighbors' intermediate beliefs are pooled."""
    return normalize_log(np.einsum("lk,...lh->...kh", weights, log_intermediate))


def adaptive_update(prior: BeliefState, observations, delta: float, models: AgentLikelihoods) -> BeliefState:
    """Adaptation step: psi_k(theta) proportional to mu_k^(1-delta)(theta) L_k^delta(xi_k|theta)."""
    delta = check_step_size(delta)
    log_lik = models.log_likelihoods(observations)
    return BeliefState(adapt_log_beliefs(prior.log_beliefs, log_lik, delta), time=prior.time)


def combine(intermediate: BeliefState, matrix: CombinationMatrix) -> BeliefState:
    """Combination step: geometric pooling of neighbors' intermediate beliefs."""
    return BeliefState(combine_log_beliefs(intermediate.log_beliefs, matrix.weights), time=intermediate.time)


def asl_step(state: BeliefState, observations, delta: float, models: AgentLikelihoods,
             matrix: CombinationMatrix) -> BeliefState:
    out = combine(adaptive_update(state, observations, delta, models), matrix)
    return BeliefState(out.log_beliefs, time=state.time + 1)


def classic_step(state: BeliefState, observations, models: AgentLikelihoods,
                 matrix: CombinationMatrix) -> BeliefState:
    """Classic log-linear rule: psi_k proportional to mu_k L_k, then the same combination."""
    log_psi = normalize_log(state.log_beliefs + models.log_likelihoods(observations))
    return BeliefState(combine_log_beliefs(log_psi, matrix.weights), time=state.time + 1)


# --- Log-belief-ratio domain ---

def log_ratio_step(lam: LogBeliefRatios, llrs: np.ndarray, delta: float,
                   matrix: CombinationMatrix) -> LogBeliefRatios:
    """lambda_k,i = sum_l a_lk [(1 - delta) lambda_l,i-1 + delta x_l,i]."""
    delta = check_step_size(delta)
    mixed = (1.0 - delta) * lam.values + delta * np.asarray(llrs, dtype=float)
    values = np.einsum("lk,...lj->...kj", matrix.weights, mixed)
    return LogBeliefRatios(values=values, theta0=lam.theta0, delta=delta, time=lam.time + 1)


def classic_log_ratio_step(lam: LogBeliefRatios, llrs: np.ndarray, matrix: CombinationMatrix) -> LogBeliefRatios:
    """lambda_i = A^T (lambda_i-1 + x_i)."""
    values = np.einsum("lk,...lj->...kj", matrix.weights, lam.values + np.asarray(llrs, dtype=float))
    return LogBeliefRatios(values=values, theta0=lam.theta0, delta=None, time=lam.time + 1)


def log_ratios_from_beliefs(state: BeliefState, theta0: int, delta: Optional[float] = None) -> LogBeliefRatios:
    others = [t - 1 for t in wrong_hypotheses(state.n_hypotheses, theta0)]
    lb = state.log_beliefs
    return LogBeliefRatios(values=lb[..., [theta0 - 1]] - lb[..., others], theta0=theta0, delta=delta,
                           time=state.time)


def beliefs_from_log_ratios(lam: LogBeliefRatios) -> BeliefState:
    shape = lam.values.shape[:-1] + (lam.n_hypotheses,)
    log_unnorm = np.zeros(shape)
    others = [t - 1 for t in wrong_hypotheses(lam.n_hypotheses, lam.theta0)]
    log_unnorm[..., others] = -lam.values
    return BeliefState(normalize_log(log_unnorm), time=lam.time)


# --- Decisions ---

def decide(belief: Union[BeliefState, np.ndarray]) -> np.ndarray:
    """
    Hypothesis maximizing the current belief, per agent (1-based).

    Ties go to the smallest hypothesis index. Works on beliefs or log-beliefs alike since
    argmax is invariant under strictly increasing maps.
    """
    values = belief.log_beliefs if isinstance(belief, BeliefState) else np.asarray(belief)
    return np.argmax(values, axis=-1) + 1


def decide_from_log_ratios(lam: LogBeliefRatios) -> np.ndarray:
    """Same decision rule read off lambda: theta0 wins unless some lambda(theta) is negative."""
    return decide(beliefs_from_log_ratios(lam).log_beliefs)
