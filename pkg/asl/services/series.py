# asl/services/series.py
"""
Harness for the weighted random series s_i(delta) = delta sum_{m<=i} (1-delta)^m alpha_m z_m.

The steady-state log-belief ratio is a superposition of such series with
alpha_m = [A^{m+1}]_lk, so every claim about lambda's small-step behavior reduces to
claims checked here: absolute convergence, mean and variance expansions, weak law and
asymptotic normality.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from asl.core.config import settings
from asl.core.errors import ASLError
from asl.services import streams
from asl.services.graph import CombinationMatrix, matrix_powers, mixing_profile
from asl.services.likelihood import LikelihoodModel, expectation, kl_divergence, llr_covariance
from asl.services.netstats import monotone_within

logger = logging.getLogger(__name__)


class SeriesSpecError(ASLError):
    pass


# --- alpha sequences ---

class AlphaRule(ABC):
    @property
    @abstractmethod
    def limit(self) -> float:
        ...

    @abstractmethod
    def values(self, horizon: int) -> np.ndarray:
        """alpha_m for m = 0..horizon."""

    def describe(self) -> dict:
        return {"rule": type(self).__name__}


class ConstantAlpha(AlphaRule):
    def __init__(self, alpha: float = 1.0):
        if not 0.0 < alpha <= 1.0:
            raise SeriesSpecError(f"alpha must lie in (0, 1], got {alpha}")
        self.alpha = float(alpha)

    @property
    def limit(self) -> float:
        return self.alpha

    def values(self, horizon: int) -> np.ndarray:
        return np.full(horizon + 1, self.alpha)

    def describe(self) -> dict:
        return {"rule": "constant", "alpha": self.alpha}


class GeometricAlpha(AlphaRule):
    """alpha_m = alpha + kappa beta^m."""

    def __init__(self, alpha: float, kappa: float, beta: float):
        if kappa <= 0 or not 0.0 < beta < 1.0:
            raise SeriesSpecError(f"Need kappa > 0 and 0 < beta < 1, got kappa={kappa}, beta={beta}")
        if not (0.0 < alpha and alpha + kappa <= 1.0):
            raise SeriesSpecError(f"alpha + kappa beta^m leaves (0, 1] for alpha={alpha}, kappa={kappa}")
        self.alpha, self.kappa, self.beta = float(alpha), float(kappa), float(beta)

    @property
    def limit(self) -> float:
        return self.alpha

    def values(self, horizon: int) -> np.ndarray:
        return self.alpha + self.kappa * self.beta ** np.arange(horizon + 1)

    def describe(self) -> dict:
        return {"rule": "geometric", "alpha": self.alpha, "kappa": self.kappa, "beta": self.beta}


class MatrixPowerAlpha(AlphaRule):
    """alpha_m = [A^{m+1}]_lk, converging to pi_l (agents 1-based)."""

    def __init__(self, matrix: CombinationMatrix, source: int, target: int):
        self.matrix, self.source, self.target = matrix, int(source), int(target)

    @property
    def limit(self) -> float:
        return float(self.matrix.perron[self.source - 1])

    def values(self, horizon: int) -> np.ndarray:
        out = np.empty(horizon + 1)
        a = self.matrix.weights
        row = np.zeros(self.matrix.n_agents)
        row[self.source - 1] = 1.0
        # e_l^T A^{m+1} e_k, advanced one multiplication per m
        for m in range(horizon + 1):
            row = row @ a
            out[m] = row[self.target - 1]
        return out

    def describe(self) -> dict:
        return {"rule": "matrix_power", "source": self.source, "target": self.target}


# --- z distributions ---

class ZDistribution(ABC):
    @property
    @abstractmethod
    def mean(self) -> float:
        ...

    @property
    @abstractmethod
    def abs_mean(self) -> float:
        ...

    @property
    def variance(self) -> Optional[float]:
        """None when the second moment is infinite."""
        return None

    @abstractmethod
    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        ...

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class GaussianZ(ZDistribution):
    def __init__(self, mean: float = 1.0, sd: float = 1.0):
        self._mean, self.sd = float(mean), float(sd)

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def abs_mean(self) -> float:
        if self.sd == 0:
            return abs(self._mean)
        r = self._mean / self.sd
        return self.sd * math.sqrt(2 / math.pi) * math.exp(-r * r / 2) + self._mean * (1 - 2 * stats.norm.cdf(-r))

    @property
    def variance(self) -> Optional[float]:
        return self.sd ** 2

    def sample(self, rng, size) -> np.ndarray:
        return self._mean + self.sd * rng.standard_normal(size)

    def describe(self) -> dict:
        return {"kind": "gaussian", "mean": self._mean, "sd": self.sd}


class RademacherZ(ZDistribution):
    """Fair +/-1 coin."""

    @property
    def mean(self) -> float:
        return 0.0

    @property
    def abs_mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> Optional[float]:
        return 1.0

    def sample(self, rng, size) -> np.ndarray:
        return np.where(rng.random(size) < 0.5, -1.0, 1.0)

    def describe(self) -> dict:
        return {"kind": "rademacher"}


class DeterministicZ(ZDistribution):
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    @property
    def mean(self) -> float:
        return self.value

    @property
    def abs_mean(self) -> float:
        return abs(self.value)

    @property
    def variance(self) -> Optional[float]:
        return 0.0

    def sample(self, rng, size) -> np.ndarray:
        return np.full(size, self.value)

    def describe(self) -> dict:
        return {"kind": "deterministic", "value": self.value}


class LikelihoodRatioZ(ZDistribution):
    """Push-forward of x(theta) = log L(xi|theta0) - log L(xi|theta) with xi ~ L(.|theta0)."""

    def __init__(self, model: LikelihoodModel, theta0: int, theta: int):
        self.model, self.theta0, self.theta = model, int(theta0), int(theta)
        self._mean = kl_divergence(model, theta0, theta)
        self._abs = expectation(model, theta0, lambda xi, ll: np.abs(ll[..., theta0 - 1] - ll[..., theta - 1]))
        self._var = llr_covariance(model, theta0, theta, theta)

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def abs_mean(self) -> float:
        return self._abs

    @property
    def variance(self) -> Optional[float]:
        return self._var

    def sample(self, rng, size) -> np.ndarray:
        ll = self.model.log_densities(self.model.draw(self.theta0, rng, size))
        return ll[..., self.theta0 - 1] - ll[..., self.theta - 1]

    def describe(self) -> dict:
        return {"kind": "likelihood_ratio", "model": self.model.describe(), "theta0": self.theta0, "theta": self.theta}


# --- Spec and samples ---

def truncation_horizon(delta: float, tol: Optional[float] = None) -> int:
    """Smallest i with (1 - delta)^i / delta < tol: the neglected tail is below tol of the mean scale."""
    tol = settings.SERIES_TRUNCATION_TOL if tol is None else tol
    if not 0.0 < delta < 1.0:
        raise SeriesSpecError(f"delta must satisfy 0 < delta < 1, got {delta}")
    return max(1, int(math.ceil(math.log(tol * delta) / math.log1p(-delta))))


@dataclass(frozen=True)
class SeriesSpec:
    delta: float
    alpha: AlphaRule
    z: ZDistribution
    horizon: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise SeriesSpecError(f"delta must satisfy 0 < delta < 1, got {self.delta}")

    @property
    def resolved_horizon(self) -> int:
        return self.horizon if self.horizon is not None else truncation_horizon(self.delta)

    def with_delta(self, delta: float) -> "SeriesSpec":
        return SeriesSpec(delta=delta, alpha=self.alpha, z=self.z, horizon=None)

    def weights(self, horizon: Optional[int] = None) -> np.ndarray:
        """delta (1-delta)^m alpha_m for m = 0..horizon."""
        horizon = self.resolved_horizon if horizon is None else horizon
        alpha = self.alpha.values(horizon)
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise SeriesSpecError("alpha_m must stay within [0, 1]")
        return self.delta * np.power(1.0 - self.delta, np.arange(horizon + 1)) * alpha


class SeriesSample(NamedTuple):
    partial: np.ndarray   # s_i for i = 0..horizon
    absolute: np.ndarray  # same sums with |z_m|
    seed: Optional[int]

    @property
    def value(self) -> float:
        return float(self.partial[-1])


def partial_sum(spec: SeriesSpec, rng: Optional[np.random.Generator] = None,
                z: Optional[Sequence[float]] = None, seed: Optional[int] = None) -> SeriesSample:
    """
    Forward accumulation of s_i and s_i^abs.

    Pass `z` to evaluate the series on a given realization (its length fixes the horizon).
    """
    if z is None:
        if rng is None:
            raise SeriesSpecError("partial_sum needs a random stream or an explicit z realization")
        z = spec.z.sample(rng, spec.resolved_horizon + 1)
    z = np.asarray(z, dtype=float)
    w = spec.weights(z.size - 1)
    return SeriesSample(partial=np.cumsum(w * z), absolute=np.cumsum(w * np.abs(z)), seed=seed)


def _final_sums(spec: SeriesSpec, seed: int, run_ids: Sequence[int], horizon: Optional[int] = None) -> np.ndarray:
    """s_horizon for each run, one counter-based stream per run."""
    w = spec.weights(horizon)
    out = np.empty(len(run_ids))
    for j, run in enumerate(run_ids):
        rng = streams.run_stream(seed, run, streams.SERIES)
        out[j] = w @ spec.z.sample(rng, w.size)
    return out


# --- Analytic moments ---

class SeriesMoments(NamedTuple):
    mean: float
    variance: Optional[float]
    mean_limit: float
    variance_limit: Optional[float]


def analytic_moments(spec: SeriesSpec, need_variance: bool = True) -> SeriesMoments:
    """
    Exact E[s] and VAR[s] of the infinite series plus their leading-order limits.

    The constant part alpha of alpha_m is summed in closed form; the vanishing part
    alpha_m - alpha is summed numerically until (1-delta)^m drops below 1e-18.

    Raises:
        SeriesSpecError: variance requested while z has an infinite second moment.
    """
    d, q = spec.delta, 1.0 - spec.delta
    alpha = spec.alpha.limit
    cutoff = int(math.ceil(math.log(1e-18) / math.log(q)))
    m = np.arange(cutoff + 1)
    excess = spec.alpha.values(cutoff) - alpha
    mean_factor = alpha + d * np.sum(q ** m * excess)
    mean = spec.z.mean * mean_factor

    var = var_limit = None
    sigma2 = spec.z.variance
    if need_variance:
        if sigma2 is None or not math.isfinite(sigma2):
            raise SeriesSpecError("Variance requested for z with an infinite second moment")
        # alpha_m^2 = alpha^2 + excess (2 alpha + excess)
        sq = alpha * alpha / (d * (2.0 - d)) + np.sum(q ** (2 * m) * excess * (2 * alpha + excess))
        var = sigma2 * d * d * sq
        var_limit = alpha * alpha * sigma2 * d / 2.0
    return SeriesMoments(mean=float(mean), variance=None if var is None else float(var),
                         mean_limit=alpha * spec.z.mean, variance_limit=var_limit)


class SampleMoments(NamedTuple):
    n_runs: int
    mean: float
    variance: float
    mean_se: float
    variance_se: float


def sample_moments(spec: SeriesSpec, n_runs: int, seed: int) -> SampleMoments:
    """Monte Carlo mean and variance of s(delta) with their standard errors."""
    s = _final_sums(spec, seed, range(n_runs))
    var = float(np.var(s, ddof=1))
    m4 = float(np.mean((s - s.mean()) ** 4))
    return SampleMoments(n_runs=n_runs, mean=float(s.mean()), variance=var, mean_se=math.sqrt(var / n_runs),
                         variance_se=math.sqrt(max(m4 - var * var, 0.0) / n_runs))


# --- Verification reports ---

class StabilityReport(NamedTuple):
    n_runs: int
    horizon: int
    checkpoints: List[int]
    max_residuals: List[float]  # per checkpoint, max over runs
    converged_runs: int
    tolerance: float

    @property
    def all_converged(self) -> bool:
        return self.converged_runs == self.n_runs


def verify_stability(spec: SeriesSpec, n_runs: int, seed: int, tolerance: float = 1e-10,
                     checkpoints: Optional[Sequence[int]] = None) -> StabilityReport:
    """
    Cauchy evidence for absolute convergence.

    Each run accumulates s^abs to twice the horizon; the residual at a checkpoint c is
    s^abs_{2 horizon} - s^abs_c, the growth left after c.
    """
    horizon = spec.resolved_horizon
    if (1.0 - spec.delta) ** horizon >= 1e-12:
        raise SeriesSpecError(f"Horizon {horizon} too short for delta={spec.delta}: (1-delta)^horizon >= 1e-12")
    checkpoints = sorted(set(checkpoints or [horizon // 4, horizon // 2, horizon]))
    w = spec.weights(2 * horizon)
    residuals = np.empty((n_runs, len(checkpoints)))
    for run in range(n_runs):
        rng = streams.run_stream(seed, run, streams.SERIES)
        s_abs = np.cumsum(w * np.abs(spec.z.sample(rng, w.size)))
        residuals[run] = s_abs[-1] - s_abs[checkpoints]
    at_horizon = residuals[:, checkpoints.index(horizon)] if horizon in checkpoints else residuals[:, -1]
    converged = int(np.sum(at_horizon < tolerance))
    logger.info(f"Stability: {converged}/{n_runs} runs Cauchy-converged at horizon {horizon} (delta={spec.delta})")
    return StabilityReport(n_runs=n_runs, horizon=horizon, checkpoints=list(checkpoints),
                           max_residuals=residuals.max(axis=0).tolist(), converged_runs=converged,
                           tolerance=tolerance)


class WeakLawRow(NamedTuple):
    delta: float
    exceedance: Dict[float, float]
    gaussian_tail: Optional[Dict[float, float]]


class WeakLawReport(NamedTuple):
    target: float
    n_runs: int
    rows: List[WeakLawRow]
    monotone: Dict[float, bool]


def _draw_finals(spec: SeriesSpec, seed: int, n_runs: int) -> np.ndarray:
    return _final_sums(spec, seed, range(n_runs))


def verify_weak_law(spec: SeriesSpec, delta_grid: Sequence[float], n_runs: int, seed: int,
                    epsilons: Sequence[float] = (0.1, 0.05)) -> WeakLawReport:
    """
    Exceedance P[|s(delta) - alpha m_z| > eps] along a decreasing delta grid.

    For Gaussian z with constant alpha the exact Gaussian tail is reported alongside.
    """
    grid = [float(d) for d in delta_grid]
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise SeriesSpecError(f"delta_grid must be strictly decreasing, got {grid}")
    target = spec.alpha.limit * spec.z.mean
    rows = []
    for delta in grid:
        s = _draw_finals(spec.with_delta(delta), seed, n_runs)
        exceed = {eps: float(np.mean(np.abs(s - target) > eps)) for eps in epsilons}
        tail = None
        if isinstance(spec.z, GaussianZ) and isinstance(spec.alpha, ConstantAlpha):
            sd = math.sqrt(spec.z.variance * spec.alpha.alpha ** 2 * delta / (2.0 - delta))
            tail = {eps: float(2 * stats.norm.sf(eps / sd)) if sd > 0 else 0.0 for eps in epsilons}
        rows.append(WeakLawRow(delta=delta, exceedance=exceed, gaussian_tail=tail))
        logger.info(f"Weak law delta={delta}: exceedance {exceed}")

    monotone = {}
    for eps in epsilons:
        p = np.array([r.exceedance[eps] for r in rows])
        noise = 2.0 * np.sqrt(np.maximum(p * (1 - p), 1.0 / n_runs) / n_runs)
        monotone[eps] = monotone_within(p, noise)
    return WeakLawReport(target=target, n_runs=n_runs, rows=rows, monotone=monotone)


class CLTRow(NamedTuple):
    delta: float
    sample_variance: float
    exact_variance: Optional[float]  # variance of (s - E s)/sqrt(delta) from the exact series
    limit_variance: float            # alpha^2 sigma_z^2 / 2
    skewness: float
    excess_kurtosis: float
    ks_statistic: Optional[float]    # None when the centering is ambiguous


class CLTReport(NamedTuple):
    centering: float
    ambiguous_centering: bool
    n_runs: int
    rows: List[CLTRow]
    distance_shrinks: Optional[bool]


def verify_clt(spec: SeriesSpec, delta_grid: Sequence[float], n_runs: int, seed: int) -> CLTReport:
    """
    Standardize (s(delta) - m_z)/sqrt(delta) and compare with G(0, alpha^2 sigma_z^2 / 2).

    The centering at m_z only coincides with the weak-law limit alpha m_z when alpha = 1; for
    other alphas the report is flagged and no distance to the Gaussian limit is computed.
    """
    sigma2 = spec.z.variance
    if sigma2 is None or not math.isfinite(sigma2):
        raise SeriesSpecError("The CLT check needs z with a finite variance")
    alpha = spec.alpha.limit
    ambiguous = not math.isclose(alpha, 1.0)
    if ambiguous:
        logger.warning(f"CLT centering at m_z is ambiguous for alpha={alpha}; distance to the limit is not computed")
    limit_var = alpha * alpha * sigma2 / 2.0
    rows = []
    for delta in delta_grid:
        sub = spec.with_delta(delta)
        s = _draw_finals(sub, seed, n_runs)
        t = (s - spec.z.mean) / math.sqrt(delta)
        ks = None
        if not ambiguous and limit_var > 0:
            ks = float(stats.kstest(t, "norm", args=(0.0, math.sqrt(limit_var))).statistic)
        exact = analytic_moments(sub).variance / delta
        rows.append(CLTRow(delta=float(delta), sample_variance=float(np.var(t, ddof=1)), exact_variance=exact,
                           limit_variance=limit_var, skewness=float(stats.skew(t)),
                           excess_kurtosis=float(stats.kurtosis(t)), ks_statistic=ks))
        logger.info(f"CLT delta={delta}: variance {rows[-1].sample_variance:.5f} vs limit {limit_var:.5f}")

    shrinks = None
    if not ambiguous:
        d = [r.ks_statistic for r in rows]
        # one-sample KS noise scale at the 5% level
        allowance = 1.36 / math.sqrt(n_runs)
        shrinks = monotone_within(d, allowance) and d[-1] <= d[0] + allowance
    return CLTReport(centering=spec.z.mean, ambiguous_centering=ambiguous, n_runs=n_runs, rows=rows,
                     distance_shrinks=shrinks)


class MixingReport(NamedTuple):
    kappa: float
    beta: float
    horizon: int
    holds: bool


def verify_mixing(matrix: CombinationMatrix, horizon: int = 200) -> MixingReport:
    """|[A^{m+1}]_lk - pi_l| <= kappa beta^m for every pair (l, k), with beta < 1."""
    profile = mixing_profile(matrix, horizon)
    powers = matrix_powers(matrix, horizon)
    dev = np.abs(powers - matrix.perron[None, :, None])
    envelope = profile.kappa * profile.beta ** np.arange(horizon)
    # float floor of the powers themselves
    holds = bool(profile.beta < 1.0 and np.all(dev <= envelope[:, None, None] + 1e-13))
    return MixingReport(kappa=profile.kappa, beta=profile.beta, horizon=horizon, holds=holds)
