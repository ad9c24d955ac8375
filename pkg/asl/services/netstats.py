# asl/services/netstats.py
"""Network-level theory: m_ave, C_ave, small-step moment expansions and Gaussian approximations."""

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from asl.core.config import settings
from asl.core.errors import ASLError
from asl.services.graph import CombinationMatrix
from asl.services.likelihood import AgentLikelihoods, wrong_hypotheses

logger = logging.getLogger(__name__)

ONE_SIGMA = 0.682689492137086
TWO_SIGMA = 0.954499736103642


class InsufficientSamplesError(ASLError):
    pass


@dataclass(frozen=True)
class NetworkMoments:
    theta0: int
    m_ave: np.ndarray      # (H-1,)
    c_ave: np.ndarray      # (H-1, H-1)
    kl_table: np.ndarray   # (N, H), theta0 column zero
    rho_table: np.ndarray  # (N, H-1, H-1)
    perron: np.ndarray

    @property
    def wrong(self) -> List[int]:
        return wrong_hypotheses(self.kl_table.shape[1], self.theta0)


@dataclass(frozen=True)
class GaussianApprox:
    mean: np.ndarray
    covariance: np.ndarray
    kind: str  # "limiting" | "empirical-per-agent"
    agent: Optional[int] = None


class MomentExpansion(NamedTuple):
    agent: int
    mean: np.ndarray
    covariance: np.ndarray
    mean_gap: float           # ||m_k - m_ave||_inf
    mean_gap_over_delta: float
    trace_ratio: float        # tr(C_k) / (delta tr(C_ave) / 2)


class ErrorRate(NamedTuple):
    agent: int
    errors: int
    n: int
    rate: float
    lower: float
    upper: float


class Ellipse(NamedTuple):
    coverage: float
    center: np.ndarray
    semi_axes: np.ndarray
    axes: np.ndarray               # columns are principal directions
    rotation_deg: Optional[float]  # angle of the major axis, two-dimensional case only


class NormalityReport(NamedTuple):
    n: int
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray
    coverage_1sigma: float
    coverage_2sigma: float
    inside_1sigma: int
    inside_2sigma: int
    degenerate_directions: List[List[float]]
    ellipses: List[Ellipse]


# --- Theory ---

def _wrong_columns(models: AgentLikelihoods, theta0: int) -> List[int]:
    return [t - 1 for t in wrong_hypotheses(models.n_hypotheses, theta0)]


def network_mean(models: AgentLikelihoods, perron: np.ndarray, theta0: int) -> np.ndarray:
    """m_ave(theta) = sum_l pi_l d_l(theta) over the wrong hypotheses."""
    d = models.kl_table(theta0)[:, _wrong_columns(models, theta0)]
    return np.asarray(perron) @ d


def network_covariance(models: AgentLikelihoods, perron: np.ndarray, theta0: int) -> np.ndarray:
    """C_ave = sum_l pi_l^2 rho_l, for data independent across agents."""
    rho = models.covariance_tables(theta0)
    c = np.einsum("l,lij->ij", np.asarray(perron) ** 2, rho)
    return 0.5 * (c + c.T)


def network_moments(models: AgentLikelihoods, perron: np.ndarray, theta0: int) -> NetworkMoments:
    kl = models.kl_table(theta0)
    rho = models.covariance_tables(theta0)
    pi = np.asarray(perron)
    c = np.einsum("l,lij->ij", pi ** 2, rho)
    return NetworkMoments(theta0=theta0, m_ave=pi @ kl[:, _wrong_columns(models, theta0)],
                          c_ave=0.5 * (c + c.T), kl_table=kl, rho_table=rho, perron=pi)


def gaussian_limit(moments: NetworkMoments, delta: float) -> GaussianApprox:
    """lambda ~ G(m_ave, C_ave delta / 2)."""
    return GaussianApprox(mean=moments.m_ave.copy(), covariance=moments.c_ave * (delta / 2.0), kind="limiting")


def exact_steady_moments(matrix: CombinationMatrix, moments: NetworkMoments, delta: float,
                         tol: float = 1e-16):
    """
    Exact steady-state mean (N, H-1) and covariance (N, H-1, H-1) of lambda_k.

    Sums delta sum_m (1-delta)^m [A^{m+1}]_lk d_l and delta^2 sum_m (1-delta)^{2m}
    [A^{m+1}]_lk^2 rho_l; once A^{m+1} has converged to pi 1^T the geometric remainder is
    added in closed form.
    """
    d = moments.kl_table[:, [t - 1 for t in moments.wrong]]
    rho = moments.rho_table
    pi = moments.perron
    q = 1.0 - delta
    mean = np.zeros_like(d)
    cov = np.zeros((matrix.n_agents,) + rho.shape[1:])
    power = matrix.weights.copy()
    limit = np.outer(pi, np.ones(matrix.n_agents))
    weight = 1.0
    m = 0
    while weight > tol:
        mean += weight * (power.T @ d)
        cov += weight * weight * np.einsum("lk,lij->kij", power ** 2, rho)
        m += 1
        weight *= q
        power = power @ matrix.weights
        if np.max(np.abs(power - limit)) < 1e-15:
            # sum_{j>=m} q^j = q^m / delta, sum_{j>=m} q^{2j} = q^{2m} / (1 - q^2)
            mean += (weight / delta) * (pi @ d)[None, :]
            cov += (weight * weight / (1.0 - q * q)) * np.einsum("l,lij->ij", pi ** 2, rho)[None]
            break
    logger.debug(f"exact_steady_moments summed {m} terms at delta={delta}")
    return delta * mean, delta * delta * cov


def sample_mean_cov(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample mean and unbiased covariance of (runs, dim) samples.

    Sums are correctly rounded (`math.fsum`), so the result depends on the values alone and not
    on the memory layout or the order in which worker batches were concatenated.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, dim = x.shape
    mean = np.array([math.fsum(x[:, i]) for i in range(dim)]) / n
    centered = x - mean
    cov = np.empty((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            cov[i, j] = cov[j, i] = math.fsum(centered[:, i] * centered[:, j]) / (n - 1)
    return mean, cov


def moment_expansion(moments: NetworkMoments, delta: float, samples: np.ndarray) -> List[MomentExpansion]:
    """
    Per-agent empirical steady-state mean and covariance against the small-step predictions.

    Args:
        samples: steady-state log-belief ratios, shape (runs, N, H-1).

    Raises:
        InsufficientSamplesError: fewer than MIN_MOMENT_SAMPLES runs.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < settings.MIN_MOMENT_SAMPLES:
        raise InsufficientSamplesError(
            f"moment_expansion needs at least {settings.MIN_MOMENT_SAMPLES} samples, got {samples.shape[0]}")
    reference = delta * np.trace(moments.c_ave) / 2.0
    out = []
    for k in range(samples.shape[1]):
        mean, cov = sample_mean_cov(samples[:, k])
        gap = float(np.max(np.abs(mean - moments.m_ave)))
        out.append(MomentExpansion(agent=k + 1, mean=mean, covariance=cov, mean_gap=gap,
                                   mean_gap_over_delta=gap / delta,
                                   trace_ratio=float(np.trace(cov) / reference) if reference > 0 else float("nan")))
    return out


def empirical_approx(samples: np.ndarray, agent: Optional[int] = None) -> GaussianApprox:
    """Per-agent approximation G(m_k, C_k) from (runs, H-1) samples."""
    mean, cov = sample_mean_cov(samples)
    return GaussianApprox(mean=mean, covariance=cov, kind="empirical-per-agent", agent=agent)


# --- Decisions ---

def error_probability(decisions: np.ndarray, theta0: int) -> List[ErrorRate]:
    """
    Per-agent steady-state error rate with a 95% binomial interval.

    Zero errors report the rule-of-three interval [0, 3/n]; otherwise Clopper-Pearson.

    Args:
        decisions: (runs, N) decided hypotheses.
    """
    decisions = np.asarray(decisions)
    n = decisions.shape[0]
    if n < settings.MIN_DECISION_SAMPLES:
        raise InsufficientSamplesError(
            f"error_probability needs at least {settings.MIN_DECISION_SAMPLES} runs, got {n}")
    out = []
    for k in range(decisions.shape[1]):
        errors = int(np.sum(decisions[:, k] != theta0))
        if errors == 0:
            lo, hi = 0.0, min(1.0, 3.0 / n)
        elif errors == n:
            lo, hi = max(0.0, 1.0 - 3.0 / n), 1.0
        else:
            ci = stats.binomtest(errors, n).proportion_ci(confidence_level=0.95, method="exact")
            lo, hi = float(ci.low), float(ci.high)
        out.append(ErrorRate(agent=k + 1, errors=errors, n=n, rate=errors / n, lower=lo, upper=hi))
    return out


# --- Normality ---

def confidence_ellipse(approx: GaussianApprox, coverage: float) -> Ellipse:
    """Region {x : (x-m)^T C^+ (x-m) <= chi2_q(dim)} holding `coverage` of the Gaussian mass."""
    dim = approx.mean.size
    eigval, eigvec = np.linalg.eigh(approx.covariance)
    eigval = np.clip(eigval, 0.0, None)
    radius2 = stats.chi2.ppf(coverage, df=dim)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    rotation = float(np.degrees(np.arctan2(eigvec[1, 0], eigvec[0, 0]))) if dim == 2 else None
    return Ellipse(coverage=coverage, center=approx.mean.copy(), semi_axes=np.sqrt(eigval * radius2),
                   axes=eigvec, rotation_deg=rotation)


def normality_diagnostics(samples: np.ndarray, approx: GaussianApprox) -> NormalityReport:
    """
    Marginal shape statistics, KS distance to the approximating marginals and ellipse coverage.

    A singular approximating covariance does not fail the report: the degenerate directions
    are listed and coverage is measured in the remaining subspace.

    Args:
        samples: (runs, H-1) steady-state log-belief ratios of one agent.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, dim = x.shape
    if n < settings.MIN_NORMALITY_SAMPLES:
        raise InsufficientSamplesError(
            f"normality_diagnostics needs at least {settings.MIN_NORMALITY_SAMPLES} samples, got {n}")

    eigval, eigvec = np.linalg.eigh(approx.covariance)
    scale = max(float(np.max(np.abs(eigval))), 1e-300)
    live = eigval > 1e-10 * scale
    degenerate = [eigvec[:, j].tolist() for j in np.flatnonzero(~live)]
    if degenerate:
        logger.warning(f"Approximating covariance is singular along {len(degenerate)} direction(s)")

    centered = x - approx.mean
    proj = centered @ eigvec[:, live]
    d2 = np.sum(proj ** 2 / eigval[live], axis=1)
    rank = int(live.sum())
    inside1 = int(np.sum(d2 <= stats.chi2.ppf(ONE_SIGMA, df=rank))) if rank else 0
    inside2 = int(np.sum(d2 <= stats.chi2.ppf(TWO_SIGMA, df=rank))) if rank else 0

    sd = np.sqrt(np.clip(np.diag(approx.covariance), 0.0, None))
    ks_stat = np.full(dim, np.nan)
    ks_p = np.full(dim, np.nan)
    for j in range(dim):
        if sd[j] > 0:
            res = stats.kstest(x[:, j], "norm", args=(approx.mean[j], sd[j]))
            ks_stat[j], ks_p[j] = res.statistic, res.pvalue

    return NormalityReport(
        n=n,
        skewness=np.atleast_1d(stats.skew(x, axis=0, bias=False)),
        excess_kurtosis=np.atleast_1d(stats.kurtosis(x, axis=0, fisher=True, bias=False)),
        ks_statistic=ks_stat,
        ks_pvalue=ks_p,
        coverage_1sigma=inside1 / n,
        coverage_2sigma=inside2 / n,
        inside_1sigma=inside1,
        inside_2sigma=inside2,
        degenerate_directions=degenerate,
        ellipses=[confidence_ellipse(approx, ONE_SIGMA), confidence_ellipse(approx, TWO_SIGMA)],
    )


def monotone_within(values: Sequence[float], allowance) -> bool:
    """True when values[j+1] <= values[j] + allowance for every consecutive pair."""
    v = np.asarray(values, dtype=float)
    slack = np.broadcast_to(np.asarray(allowance, dtype=float), v.shape)
    return bool(np.all(v[1:] <= v[:-1] + slack[1:]))
