# asl/services/likelihood.py
"""
Per-agent likelihood families over a finite hypothesis set.

Hypotheses are 1-based labels (1..H) at every public boundary; arrays indexed by hypothesis
use position `theta - 1`. Densities are exposed as log-densities: belief arithmetic never
leaves the log domain.
"""

import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from asl.core.config import settings
from asl.core.errors import ASLError

logger = logging.getLogger(__name__)

_U_LOW = np.finfo(float).tiny
_U_HIGH = 1.0 - np.finfo(float).eps / 2


class LikelihoodError(ASLError):
    """Raised for malformed likelihood families or out-of-range hypotheses."""
    pass


class SupportMismatchError(LikelihoodError):
    """Raised when an observation has zero density under one of the compared hypotheses."""

    def __init__(self, theta: int, value: float):
        self.theta = theta
        self.value = value
        super().__init__(f"Observation {value!r} has zero density under hypothesis {theta}")


class DivergentIntegralError(LikelihoodError):
    """Raised when a KL divergence or LLR moment is infinite (finite-KL assumption violated)."""
    pass


@dataclass(frozen=True)
class Observation:
    value: float
    agent: int = 1
    time: int = 0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise LikelihoodError(f"Observation value must be finite, got {self.value}")


class LikelihoodModel(ABC):
    """Family of H sampling distributions L(.|theta) for one agent."""

    family: str = ""

    @property
    @abstractmethod
    def n_hypotheses(self) -> int:
        ...

    @abstractmethod
    def log_densities(self, xi) -> np.ndarray:
        """log L(xi|theta) for every theta; shape xi.shape + (H,)."""

    @abstractmethod
    def quantile(self, theta, u) -> np.ndarray:
        """Inverse CDF of L(.|theta) at u in (0, 1); theta broadcasts against u."""

    def breakpoints(self) -> List[float]:
        """Points where the integrands of KL/covariance quadrature have kinks."""
        return []

    def closed_form_kl(self, theta0: int, theta: int) -> Optional[float]:
        return None

    def check_hypothesis(self, theta: int) -> int:
        if not 1 <= int(theta) <= self.n_hypotheses:
            raise LikelihoodError(f"Hypothesis {theta} outside [1, {self.n_hypotheses}]")
        return int(theta)

    def log_density(self, xi, theta: int) -> np.ndarray:
        return self.log_densities(xi)[..., self.check_hypothesis(theta) - 1]

    def draw(self, theta, rng: np.random.Generator, size=None) -> np.ndarray:
        return self.quantile(theta, rng.random(size))

    def describe(self) -> dict:
        return {"family": self.family}

    def __eq__(self, other):
        return type(self) is type(other) and self.describe() == other.describe()

    def __hash__(self):
        return hash(repr(self.describe()))


class LaplaceModel(LikelihoodModel):
    family = "laplace"

    def __init__(self, means: Sequence[float], scale: float = 1.0):
        if scale <= 0:
            raise LikelihoodError(f"Laplace scale must be positive, got {scale}")
        self.means = np.asarray(means, dtype=float)
        self.scale = float(scale)

    @property
    def n_hypotheses(self) -> int:
        return self.means.size

    def log_densities(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)[..., None]
        return -math.log(2 * self.scale) - np.abs(xi - self.means) / self.scale

    def quantile(self, theta, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), _U_LOW, _U_HIGH)
        centered = u - 0.5
        mu = self.means[np.asarray(theta) - 1]
        return mu - self.scale * np.sign(centered) * np.log1p(-2 * np.abs(centered))

    def breakpoints(self) -> List[float]:
        return sorted(set(self.means.tolist()))

    def closed_form_kl(self, theta0: int, theta: int) -> Optional[float]:
        gap = abs(self.means[theta0 - 1] - self.means[theta - 1]) / self.scale
        return gap + math.exp(-gap) - 1.0

    def describe(self) -> dict:
        return {"family": self.family, "means": self.means.tolist(), "scale": self.scale}


class GaussianModel(LikelihoodModel):
    family = "gaussian"

    def __init__(self, means: Sequence[float], scale: float = 1.0):
        if scale <= 0:
            raise LikelihoodError(f"Gaussian scale must be positive, got {scale}")
        self.means = np.asarray(means, dtype=float)
        self.scale = float(scale)

    @property
    def n_hypotheses(self) -> int:
        return self.means.size

    def log_densities(self, xi) -> np.ndarray:
        z = (np.asarray(xi, dtype=float)[..., None] - self.means) / self.scale
        return -0.5 * z * z - math.log(self.scale) - 0.5 * math.log(2 * math.pi)

    def quantile(self, theta, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), _U_LOW, _U_HIGH)
        return self.means[np.asarray(theta) - 1] + self.scale * special.ndtri(u)

    def breakpoints(self) -> List[float]:
        return sorted(set(self.means.tolist()))

    def closed_form_kl(self, theta0: int, theta: int) -> Optional[float]:
        gap = (self.means[theta0 - 1] - self.means[theta - 1]) / self.scale
        return 0.5 * gap * gap

    def describe(self) -> dict:
        return {"family": self.family, "means": self.means.tolist(), "scale": self.scale}


class DiscreteModel(LikelihoodModel):
    """Finite alphabet `support` with one probability row per hypothesis."""

    family = "discrete"

    def __init__(self, support: Sequence[float], pmfs: Sequence[Sequence[float]]):
        self.support = np.asarray(support, dtype=float)
        self.pmfs = np.asarray(pmfs, dtype=float)
        if self.pmfs.ndim != 2 or self.pmfs.shape[1] != self.support.size:
            raise LikelihoodError(f"pmfs must have shape (H, {self.support.size}), got {self.pmfs.shape}")
        if np.unique(self.support).size != self.support.size:
            raise LikelihoodError("Discrete support values must be distinct")
        if np.any(self.pmfs < 0) or np.any(np.abs(self.pmfs.sum(axis=1) - 1.0) > 1e-12):
            raise LikelihoodError("Each pmf row must be non-negative and sum to 1")
        self._order = np.argsort(self.support)
        self._sorted = self.support[self._order]
        self._cdf = np.cumsum(self.pmfs, axis=1)
        self._cdf[:, -1] = 1.0
        with np.errstate(divide="ignore"):
            self._log_pmfs = np.log(self.pmfs)

    @property
    def n_hypotheses(self) -> int:
        return self.pmfs.shape[0]

    def _atom_index(self, xi) -> Tuple[np.ndarray, np.ndarray]:
        xi = np.asarray(xi, dtype=float)
        pos = np.clip(np.searchsorted(self._sorted, xi), 0, self._sorted.size - 1)
        hit = self._sorted[pos] == xi
        return self._order[pos], hit

    def log_densities(self, xi) -> np.ndarray:
        idx, hit = self._atom_index(xi)
        out = self._log_pmfs.T[idx]
        return np.where(hit[..., None], out, -np.inf)

    def quantile(self, theta, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        cdf = self._cdf[np.asarray(theta) - 1]
        cdf = np.broadcast_to(cdf, u.shape + (self.support.size,))
        return self.support[(u[..., None] >= cdf).sum(axis=-1)]

    def describe(self) -> dict:
        return {"family": self.family, "support": self.support.tolist(), "pmfs": self.pmfs.tolist()}


# --- Family constructors ---

def _check_normalization(model: LikelihoodModel) -> LikelihoodModel:
    for theta in range(1, model.n_hypotheses + 1):
        mass = expectation(model, theta, lambda xi, ll: np.ones_like(xi))
        if abs(mass - 1.0) > 1e-8:
            raise LikelihoodError(f"{model.family} density for hypothesis {theta} integrates to {mass}")
    return model


def laplace_family(means: Sequence[float], scale: float = 1.0) -> LaplaceModel:
    """Laplace densities (1/(2*scale)) exp(-|xi - mean_theta| / scale)."""
    if len(means) < 2:
        raise LikelihoodError("At least two hypotheses are required")
    return _check_normalization(LaplaceModel(means, scale))


def gaussian_family(means: Sequence[float], scale: float = 1.0) -> GaussianModel:
    if len(means) < 2:
        raise LikelihoodError("At least two hypotheses are required")
    return _check_normalization(GaussianModel(means, scale))


def discrete_family(support: Sequence[float], pmfs: Sequence[Sequence[float]]) -> DiscreteModel:
    if len(pmfs) < 2:
        raise LikelihoodError("At least two hypotheses are required")
    return DiscreteModel(support, pmfs)


# --- Expectations ---

def expectation(model: LikelihoodModel, theta0: int, fn) -> float:
    """
    E[fn(xi, log L(xi|.))] under xi ~ L(.|theta0).

    Exact sum for discrete families; otherwise adaptive quadrature over the whole line,
    split at the model's kinks so every piece is smooth.
    """
    if isinstance(model, DiscreteModel):
        p = model.pmfs[theta0 - 1]
        live = p > 0
        xi = model.support[live]
        return float(np.sum(p[live] * fn(xi, model.log_densities(xi))))

    def integrand(x):
        ll = model.log_densities(np.array([x]))
        return float(np.exp(ll[0, theta0 - 1]) * fn(np.array([x]), ll)[0])

    cuts = model.breakpoints()
    pieces = [(-np.inf, cuts[0])] + list(zip(cuts[:-1], cuts[1:])) + [(cuts[-1], np.inf)] if cuts else [(-np.inf, np.inf)]
    total = 0.0
    for lo, hi in pieces:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", integrate.IntegrationWarning)
            value, err = integrate.quad(integrand, lo, hi, epsabs=settings.QUAD_ABS_TOL, epsrel=1e-12, limit=200)
        if caught and not (math.isfinite(value) and err < 1e-6):
            raise DivergentIntegralError(f"Quadrature failed on [{lo}, {hi}]: {caught[0].message}")
        logger.debug(f"quad [{lo}, {hi}] -> {value:.6e} (err {err:.1e})")
        total += value
    if not math.isfinite(total):
        raise DivergentIntegralError("Expectation is not finite")
    return total


def _llr(ll: np.ndarray, theta0: int, theta: int) -> np.ndarray:
    # inf - inf cannot occur under theta0: its own log-density is finite on its support
    return ll[..., theta0 - 1] - ll[..., theta - 1]


def log_likelihood_ratio(model: LikelihoodModel, obs: Observation, theta0: int, theta: int) -> float:
    """
    x(theta) = log L(xi|theta0) - log L(xi|theta), computed from log-densities.

    Raises:
        SupportMismatchError: if either density vanishes at the observation.
    """
    theta0, theta = model.check_hypothesis(theta0), model.check_hypothesis(theta)
    ll = model.log_densities(np.array([obs.value]))[0]
    for t in (theta0, theta):
        if not np.isfinite(ll[t - 1]):
            logger.error(f"Agent {obs.agent} at time {obs.time}: zero density under hypothesis {t}")
            raise SupportMismatchError(t, obs.value)
    return float(ll[theta0 - 1] - ll[theta - 1])


def kl_divergence(model: LikelihoodModel, theta0: int, theta: int, method: str = "auto") -> float:
    """
    d(theta) = E[x(theta)] under L(.|theta0).

    `method="auto"` uses a closed form when the family has one, `"quadrature"` forces the
    numerical path.

    Raises:
        DivergentIntegralError: when the divergence is infinite.
    """
    theta0, theta = model.check_hypothesis(theta0), model.check_hypothesis(theta)
    if theta0 == theta:
        return 0.0
    if method == "auto":
        closed = model.closed_form_kl(theta0, theta)
        if closed is not None:
            return max(closed, 0.0)
    elif method != "quadrature":
        raise ValueError(f"Unknown KL method: {method}")

    if isinstance(model, DiscreteModel):
        p0, p = model.pmfs[theta0 - 1], model.pmfs[theta - 1]
        if np.any((p0 > 0) & (p == 0)):
            raise DivergentIntegralError(
                f"KL(L(.|{theta0}) || L(.|{theta})) is infinite: support of hypothesis {theta} misses mass of {theta0}")
    value = expectation(model, theta0, lambda xi, ll: _llr(ll, theta0, theta))
    # tiny negative values are quadrature noise around identical densities
    return max(value, 0.0)


def llr_covariance(model: LikelihoodModel, theta0: int, theta: int, theta_prime: int) -> float:
    """rho(theta, theta') = Cov[x(theta), x(theta')] under L(.|theta0)."""
    theta0 = model.check_hypothesis(theta0)
    a, b = sorted((model.check_hypothesis(theta), model.check_hypothesis(theta_prime)))
    if theta0 in (a, b):
        return 0.0
    # divergent means imply divergent second moments
    da = kl_divergence(model, theta0, a, method="quadrature")
    db = kl_divergence(model, theta0, b, method="quadrature")
    second = expectation(model, theta0, lambda xi, ll: _llr(ll, theta0, a) * _llr(ll, theta0, b))
    return float(second - da * db)


def sample(model: LikelihoodModel, theta_true: int, rng: np.random.Generator,
           agent: int = 1, time: int = 0) -> Observation:
    """One inverse-CDF draw from L(.|theta_true)."""
    theta_true = model.check_hypothesis(theta_true)
    return Observation(value=float(model.draw(theta_true, rng)), agent=agent, time=time)


def wrong_hypotheses(n_hypotheses: int, theta0: int) -> List[int]:
    return [t for t in range(1, n_hypotheses + 1) if t != theta0]


# --- Network table ---

@dataclass(frozen=True)
class AgentLikelihoods:
    """One likelihood family per agent, all over the same H hypotheses."""

    models: Tuple[LikelihoodModel, ...]
    labels: Optional[Tuple[str, ...]] = field(default=None)

    def __post_init__(self):
        if not self.models:
            raise LikelihoodError("At least one agent model is required")
        sizes = {m.n_hypotheses for m in self.models}
        if len(sizes) != 1:
            raise LikelihoodError(f"Agents disagree on the number of hypotheses: {sorted(sizes)}")
        if self.labels is not None and len(self.labels) != self.n_hypotheses:
            raise LikelihoodError("One label per hypothesis is required")

    @property
    def n_agents(self) -> int:
        return len(self.models)

    @property
    def n_hypotheses(self) -> int:
        return self.models[0].n_hypotheses

    def log_likelihoods(self, xi) -> np.ndarray:
        """(..., N) observations -> (..., N, H) log-likelihoods."""
        xi = np.asarray(xi, dtype=float)
        return np.stack([m.log_densities(xi[..., k]) for k, m in enumerate(self.models)], axis=-2)

    def llrs(self, xi, theta0: int) -> np.ndarray:
        """(..., N) observations -> (..., N, H-1) log-likelihood ratios x_k(theta), theta != theta0."""
        ll = self.log_likelihoods(xi)
        others = [t - 1 for t in wrong_hypotheses(self.n_hypotheses, theta0)]
        return ll[..., [theta0 - 1]] - ll[..., others]

    def draw(self, theta0, u) -> np.ndarray:
        """
        Inverse-CDF observations for uniforms `u` of shape (..., T, N).

        `theta0` is a scalar or a (T,) array holding the true hypothesis of each time step.
        """
        u = np.asarray(u, dtype=float)
        theta0 = np.asarray(theta0)
        return np.stack([m.quantile(theta0, u[..., k]) for k, m in enumerate(self.models)], axis=-1)

    def kl_table(self, theta0: int) -> np.ndarray:
        """(N, H) table of d_k(theta); the theta0 column is zero."""
        return np.array([[kl_divergence(m, theta0, t) for t in range(1, self.n_hypotheses + 1)]
                         for m in self.models])

    def covariance_tables(self, theta0: int) -> np.ndarray:
        """(N, H-1, H-1) per-agent rho_k(theta, theta') over the wrong hypotheses."""
        others = wrong_hypotheses(self.n_hypotheses, theta0)
        cache = {}
        out = np.empty((self.n_agents, len(others), len(others)))
        for k, m in enumerate(self.models):
            key = repr(m.describe())
            if key not in cache:
                cache[key] = np.array([[llr_covariance(m, theta0, a, b) for b in others] for a in others])
            out[k] = cache[key]
        return out

    def label(self, theta: int) -> str:
        return self.labels[theta - 1] if self.labels else str(theta)
