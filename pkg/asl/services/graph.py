# asl/services/graph.py
"""Network topologies, left-stochastic combination matrices and their Perron vectors."""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from asl.core.config import settings
from asl.core.errors import ASLError
from asl.schemas.topology import Topology

logger = logging.getLogger(__name__)


class NotStronglyConnectedError(ASLError):
    """Raised when a topology splits into several strongly-connected components."""

    def __init__(self, components: List[List[int]]):
        self.components = components
        super().__init__(f"Topology is not strongly connected; components: {components}")


class NotStochasticError(ASLError):
    """Raised when a weight matrix is negative somewhere or a column does not sum to one."""
    pass


class PerronConvergenceError(ASLError):
    """Raised when power iteration exhausts its budget."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"Power iteration did not converge after {iterations} iterations (residual {residual:.3e})")


@dataclass(frozen=True)
class CombinationMatrix:
    """weights[l, k] is the weight agent k gives to agent l; columns sum to one."""

    weights: np.ndarray
    perron: np.ndarray

    def __post_init__(self):
        self.weights.setflags(write=False)
        self.perron.setflags(write=False)

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]


# --- Topology generators ---

def ring_topology(n_agents: int, bidirectional: bool = False, self_loops: bool = True) -> Topology:
    edges = {(k, k % n_agents + 1) for k in range(1, n_agents + 1)}
    if bidirectional:
        edges |= {(k, l) for l, k in edges}
    return Topology(n_agents=n_agents, edges=edges, self_loops=self_loops)


def complete_topology(n_agents: int, self_loops: bool = True) -> Topology:
    edges = {(l, k) for l in range(1, n_agents + 1) for k in range(1, n_agents + 1) if l != k}
    return Topology(n_agents=n_agents, edges=edges, self_loops=self_loops)


def star_topology(n_agents: int, hub: int = 1, self_loops: bool = True) -> Topology:
    edges = set()
    for k in range(1, n_agents + 1):
        if k != hub:
            edges |= {(hub, k), (k, hub)}
    return Topology(n_agents=n_agents, edges=edges, self_loops=self_loops)


def circulant_topology(n_agents: int, offsets: Sequence[int], self_loops: bool = True) -> Topology:
    """Agent k exchanges beliefs both ways with k +/- s (mod n) for every offset s."""
    if not offsets or any(not 0 < s < n_agents for s in offsets):
        raise ValueError(f"Circulant offsets must lie in [1, {n_agents - 1}], got {list(offsets)}")
    edges = set()
    for k in range(1, n_agents + 1):
        for s in offsets:
            l = (k - 1 + s) % n_agents + 1
            edges |= {(k, l), (l, k)}
    return Topology(n_agents=n_agents, edges=edges, self_loops=self_loops)


def ring_with_chords(n_agents: int, chords: int, seed: int, bidirectional: bool = True,
                     self_loops: bool = True) -> Topology:
    """
    Ring plus `chords` random extra links drawn without replacement from a seeded generator.

    Stands in for hand-drawn topologies: the ring keeps the graph strongly connected whatever
    chords get drawn.
    """
    base = ring_topology(n_agents, bidirectional=bidirectional, self_loops=False)
    taken = {tuple(sorted(e)) for e in base.edges}
    candidates = [(l, k) for l in range(1, n_agents + 1) for k in range(l + 1, n_agents + 1)
                  if (l, k) not in taken]
    if chords > len(candidates):
        raise ValueError(f"Cannot place {chords} chords; only {len(candidates)} free pairs")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(candidates), size=chords, replace=False)
    edges = set(base.edges)
    for idx in sorted(picked):
        l, k = candidates[idx]
        edges.add((l, k))
        if bidirectional:
            edges.add((k, l))
    logger.debug(f"ring_with_chords(n={n_agents}, seed={seed}) chords: {[candidates[i] for i in sorted(picked)]}")
    return Topology(n_agents=n_agents, edges=edges, self_loops=self_loops)


# --- Connectivity ---

def _digraph(topology: Topology) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(range(1, topology.n_agents + 1))
    g.add_edges_from(topology.edges)
    return g


def is_strongly_connected(topology: Topology) -> bool:
    """Forward and reverse reachability sweeps from agent 1."""
    g = _digraph(topology)
    everyone = set(g.nodes) - {1}
    return nx.descendants(g, 1) >= everyone and nx.descendants(g.reverse(copy=False), 1) >= everyone


def strongly_connected_components(topology: Topology) -> List[List[int]]:
    comps = [sorted(c) for c in nx.strongly_connected_components(_digraph(topology))]
    return sorted(comps)


# --- Combination matrices ---

def perron_eigenvector(weights: np.ndarray, tol: Optional[float] = None,
                       max_iter: Optional[int] = None) -> np.ndarray:
    """
    Perron eigenvector of a left-stochastic primitive matrix by power iteration.

    Starts from the uniform vector and stops when successive normalized iterates differ by at
    most `tol` in the sup norm.

    Raises:
        NotStochasticError: if `weights` is not square, non-negative and column-stochastic.
        PerronConvergenceError: if the iteration budget runs out.
    """
    tol = settings.PERRON_TOLERANCE if tol is None else tol
    max_iter = settings.PERRON_MAX_ITER if max_iter is None else max_iter
    a = _check_left_stochastic(weights)

    n = a.shape[0]
    pi = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        nxt = a @ pi
        nxt /= nxt.sum()
        step = np.max(np.abs(nxt - pi))
        pi = nxt
        if step <= tol:
            break
    else:
        residual = float(np.max(np.abs(a @ pi - pi)))
        logger.error(f"Perron power iteration failed: residual {residual:.3e}")
        raise PerronConvergenceError(residual, max_iter)

    if np.any(pi <= 0):
        # reducible matrix: the limit exists but puts zero mass on some agents
        raise PerronConvergenceError(float(np.max(np.abs(a @ pi - pi))), it)
    logger.debug(f"Perron vector converged in {it} iterations")
    return pi


def _check_left_stochastic(weights) -> np.ndarray:
    a = np.asarray(weights, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotStochasticError(f"Combination matrix must be square, got shape {a.shape}")
    if np.any(a < 0):
        raise NotStochasticError("Combination matrix has negative entries")
    sums = a.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums - 1.0) > settings.STOCHASTIC_TOL)
    if bad.size:
        raise NotStochasticError(f"Columns {[int(k) + 1 for k in bad]} do not sum to 1: {sums[bad]}")
    return a


def build_averaging_matrix(topology: Topology) -> CombinationMatrix:
    """
    Averaging rule: agent k weighs each member of its neighborhood by 1/|N_k|.

    Raises:
        NotStronglyConnectedError: carrying the strongly-connected-component partition.
    """
    if not is_strongly_connected(topology):
        components = strongly_connected_components(topology)
        logger.error(f"Rejecting topology with {len(components)} strongly-connected components")
        raise NotStronglyConnectedError(components)

    n = topology.n_agents
    weights = np.zeros((n, n))
    for k in range(1, n + 1):
        hood = topology.neighborhood(k)
        weights[[l - 1 for l in hood], k - 1] = 1.0 / len(hood)
    return CombinationMatrix(weights=weights, perron=perron_eigenvector(weights))


def matrix_from_weights(weights: Sequence[Sequence[float]]) -> CombinationMatrix:
    a = _check_left_stochastic(weights).copy()
    return CombinationMatrix(weights=a, perron=perron_eigenvector(a))


def topology_of(matrix: CombinationMatrix) -> Topology:
    """Support graph of a combination matrix."""
    ls, ks = np.nonzero(matrix.weights)
    return Topology(n_agents=matrix.n_agents, edges={(int(l) + 1, int(k) + 1) for l, k in zip(ls, ks)},
                    self_loops=False)


def matrix_table(matrix: CombinationMatrix) -> Tuple[List[str], List[List[float]]]:
    """Row-major CSV table of the weights with agent ids in the header."""
    header = ["agent"] + [str(k) for k in range(1, matrix.n_agents + 1)]
    rows = [[l + 1] + list(matrix.weights[l]) for l in range(matrix.n_agents)]
    return header, rows


# --- Geometric mixing ---

class MixingProfile(NamedTuple):
    deviations: np.ndarray  # max_{l,k} |[A^{m+1}]_{lk} - pi_l| for m = 0..horizon-1
    kappa: float
    beta: float


def matrix_powers(matrix: CombinationMatrix, horizon: int) -> np.ndarray:
    """Stack of A^{m+1} for m = 0..horizon-1."""
    n = matrix.n_agents
    out = np.empty((horizon, n, n))
    power = np.eye(n)
    for m in range(horizon):
        power = power @ matrix.weights
        out[m] = power
    return out


def mixing_profile(matrix: CombinationMatrix, horizon: int = 200, floor: float = 1e-13) -> MixingProfile:
    """
    Fit the envelope |[A^{m+1}]_{lk} - pi_l| <= kappa * beta^m.

    beta is the second-largest eigenvalue modulus (nudged up by 1e-3 of its value) and
    kappa the smallest constant that makes the envelope hold over the computed range.
    """
    powers = matrix_powers(matrix, horizon)
    dev = np.max(np.abs(powers - matrix.perron[None, :, None]), axis=(1, 2))
    moduli = np.sort(np.abs(np.linalg.eigvals(matrix.weights)))[::-1]
    slem = moduli[1] if moduli.size > 1 else 0.0
    beta = min(max(slem * (1 + 1e-3), 1e-6), 1.0)
    m = np.arange(horizon)
    usable = dev > floor
    kappa = float(np.max(dev[usable] / beta ** m[usable])) if usable.any() else 0.0
    return MixingProfile(deviations=dev, kappa=max(kappa, 1e-300), beta=float(beta))
