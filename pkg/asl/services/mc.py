# asl/services/mc.py
"""
Monte Carlo engine: many independent chains to steady state, delta sweeps and the drift experiment.

Runs are grouped into fixed-size batches that advance together as one array operation. Each
run draws its observations from its own counter-based stream (see `asl.services.streams`), so
any result depends only on (scenario, seed, run id) and never on batch placement or on the
number of worker processes. Batches are reduced in run-id order.
"""

import logging
import math
from multiprocessing import Pool
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from asl.core.config import settings
from asl.services import streams
from asl.services.learning import (BeliefState, LogBeliefRatios, asl_step, beliefs_from_log_ratios,
                                   check_step_size, classic_log_ratio_step, classic_step, decide,
                                   decide_from_log_ratios, log_ratio_step, log_ratios_from_beliefs)
from asl.services.netstats import (ErrorRate, GaussianApprox, NetworkMoments, NormalityReport, empirical_approx,
                                   error_probability, gaussian_limit, monotone_within, network_moments,
                                   normality_diagnostics)
from asl.services.scenario import Scenario, ScenarioError
from asl.services.validation import validate_scenario

logger = logging.getLogger(__name__)

RUN_BATCH = 25
LEARNERS = ("asl", "classic")


class ChainResult(NamedTuple):
    run_ids: np.ndarray
    log_ratios: np.ndarray                  # (R, N, H-1) at the final instant, against scenario.theta0
    decisions: np.ndarray                   # (R, N) at the final instant
    trace_run_ids: Optional[np.ndarray]     # (S,) runs with id < TRACE_RUNS, when recorded
    trace_log_ratios: Optional[np.ndarray]  # (S, T, N, H-1) of the traced runs
    trace_decisions: Optional[np.ndarray]   # (R, T, N), when recorded


# --- Chain kernel ---

def simulate_chains(scenario: Scenario, run_ids: Sequence[int], delta: Optional[float] = None,
                    horizon: Optional[int] = None, learner: str = "asl", path: Optional[str] = None,
                    record: bool = False) -> ChainResult:
    """
    Advance one chain per run id for `horizon` steps.

    `path="belief"` iterates the adapt/combine recursion on log-beliefs; `path="log"` iterates
    the linear recursion on log-belief ratios. Both consume identical observations, so their
    outputs agree to rounding.

    With `record=True` every run keeps its decision path and runs with id below
    `settings.TRACE_RUNS` also keep their lambda path.
    """
    if learner not in LEARNERS:
        raise ValueError(f"Unknown learner '{learner}'")
    delta = scenario.delta if delta is None else delta
    if learner == "asl":
        delta = check_step_size(delta)
    horizon = scenario.horizon if horizon is None else int(horizon)
    path = scenario.path if path is None else path
    if path not in ("log", "belief"):
        raise ValueError(f"Unknown path '{path}'")

    run_ids = np.asarray(list(run_ids), dtype=int)
    rngs = [streams.run_stream(scenario.seed, r, streams.OBSERVATIONS) for r in run_ids]
    models, matrix, ref = scenario.models, scenario.matrix, scenario.theta0
    n_runs, n_agents = run_ids.size, scenario.n_agents
    thetas = scenario.theta_schedule(horizon)

    beliefs = BeliefState(np.broadcast_to(scenario.initial_log_beliefs(),
                                          (n_runs, n_agents, scenario.n_hypotheses)).copy())
    lam = log_ratios_from_beliefs(beliefs, ref, delta if learner == "asl" else None)

    traced = run_ids < settings.TRACE_RUNS
    trace_lam = np.empty((int(traced.sum()), horizon) + lam.values.shape[1:]) if record else None
    trace_dec = np.empty((n_runs, horizon, n_agents), dtype=np.int16) if record else None

    chunk = max(1, settings.OBSERVATION_CHUNK)
    for lo in range(0, horizon, chunk):
        hi = min(lo + chunk, horizon)
        u = np.stack([rng.random((hi - lo, n_agents)) for rng in rngs])  # (R, c, N)
        xi = models.draw(thetas[lo:hi], u)
        llrs = models.llrs(xi, ref) if path == "log" else None
        for j in range(hi - lo):
            if path == "log":
                if learner == "asl":
                    lam = log_ratio_step(lam, llrs[:, j], delta, matrix)
                else:
                    lam = classic_log_ratio_step(lam, llrs[:, j], matrix)
            else:
                if learner == "asl":
                    beliefs = asl_step(beliefs, xi[:, j], delta, models, matrix)
                else:
                    beliefs = classic_step(beliefs, xi[:, j], models, matrix)
            if record:
                if path == "belief":
                    lam = log_ratios_from_beliefs(beliefs, ref)
                trace_lam[:, lo + j] = lam.values[traced]
                trace_dec[:, lo + j] = decide_from_log_ratios(lam)

    if path == "belief":
        lam = log_ratios_from_beliefs(beliefs, ref)
        decisions = decide(beliefs)
    else:
        decisions = decide_from_log_ratios(lam)
    return ChainResult(run_ids=run_ids, log_ratios=lam.values, decisions=decisions,
                       trace_run_ids=run_ids[traced] if record else None, trace_log_ratios=trace_lam,
                       trace_decisions=trace_dec)


def _run_batch(task) -> ChainResult:
    scenario, run_ids, kwargs = task
    return simulate_chains(scenario, run_ids, **kwargs)


def batches(run_ids: Sequence[int], size: int = RUN_BATCH) -> List[List[int]]:
    run_ids = list(run_ids)
    return [run_ids[i:i + size] for i in range(0, len(run_ids), size)]


def execute(tasks: List[tuple], workers: Optional[int] = None) -> List[ChainResult]:
    """Map batch tasks over a process pool; results come back in task order."""
    workers = settings.DEFAULT_WORKERS if workers is None else int(workers)
    if workers <= 1 or len(tasks) <= 1:
        return [_run_batch(t) for t in tasks]
    with Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(_run_batch, tasks)


def _concat_traces(parts: List[ChainResult], field: str) -> Optional[np.ndarray]:
    values = [getattr(p, field) for p in parts]
    return None if values[0] is None else np.concatenate(values)


def run_many(scenario: Scenario, run_ids: Sequence[int], workers: Optional[int] = None, **kwargs) -> ChainResult:
    """Run `run_ids` in fixed batches and concatenate in run-id order."""
    parts = execute([(scenario, b, kwargs) for b in batches(sorted(run_ids))], workers)
    return ChainResult(
        run_ids=np.concatenate([p.run_ids for p in parts]),
        log_ratios=np.concatenate([p.log_ratios for p in parts]),
        decisions=np.concatenate([p.decisions for p in parts]),
        trace_run_ids=_concat_traces(parts, "trace_run_ids"),
        trace_log_ratios=_concat_traces(parts, "trace_log_ratios"),
        trace_decisions=_concat_traces(parts, "trace_decisions"),
    )


# --- Steady state ---

class SteadyStateSample(NamedTuple):
    delta: float
    theta0: int
    horizon: int
    seed: int
    run_ids: np.ndarray
    log_ratios: np.ndarray  # (R, N, H-1)
    decisions: np.ndarray   # (R, N)


def burn_in_length(scenario: Scenario, delta: Optional[float] = None, horizon: Optional[int] = None,
                   moments: Optional[NetworkMoments] = None) -> int:
    """
    Smallest i with (1 - delta)^i * max|lambda_0| / min m_ave < BURN_IN_TOLERANCE,
    clamped to [BURN_IN_FLOOR, horizon / 2].
    """
    delta = check_step_size(scenario.delta if delta is None else delta)
    horizon = scenario.horizon if horizon is None else horizon
    floor = settings.BURN_IN_FLOOR
    cap = max(floor, horizon // 2)

    init = log_ratios_from_beliefs(BeliefState(scenario.initial_log_beliefs()), scenario.theta0).values
    bound = float(np.max(np.abs(init))) if init.size else 0.0
    if bound == 0.0:
        return floor
    if not math.isfinite(bound):
        return cap
    if moments is None:
        moments = network_moments(scenario.models, scenario.matrix.perron, scenario.theta0)
    scale = float(np.min(moments.m_ave))
    if scale <= 0:
        return cap
    steps = math.ceil(math.log(settings.BURN_IN_TOLERANCE * scale / bound) / math.log1p(-delta))
    return int(min(max(steps, floor), cap))


def _require_stationary(scenario: Scenario):
    if not scenario.is_stationary:
        logger.error(f"Scenario '{scenario.name}' changes the true hypothesis; steady state is undefined")
        raise ScenarioError("Steady-state experiments need a constant true hypothesis")


def run_steady_state(scenario: Scenario, n_runs: Optional[int] = None, delta: Optional[float] = None,
                     horizon: Optional[int] = None, path: Optional[str] = None, workers: Optional[int] = None,
                     first_run: int = 0, validate: bool = True) -> SteadyStateSample:
    """
    One steady-state sample per run: final lambda and decision after `horizon` ASL steps.

    Raises:
        ScenarioError: non-constant schedule or a horizon shorter than the burn-in.
        AssumptionViolation: from scenario validation.
    """
    _require_stationary(scenario)
    if validate:
        validate_scenario(scenario)
    delta = check_step_size(scenario.delta if delta is None else delta)
    horizon = scenario.horizon if horizon is None else int(horizon)
    n_runs = scenario.n_runs if n_runs is None else int(n_runs)
    burn = burn_in_length(scenario, delta, horizon)
    if horizon < burn:
        raise ScenarioError(f"Horizon {horizon} is shorter than the burn-in {burn}")

    logger.info(f"Steady state: {n_runs} runs x {horizon} steps at delta={delta} (seed {scenario.seed})")
    out = run_many(scenario, range(first_run, first_run + n_runs), workers, delta=delta, horizon=horizon,
                   learner="asl", path=path)
    return SteadyStateSample(delta=delta, theta0=scenario.theta0, horizon=horizon, seed=scenario.seed,
                             run_ids=out.run_ids, log_ratios=out.log_ratios, decisions=out.decisions)


def settling_horizon(scenario: Scenario, delta: float) -> int:
    """Scenario horizon, stretched so (1 - delta)^horizon < BURN_IN_TOLERANCE at small delta."""
    needed = math.ceil(math.log(settings.BURN_IN_TOLERANCE) / math.log1p(-delta))
    return max(scenario.horizon, needed)


# --- Sweeps ---

class SweepResult(NamedTuple):
    deltas: np.ndarray      # (D,) ascending
    horizons: np.ndarray    # (D,)
    log_ratios: np.ndarray  # (D, runs, N, H-1)
    m_ave: np.ndarray
    c_ave: np.ndarray

    def band(self, delta: float, width: float = 5.0) -> np.ndarray:
        """Gaussian band half-width width * sqrt(c_ave(theta, theta) delta / 2)."""
        return width * np.sqrt(np.diag(self.c_ave) * delta / 2.0)


def default_sweep_grid(scenario: Scenario) -> np.ndarray:
    grid = scenario.config.experiment.sweep if scenario.config is not None else None
    start, stop, points = (grid.start, grid.stop, grid.points) if grid else (1e-3, 1.0, 50)
    return np.geomspace(start, stop, points, endpoint=False)


def consistency_sweep(scenario: Scenario, delta_grid: Optional[Sequence[float]] = None,
                      runs_per_delta: Optional[int] = None, workers: Optional[int] = None) -> SweepResult:
    """
    Steady-state snapshots of lambda across a delta grid, each grid point on fresh runs.

    Grid point j uses run ids j * runs_per_delta ... so every delta sees a different realization.
    """
    _require_stationary(scenario)
    validate_scenario(scenario)
    grid = np.sort(np.asarray(default_sweep_grid(scenario) if delta_grid is None else delta_grid, dtype=float))
    for d in grid:
        check_step_size(d)
    if runs_per_delta is None:
        runs_per_delta = scenario.config.experiment.sweep_runs if scenario.config is not None else 1

    tasks, owners, horizons = [], [], []
    for j, delta in enumerate(grid):
        horizon = settling_horizon(scenario, delta)
        horizons.append(horizon)
        ids = range(j * runs_per_delta, (j + 1) * runs_per_delta)
        for b in batches(ids):
            tasks.append((scenario, b, {"delta": float(delta), "horizon": horizon, "learner": "asl"}))
            owners.append(j)
    logger.info(f"Sweep: {grid.size} step-sizes x {runs_per_delta} runs")
    parts = execute(tasks, workers)

    per_delta: Dict[int, List[np.ndarray]] = {}
    for j, part in zip(owners, parts):
        per_delta.setdefault(j, []).append(part.log_ratios)
    stacked = np.stack([np.concatenate(per_delta[j]) for j in range(grid.size)])
    moments = network_moments(scenario.models, scenario.matrix.perron, scenario.theta0)
    return SweepResult(deltas=grid, horizons=np.asarray(horizons), log_ratios=stacked, m_ave=moments.m_ave,
                       c_ave=moments.c_ave)


class ErrorRateRow(NamedTuple):
    delta: float
    rates: List[ErrorRate]


class ErrorRateSweep(NamedTuple):
    rows: List[ErrorRateRow]  # delta decreasing
    monotone: Dict[int, bool]  # agent -> non-increasing up to binomial noise


def error_rate_sweep(scenario: Scenario, deltas: Sequence[float], n_runs: Optional[int] = None,
                     horizon: Optional[int] = None, workers: Optional[int] = None) -> ErrorRateSweep:
    """Per-agent steady-state error probabilities as delta decreases."""
    validate_scenario(scenario)
    rows = []
    for delta in sorted(deltas, reverse=True):
        sample = run_steady_state(scenario, n_runs=n_runs, delta=delta, horizon=horizon, workers=workers,
                                  validate=False)
        rows.append(ErrorRateRow(delta=float(delta), rates=error_probability(sample.decisions, scenario.theta0)))
        worst = max(r.rate for r in rows[-1].rates)
        logger.info(f"Error rates at delta={delta}: worst agent {worst:.4f}")

    monotone = {}
    for k in range(scenario.n_agents):
        rates = [row.rates[k].rate for row in rows]
        slack = [0.0] + [row.rates[k].upper - row.rates[k].rate for row in rows[:-1]]
        monotone[k + 1] = monotone_within(rates, slack)
    return ErrorRateSweep(rows=rows, monotone=monotone)


class StabilityResult(NamedTuple):
    horizon: int
    n_runs: int
    agent: int
    statistics: np.ndarray  # (H-1,) two-sample KS statistics
    pvalues: np.ndarray
    level: float
    passed: bool


def stability_check(scenario: Scenario, horizon: int, n_runs: int, delta: Optional[float] = None,
                    agent: Optional[int] = None, level: float = 0.01,
                    workers: Optional[int] = None) -> StabilityResult:
    """
    Two-sample KS test between lambda at `horizon` and at `2 * horizon`.

    The two samples come from disjoint run ids and are independent. The test passes when no
    marginal rejects at `level` divided among the H-1 marginals.
    """
    agent = scenario.focus_agent if agent is None else agent
    first = run_steady_state(scenario, n_runs=n_runs, delta=delta, horizon=horizon, workers=workers)
    second = run_steady_state(scenario, n_runs=n_runs, delta=delta, horizon=2 * horizon, workers=workers,
                              first_run=n_runs, validate=False)
    a, b = first.log_ratios[:, agent - 1], second.log_ratios[:, agent - 1]
    results = [stats.ks_2samp(a[:, j], b[:, j]) for j in range(a.shape[1])]
    pvalues = np.array([r.pvalue for r in results])
    passed = bool(np.all(pvalues >= level / len(results)))
    logger.info(f"Stability T={horizon} vs 2T: p-values {pvalues.round(4).tolist()} -> {'pass' if passed else 'fail'}")
    return StabilityResult(horizon=horizon, n_runs=n_runs, agent=agent,
                           statistics=np.array([r.statistic for r in results]), pvalues=pvalues, level=level,
                           passed=passed)


class NormalityRow(NamedTuple):
    delta: float
    limiting: GaussianApprox
    empirical: GaussianApprox
    report: NormalityReport
    samples: np.ndarray  # (runs, H-1) of the focus agent


class NormalitySweep(NamedTuple):
    agent: int
    rows: List[NormalityRow]  # delta decreasing
    distance_shrinks: bool


def normality_sweep(scenario: Scenario, deltas: Optional[Sequence[float]] = None, n_runs: Optional[int] = None,
                    agent: Optional[int] = None, workers: Optional[int] = None) -> NormalitySweep:
    """Steady-state samples of one agent against G(m_ave, C_ave delta / 2), per delta."""
    if deltas is None:
        deltas = scenario.config.experiment.normality_deltas if scenario.config is not None else [0.1, 0.05, 0.01, 0.005]
    agent = scenario.focus_agent if agent is None else agent
    validate_scenario(scenario)
    moments = network_moments(scenario.models, scenario.matrix.perron, scenario.theta0)
    rows = []
    for delta in sorted(deltas, reverse=True):
        sample = run_steady_state(scenario, n_runs=n_runs, delta=delta, horizon=settling_horizon(scenario, delta),
                                  workers=workers, validate=False)
        x = sample.log_ratios[:, agent - 1]
        limiting = gaussian_limit(moments, delta)
        rows.append(NormalityRow(delta=float(delta), limiting=limiting, empirical=empirical_approx(x, agent),
                                 report=normality_diagnostics(x, limiting), samples=x))
        report = rows[-1].report
        logger.info(f"Normality delta={delta}: coverage {report.coverage_1sigma:.2f}/{report.coverage_2sigma:.2f}")

    distances = [float(np.nanmax(r.report.ks_statistic)) for r in rows]
    allowance = 1.36 / math.sqrt(rows[0].report.n)
    return NormalitySweep(agent=agent, rows=rows, distance_shrinks=monotone_within(distances, allowance))


# --- Drift ---

class DriftTrace(NamedTuple):
    run_ids: np.ndarray                          # (S,) traced runs
    thetas: np.ndarray                           # (T,) true hypothesis at steps 1..T
    change_times: List[int]
    log_ratios: Dict[str, np.ndarray]            # learner -> (S, T, N, H-1) against scenario.theta0
    beliefs: Dict[str, np.ndarray]               # learner -> (S, T, N, H)
    decisions: Dict[str, np.ndarray]             # learner -> (R, T, N) of every run


class Recovery(NamedTuple):
    change_time: int
    theta_from: int
    theta_to: int
    agent: int
    times: Dict[str, np.ndarray]  # learner -> (R,) steps after the change; inf if never recovered

    @property
    def asl_faster(self) -> int:
        return int(np.sum(self.times["asl"] < self.times["classic"]))

    def median(self, learner: str) -> float:
        return float(np.median(self.times[learner]))


class DriftResult(NamedTuple):
    delta: float
    n_runs: int
    window: int
    trace: DriftTrace
    recoveries: List[Recovery]


def recovery_time(decisions: np.ndarray, theta: int, start: int, stop: int, window: int) -> float:
    """
    Steps from `start` to the first step t in [start, stop] opening `window` consecutive
    decisions equal to `theta`; inf if none. Steps are 1-based; `decisions[i - 1]` is step i.
    """
    ok = np.asarray(decisions[start - 1:stop]) == theta
    if ok.size < window:
        return math.inf
    runs = np.convolve(ok.astype(int), np.ones(window, dtype=int), mode="valid")
    hits = np.flatnonzero(runs == window)
    return float(hits[0]) if hits.size else math.inf


def run_drift(scenario: Scenario, n_runs: Optional[int] = None, delta: Optional[float] = None,
              horizon: Optional[int] = None, agent: Optional[int] = None, window: Optional[int] = None,
              workers: Optional[int] = None) -> DriftResult:
    """
    ASL against the classic learner on identical observation streams across a changing truth.

    With a single-segment schedule the trace is produced and the recovery list is empty.
    """
    validate_scenario(scenario)
    delta = check_step_size(scenario.delta if delta is None else delta)
    horizon = scenario.horizon if horizon is None else int(horizon)
    n_runs = scenario.n_runs if n_runs is None else int(n_runs)
    agent = scenario.focus_agent if agent is None else agent
    window = settings.RECOVERY_WINDOW if window is None else window
    if any(start > horizon for start, _ in scenario.segments):
        raise ScenarioError(f"Schedule changes after the horizon {horizon}")

    logger.info(f"Drift: {n_runs} paired runs x {horizon} steps, changes at {scenario.change_times}")
    results = {learner: run_many(scenario, range(n_runs), workers, delta=delta, horizon=horizon, learner=learner,
                                 record=True)
               for learner in LEARNERS}

    beliefs = {learner: beliefs_from_log_ratios(LogBeliefRatios(values=res.trace_log_ratios,
                                                                theta0=scenario.theta0)).beliefs
               for learner, res in results.items()}
    trace = DriftTrace(run_ids=results["asl"].trace_run_ids, thetas=scenario.theta_schedule(horizon),
                       change_times=scenario.change_times,
                       log_ratios={learner: res.trace_log_ratios for learner, res in results.items()},
                       beliefs=beliefs,
                       decisions={learner: res.trace_decisions for learner, res in results.items()})

    recoveries = []
    bounds = [s for s, _ in scenario.segments[1:]] + [horizon + 1]
    for (start, theta_to), stop, (_, theta_from) in zip(scenario.segments[1:], bounds[1:], scenario.segments):
        times = {learner: np.array([recovery_time(res.trace_decisions[r, :, agent - 1], theta_to, start, stop - 1,
                                                  window) for r in range(n_runs)])
                 for learner, res in results.items()}
        rec = Recovery(change_time=start, theta_from=theta_from, theta_to=theta_to, agent=agent, times=times)
        never = {learner: int(np.sum(np.isinf(t))) for learner, t in times.items()}
        if any(never.values()):
            logger.warning(f"Runs without recovery after the change at {start}: {never}")
        logger.info(f"Change at {start}: ASL faster in {rec.asl_faster}/{n_runs} runs; medians "
                    f"{rec.median('asl')} vs {rec.median('classic')}")
        recoveries.append(rec)
    return DriftResult(delta=delta, n_runs=n_runs, window=window, trace=trace, recoveries=recoveries)
