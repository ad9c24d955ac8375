# asl/services/reports.py
"""Aggregate experiment arrays into the JSON report models and the CSV row layouts."""

import math
from typing import Iterator, List, Optional

import numpy as np

from asl.schemas.reports import (AgentSummary, NormalityEntry, NormalitySummary, RecoveryEntry, RecoverySummary,
                                 SteadyStateSummary)
from asl.services.likelihood import AgentLikelihoods, wrong_hypotheses
from asl.services.mc import DriftResult, NormalitySweep, SweepResult
from asl.services.netstats import (ONE_SIGMA, TWO_SIGMA, NetworkMoments, confidence_ellipse, error_probability,
                                   moment_expansion)

STEADY_STATE_COLUMNS = ["run", "agent", "theta", "lambda"]
DECISION_COLUMNS = ["run", "agent", "decision"]
SWEEP_COLUMNS = ["delta", "run", "agent", "theta", "lambda", "m_ave", "band"]
ELLIPSE_COLUMNS = ["delta", "kind", "coverage", "center_1", "center_2", "semi_major", "semi_minor", "rotation_deg"]
DRIFT_COLUMNS = ["run_id", "time", "theta0", "learner", "agent", "decision"]
TRAJECTORY_COLUMNS = ["run_id", "time", "learner", "agent", "theta", "lambda"]


def _finite_or_none(value: float) -> Optional[float]:
    value = float(value)
    return value if math.isfinite(value) else None


def steady_state_rows(run_ids, log_ratios, theta0: int) -> Iterator[list]:
    _, n_agents, n_wrong = log_ratios.shape
    wrong = wrong_hypotheses(n_wrong + 1, theta0)
    for r, run in enumerate(run_ids):
        for k in range(n_agents):
            for j, theta in enumerate(wrong):
                yield [int(run), k + 1, theta, log_ratios[r, k, j]]


def decision_rows(run_ids, decisions) -> Iterator[list]:
    for r, run in enumerate(run_ids):
        for k in range(decisions.shape[1]):
            yield [int(run), k + 1, int(decisions[r, k])]


def arrays_from_rows(lambda_rows: List[List[str]], decision_table: List[List[str]], n_agents: int,
                     n_hypotheses: int, theta0: int):
    """Inverse of steady_state_rows / decision_rows, for re-aggregating from files."""
    runs = sorted({int(row[0]) for row in decision_table})
    index = {run: r for r, run in enumerate(runs)}
    column = {theta: j for j, theta in enumerate(wrong_hypotheses(n_hypotheses, theta0))}
    log_ratios = np.empty((len(runs), n_agents, n_hypotheses - 1))
    decisions = np.empty((len(runs), n_agents), dtype=int)
    for row in lambda_rows:
        log_ratios[index[int(row[0])], int(row[1]) - 1, column[int(row[2])]] = float(row[3])
    for row in decision_table:
        decisions[index[int(row[0])], int(row[1]) - 1] = int(row[2])
    return np.asarray(runs), log_ratios, decisions


def summarize_steady_state(log_ratios: np.ndarray, decisions: np.ndarray, moments: NetworkMoments, delta: float,
                           horizon: int) -> SteadyStateSummary:
    """Per-agent sample moments and error rates; a pure function of the arrays it is given."""
    expansion = moment_expansion(moments, delta, log_ratios)
    errors = error_probability(decisions, moments.theta0)
    agents = [AgentSummary(agent=e.agent, mean=e.mean.tolist(), covariance=e.covariance.tolist(),
                           mean_gap=e.mean_gap, trace_ratio=_finite_or_none(e.trace_ratio), errors=er.errors,
                           error_rate=er.rate, error_ci=[er.lower, er.upper])
              for e, er in zip(expansion, errors)]
    return SteadyStateSummary(theta0=moments.theta0, delta=delta, horizon=horizon, n_runs=log_ratios.shape[0],
                              perron=moments.perron.tolist(), m_ave=moments.m_ave.tolist(),
                              c_ave=moments.c_ave.tolist(), agents=agents)


def sweep_rows(result: SweepResult, theta0: int) -> Iterator[list]:
    d, runs, n_agents, n_wrong = result.log_ratios.shape
    wrong = wrong_hypotheses(n_wrong + 1, theta0)
    for i, delta in enumerate(result.deltas):
        band = result.band(delta)
        for r in range(runs):
            for k in range(n_agents):
                for j, theta in enumerate(wrong):
                    yield [delta, i * runs + r, k + 1, theta, result.log_ratios[i, r, k, j], result.m_ave[j], band[j]]


def normality_summary(sweep: NormalitySweep) -> NormalitySummary:
    entries = []
    for row in sweep.rows:
        rep = row.report
        entries.append(NormalityEntry(
            delta=row.delta, n=rep.n,
            skewness=rep.skewness.tolist(), excess_kurtosis=rep.excess_kurtosis.tolist(),
            ks_statistic=[_finite_or_none(v) for v in rep.ks_statistic],
            ks_pvalue=[_finite_or_none(v) for v in rep.ks_pvalue],
            coverage_1sigma=rep.coverage_1sigma, coverage_2sigma=rep.coverage_2sigma,
            degenerate_directions=rep.degenerate_directions,
            limiting_mean=row.limiting.mean.tolist(), limiting_covariance=row.limiting.covariance.tolist(),
            empirical_mean=row.empirical.mean.tolist(), empirical_covariance=row.empirical.covariance.tolist(),
        ))
    return NormalitySummary(agent=sweep.agent, distance_shrinks=sweep.distance_shrinks, entries=entries)


def ellipse_rows(sweep: NormalitySweep) -> Iterator[list]:
    for row in sweep.rows:
        for kind, approx in (("limiting", row.limiting), ("empirical", row.empirical)):
            for coverage in (ONE_SIGMA, TWO_SIGMA):
                e = confidence_ellipse(approx, coverage)
                center = list(e.center[:2]) + [math.nan] * (2 - min(2, e.center.size))
                axes = list(e.semi_axes[:2]) + [math.nan] * (2 - min(2, e.semi_axes.size))
                yield [row.delta, kind, coverage, center[0], center[1], axes[0], axes[1],
                       math.nan if e.rotation_deg is None else e.rotation_deg]


def drift_columns(models: AgentLikelihoods) -> List[str]:
    return DRIFT_COLUMNS + [f"belief_{models.label(t)}" for t in range(1, models.n_hypotheses + 1)]


def drift_rows(result: DriftResult) -> Iterator[list]:
    """One row per (learner, traced run, step, agent): decision and full belief vector."""
    trace = result.trace
    for learner in sorted(trace.beliefs):
        beliefs, decisions = trace.beliefs[learner], trace.decisions[learner]
        # traced runs lead the run-id ordered decision paths
        for s, run in enumerate(trace.run_ids):
            for i in range(beliefs.shape[1]):
                for k in range(beliefs.shape[2]):
                    yield ([int(run), i + 1, int(trace.thetas[i]), learner, k + 1, int(decisions[s, i, k])]
                           + list(beliefs[s, i, k]))


def trajectory_rows(result: DriftResult, theta0: int) -> Iterator[list]:
    """Lambda paths of the traced runs, measured against `theta0`."""
    trace = result.trace
    for learner in sorted(trace.log_ratios):
        lam = trace.log_ratios[learner]
        wrong = wrong_hypotheses(lam.shape[-1] + 1, theta0)
        for s, run in enumerate(trace.run_ids):
            for i in range(lam.shape[1]):
                for k in range(lam.shape[2]):
                    for j, theta in enumerate(wrong):
                        yield [int(run), i + 1, learner, k + 1, theta, lam[s, i, k, j]]


def recovery_summary(result: DriftResult, models: AgentLikelihoods) -> RecoverySummary:
    entries = []
    for rec in result.recoveries:
        entries.append(RecoveryEntry(
            change_time=rec.change_time, theta_from=models.label(rec.theta_from), theta_to=models.label(rec.theta_to),
            agent=rec.agent, asl_faster=rec.asl_faster, n_runs=result.n_runs,
            median={k: _finite_or_none(rec.median(k)) for k in rec.times},
            not_recovered={k: int(np.sum(np.isinf(v))) for k, v in rec.times.items()},
            times={k: [_finite_or_none(t) for t in v] for k, v in rec.times.items()},
        ))
    return RecoverySummary(delta=result.delta, window=result.window,
                           labels=[models.label(t) for t in range(1, models.n_hypotheses + 1)], recoveries=entries)
