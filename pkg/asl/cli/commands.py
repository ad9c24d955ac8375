# asl/cli/commands.py
"""One handler per subcommand. Handlers write through an OutputStore and return nothing."""

import logging
import sys
from typing import Dict, List, Optional, TextIO

import numpy as np

from asl.schemas.reports import Command
from asl.schemas.scenario import LemmaSection
from asl.services import mc, reports, series
from asl.services.graph import matrix_table
from asl.services.netstats import network_moments
from asl.services.scenario import Scenario, ScenarioError
from asl.services.storage import OutputStore
from asl.services.validation import ValidationReport, validate_scenario

logger = logging.getLogger(__name__)


def print_validation(scenario: Scenario, report: ValidationReport, stream: Optional[TextIO] = None):
    """KL table per true hypothesis and the Perron vector, as plain text on `stream` (stdout by default)."""
    stream = stream or sys.stdout
    models = scenario.models
    labels = [models.label(t) for t in range(1, models.n_hypotheses + 1)]
    for theta0, table in report.kl_tables.items():
        stream.write(f"KL divergences d_k(theta), true hypothesis {models.label(theta0)}\n")
        stream.write("agent  " + "  ".join(f"{label:>12}" for label in labels) + "\n")
        for k, row in enumerate(table):
            stream.write(f"{k + 1:>5}  " + "  ".join(f"{v:>12.6g}" for v in row) + "\n")
    stream.write("Perron vector\n")
    stream.write("  ".join(f"{p:.10f}" for p in report.perron) + "\n")
    for d in report.diagnostics:
        stream.write(f"VIOLATION [{d.assumption}] {d.message}\n")


def run_validate(scenario: Scenario, command: Command, stream: Optional[TextIO] = None) -> ValidationReport:
    report = validate_scenario(scenario, raise_on_violation=False)
    print_validation(scenario, report, stream)
    return report


def run_simulate(scenario: Scenario, command: Command, store: OutputStore):
    sample = mc.run_steady_state(scenario, workers=command.workers)
    moments = network_moments(scenario.models, scenario.matrix.perron, scenario.theta0)
    meta = {"delta": sample.delta, "horizon": sample.horizon, "theta0": sample.theta0}
    store.save_table("steady_state.csv", reports.STEADY_STATE_COLUMNS,
                     reports.steady_state_rows(sample.run_ids, sample.log_ratios, sample.theta0), meta)
    store.save_table("decisions.csv", reports.DECISION_COLUMNS,
                     reports.decision_rows(sample.run_ids, sample.decisions), meta)
    header, rows = matrix_table(scenario.matrix)
    store.save_table("matrix.csv", header, rows)
    summary = reports.summarize_steady_state(sample.log_ratios, sample.decisions, moments, sample.delta,
                                             sample.horizon)
    store.save_json("summary.json", summary.model_dump(mode="json"))


def run_sweep(scenario: Scenario, command: Command, store: OutputStore):
    result = mc.consistency_sweep(scenario, workers=command.workers)
    store.save_table("sweep.csv", reports.SWEEP_COLUMNS, reports.sweep_rows(result, scenario.theta0),
                     {"theta0": scenario.theta0, "points": result.deltas.size})


def run_normality(scenario: Scenario, command: Command, store: OutputStore):
    result = mc.normality_sweep(scenario, workers=command.workers)
    store.save_json("normality.json", reports.normality_summary(result).model_dump(mode="json"))
    store.save_table("ellipses.csv", reports.ELLIPSE_COLUMNS, reports.ellipse_rows(result),
                     {"agent": result.agent})


def run_drift(scenario: Scenario, command: Command, store: OutputStore):
    result = mc.run_drift(scenario, workers=command.workers)
    meta = {"delta": result.delta, "change_times": " ".join(map(str, result.trace.change_times)),
            "trace_runs": result.trace.run_ids.size}
    store.save_table("drift_trace.csv", reports.drift_columns(scenario.models), reports.drift_rows(result), meta)
    store.save_table("trajectory.csv", reports.TRAJECTORY_COLUMNS,
                     reports.trajectory_rows(result, scenario.theta0), {**meta, "reference_theta0": scenario.theta0})
    store.save_json("recovery.json", reports.recovery_summary(result, scenario.models).model_dump(mode="json"))


def lemma_spec(scenario: Scenario, section: LemmaSection, delta: float) -> series.SeriesSpec:
    if section.alpha == "constant":
        alpha = series.ConstantAlpha(section.alpha_value)
    elif section.alpha == "geometric":
        alpha = series.GeometricAlpha(section.alpha_value, section.kappa, section.beta)
    else:
        alpha = series.MatrixPowerAlpha(scenario.matrix, section.source, section.target)

    if section.z == "gaussian":
        z = series.GaussianZ(section.z_mean, section.z_sd)
    elif section.z == "rademacher":
        z = series.RademacherZ()
    elif section.z == "deterministic":
        z = series.DeterministicZ(section.z_mean)
    else:
        if section.agent > scenario.n_agents:
            raise ScenarioError(f"lemma.agent {section.agent} outside [1, {scenario.n_agents}]")
        z = series.LikelihoodRatioZ(scenario.models.models[section.agent - 1], scenario.theta0, section.theta)
    return series.SeriesSpec(delta=delta, alpha=alpha, z=z)


def lemma_report(scenario: Scenario, section: LemmaSection) -> Dict:
    """Every series check on one (alpha, z) choice plus the mixing check of the scenario matrix."""
    seed = scenario.seed
    deltas = sorted(section.deltas, reverse=True)
    base = lemma_spec(scenario, section, deltas[0])

    moments: List[Dict] = []
    for delta in deltas:
        spec = base.with_delta(delta)
        finite_var = spec.z.variance is not None and np.isfinite(spec.z.variance)
        exact = series.analytic_moments(spec, need_variance=finite_var)
        mc_moments = series.sample_moments(spec, section.n_runs, seed)
        moments.append({"delta": delta, "analytic": exact._asdict(), "monte_carlo": mc_moments._asdict()})

    stability = series.verify_stability(base.with_delta(deltas[-1]), section.n_runs, seed)
    weak_law = series.verify_weak_law(base, deltas, section.n_runs, seed, epsilons=section.epsilons)
    out = {
        "alpha": base.alpha.describe(),
        "z": base.z.describe(),
        "moments": moments,
        "stability": {**stability._asdict(), "all_converged": stability.all_converged},
        "weak_law": {
            "target": weak_law.target,
            "rows": [{"delta": r.delta, "exceedance": r.exceedance, "gaussian_tail": r.gaussian_tail}
                     for r in weak_law.rows],
            "monotone": weak_law.monotone,
        },
        "mixing": series.verify_mixing(scenario.matrix)._asdict(),
    }
    if base.z.variance is not None and np.isfinite(base.z.variance):
        clt = series.verify_clt(base, deltas, section.n_runs, seed)
        out["clt"] = {"centering": clt.centering, "ambiguous_centering": clt.ambiguous_centering,
                      "distance_shrinks": clt.distance_shrinks, "rows": [r._asdict() for r in clt.rows]}
    return out


def run_lemma(scenario: Scenario, command: Command, store: OutputStore):
    section = scenario.config.experiment.lemma if scenario.config is not None else LemmaSection()
    store.save_json("lemma.json", lemma_report(scenario, section))


HANDLERS = {
    "simulate": run_simulate,
    "sweep": run_sweep,
    "normality": run_normality,
    "drift": run_drift,
    "lemma": run_lemma,
}
