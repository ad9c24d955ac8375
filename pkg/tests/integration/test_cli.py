import io
from contextlib import redirect_stdout
from unittest.mock import patch

import pytest

from asl.cli.main import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, MANIFEST, main
from asl.schemas.reports import SteadyStateSummary
from asl.services.netstats import network_moments
from asl.services.reports import arrays_from_rows, summarize_steady_state
from asl.services.scenario import load_scenario
from asl.services.storage import read_json, read_table
from tests.conftest import FIXTURES, SCENARIOS, scenario_dict


def small_scenario(**experiment) -> dict:
    exp = {
        "horizon": 500,
        "n_runs": 100,
        "sweep": {"start": 0.05, "stop": 0.5, "points": 3},
        "normality_deltas": [0.1],
        "lemma": {"n_runs": 200, "deltas": [0.1, 0.05]},
    }
    exp.update(experiment)
    return scenario_dict(**exp)


@pytest.fixture
def scenario_path(write_scenario):
    return write_scenario(small_scenario())


def listed_files(out_dir) -> list:
    return sorted(p.name for p in out_dir.iterdir())


class TestValidate:
    def test_laplace_groups_passes(self, capsys, tmp_path):
        out = tmp_path / "never"
        status = main(["validate", "--scenario", str(SCENARIOS / "laplace_groups.json"), "--out", str(out)])
        printed = capsys.readouterr().out
        assert status == EXIT_OK
        assert "Perron vector" in printed
        assert "VIOLATION" not in printed
        assert not out.exists()

    @pytest.mark.parametrize("fixture,assumption", [
        ("zero_initial_belief.json", "positive-initial-beliefs"),
        ("infinite_kl.json", "finite-kl"),
        ("unidentifiable.json", "global-identifiability"),
    ])
    def test_violations(self, capsys, fixture, assumption):
        status = main(["validate", "--scenario", str(FIXTURES / fixture)])
        assert status == EXIT_VALIDATION
        assert f"VIOLATION [{assumption}]" in capsys.readouterr().out

    def test_output_follows_redirected_stdout(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            status = main(["validate", "--scenario", str(FIXTURES / "infinite_kl.json")])
        assert status == EXIT_VALIDATION
        assert "Perron vector" in buffer.getvalue()
        assert "VIOLATION [finite-kl]" in buffer.getvalue()

    def test_missing_scenario(self, tmp_path):
        assert main(["validate", "--scenario", str(tmp_path / "nope.json")]) == EXIT_VALIDATION

    def test_disconnected_network(self, write_scenario):
        raw = small_scenario()
        raw["network"] = {"kind": "edges", "n_agents": 10, "edges": [[1, 2], [2, 1]]}
        assert main(["validate", "--scenario", str(write_scenario(raw))]) == EXIT_VALIDATION


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) != 0
        assert "usage" in capsys.readouterr().err

    def test_out_required(self, scenario_path):
        assert main(["simulate", "--scenario", str(scenario_path)]) != 0


class TestSimulate:
    def test_outputs_and_manifest(self, scenario_path, tmp_path):
        out = tmp_path / "run"
        assert main(["simulate", "--scenario", str(scenario_path), "--out", str(out)]) == EXIT_OK

        manifest = read_json(out / MANIFEST)
        assert manifest["status"] == "complete"
        assert manifest["files"] == listed_files(out)
        assert set(manifest["files"]) == {"steady_state.csv", "decisions.csv", "matrix.csv", "summary.json", MANIFEST}
        meta, columns, rows = read_table(out / "steady_state.csv")
        assert meta["scenario_hash"] == manifest["scenario_hash"]
        assert meta["seed"] == "1234"
        assert len(rows) == 100 * 10 * 2

    def test_json_reports_carry_header(self, scenario_path, tmp_path):
        out = tmp_path / "run"
        main(["simulate", "--scenario", str(scenario_path), "--out", str(out)])
        manifest = read_json(out / MANIFEST)
        header = read_json(out / "summary.json")["header"]
        assert header == {"scenario_hash": manifest["scenario_hash"], "seed": 1234}

    def test_summary_reproduced_from_tables(self, scenario_path, tmp_path):
        out = tmp_path / "run"
        main(["simulate", "--scenario", str(scenario_path), "--out", str(out)])
        scenario = load_scenario(scenario_path)

        meta, _, lambda_rows = read_table(out / "steady_state.csv")
        _, _, decision_rows = read_table(out / "decisions.csv")
        _, log_ratios, decisions = arrays_from_rows(lambda_rows, decision_rows, 10, 3, int(meta["theta0"]))
        moments = network_moments(scenario.models, scenario.matrix.perron, scenario.theta0)
        rebuilt = summarize_steady_state(log_ratios, decisions, moments, float(meta["delta"]), int(meta["horizon"]))

        assert rebuilt == SteadyStateSummary.model_validate(read_json(out / "summary.json"))

    def test_workers_do_not_change_outputs(self, scenario_path, tmp_path):
        main(["simulate", "--scenario", str(scenario_path), "--out", str(tmp_path / "a"), "--workers", "1"])
        main(["simulate", "--scenario", str(scenario_path), "--out", str(tmp_path / "b"), "--workers", "3"])
        for name in ("steady_state.csv", "decisions.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override(self, scenario_path, tmp_path):
        main(["simulate", "--scenario", str(scenario_path), "--out", str(tmp_path / "a")])
        main(["simulate", "--scenario", str(scenario_path), "--out", str(tmp_path / "b"), "--seed", "7"])
        assert read_json(tmp_path / "b" / MANIFEST)["seed"] == 7
        assert (tmp_path / "a" / "steady_state.csv").read_bytes() != (tmp_path / "b" / "steady_state.csv").read_bytes()

    def test_failure_removes_partial_outputs(self, scenario_path, tmp_path):
        out = tmp_path / "run"
        with patch("asl.services.reports.summarize_steady_state", side_effect=RuntimeError("disk on fire")):
            status = main(["simulate", "--scenario", str(scenario_path), "--out", str(out)])
        assert status == EXIT_RUNTIME
        assert listed_files(out) == [MANIFEST]
        manifest = read_json(out / MANIFEST)
        assert manifest["status"] == "failed"
        assert manifest["files"] == [MANIFEST]

    def test_changing_truth_is_a_scenario_error(self, write_scenario, tmp_path):
        raw = small_scenario()
        raw["schedule"] = {"segments": [{"start": 0, "theta0": 1}, {"start": 100, "theta0": 3}]}
        out = tmp_path / "run"
        assert main(["simulate", "--scenario", str(write_scenario(raw)), "--out", str(out)]) == EXIT_VALIDATION
        assert listed_files(out) == [MANIFEST]


class TestOtherCommands:
    def test_sweep(self, scenario_path, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--scenario", str(scenario_path), "--out", str(out)]) == EXIT_OK
        meta, columns, rows = read_table(out / "sweep.csv")
        assert columns == ["delta", "run", "agent", "theta", "lambda", "m_ave", "band"]
        assert len(rows) == 3 * 10 * 2
        assert meta["points"] == "3"

    def test_normality(self, scenario_path, tmp_path):
        out = tmp_path / "normality"
        assert main(["normality", "--scenario", str(scenario_path), "--out", str(out)]) == EXIT_OK
        report = read_json(out / "normality.json")
        assert len(report["entries"]) == 1
        assert report["entries"][0]["n"] == 100
        _, _, rows = read_table(out / "ellipses.csv")
        assert len(rows) == 4

    def test_drift(self, write_scenario, tmp_path):
        raw = small_scenario(horizon=300, n_runs=5)
        raw["likelihoods"]["labels"] = ["sunny", "cloudy", "rainy"]
        raw["schedule"] = {"segments": [{"start": 0, "theta0": 1}, {"start": 100, "theta0": 3}]}
        out = tmp_path / "drift"
        assert main(["drift", "--scenario", str(write_scenario(raw)), "--out", str(out)]) == EXIT_OK
        meta, columns, rows = read_table(out / "drift_trace.csv")
        assert columns[:6] == ["run_id", "time", "theta0", "learner", "agent", "decision"]
        assert columns[-3:] == ["belief_sunny", "belief_cloudy", "belief_rainy"]
        assert len(rows) == 2 * 5 * 300 * 10
        assert {row[0] for row in rows} == {"0", "1", "2", "3", "4"}
        assert meta["trace_runs"] == "5"

        meta, columns, rows = read_table(out / "trajectory.csv")
        assert columns == ["run_id", "time", "learner", "agent", "theta", "lambda"]
        assert len(rows) == 2 * 5 * 300 * 10 * 2
        assert meta["reference_theta0"] == "1"
        assert {row[4] for row in rows} == {"2", "3"}

        recovery = read_json(out / "recovery.json")
        assert recovery["recoveries"][0]["theta_to"] == "rainy"
        assert recovery["header"]["seed"] == 1234
        assert recovery["header"]["scenario_hash"] == read_json(out / MANIFEST)["scenario_hash"]

    def test_lemma(self, scenario_path, tmp_path):
        out = tmp_path / "lemma"
        assert main(["lemma", "--scenario", str(scenario_path), "--out", str(out)]) == EXIT_OK
        report = read_json(out / "lemma.json")
        assert {"moments", "stability", "weak_law", "mixing", "clt"} <= set(report)
        assert report["stability"]["all_converged"]
        assert report["mixing"]["holds"]
