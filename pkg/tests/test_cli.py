import importlib.resources as resources
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from pevplan import caseio
from pevplan.cli import main

BUNDLE = str(resources.files("pevplan") / "data" / "fig3_toy" / "bundle.json")


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def planned(runner, tmp_path_factory):
    out = tmp_path_factory.mktemp("plan")
    res = runner.invoke(main, ["plan", BUNDLE, "-o", str(out), "--gap", "0.02"])
    assert res.exit_code == 0, res.output
    return out


class TestPlanCommand:
    def test_outputs_exist(self, planned):
        for name in ("plan.json", "plan_summary.csv", "plan_map.png"):
            assert (planned / name).stat().st_size > 0

    def test_plan_round_trip(self, planned):
        plan = caseio.read_plan(planned / "plan.json")
        again = caseio.plan_from_dict(caseio.plan_to_dict(plan))
        assert again.built_nodes() == plan.built_nodes()
        assert again.choices == plan.choices
        assert again.objective == plan.objective
        assert again.stations == plan.stations

    def test_missing_bundle(self, runner, tmp_path):
        res = runner.invoke(main, ["plan", str(tmp_path / "nope.json")])
        assert res.exit_code == 2

    def test_malformed_bundle(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        res = runner.invoke(main, ["plan", str(bad)])
        assert res.exit_code == 2

    def test_wrong_format_version(self, runner, tmp_path):
        bad = tmp_path / "v99.json"
        bad.write_text(json.dumps({"format_version": 99}))
        res = runner.invoke(main, ["plan", str(bad)])
        assert res.exit_code == 2


class TestEvaluateCommand:
    def test_feasible_plan(self, runner, planned, tmp_path):
        out = tmp_path / "evaluation.json"
        res = runner.invoke(main, ["evaluate", str(planned / "plan.json"),
                                   BUNDLE, "-o", str(out)])
        assert res.exit_code == 0, res.output
        payload = json.loads(out.read_text())
        assert payload["feasible"] is True
        assert payload["violations"] == []
        assert payload["objective"] > 0

    def test_broken_plan_exits_three(self, runner, planned, tmp_path):
        data = json.loads((planned / "plan.json").read_text())
        for choice in data["choices"]:
            choice["nodes"] = []
        broken = tmp_path / "broken.json"
        broken.write_text(json.dumps(data))
        out = tmp_path / "evaluation.json"
        res = runner.invoke(main, ["evaluate", str(broken), BUNDLE,
                                   "-o", str(out)])
        assert res.exit_code == 3
        assert json.loads(out.read_text())["feasible"] is False


class TestSimulateCommand:
    def test_runs_and_renders(self, runner, tmp_path):
        out = tmp_path / "sim.csv"
        res = runner.invoke(main, ["simulate", "-l", "50", "--alpha", "0.8",
                                   "--horizon-hours", "200",
                                   "--replications", "3",
                                   "-o", str(out)])
        assert res.exit_code == 0, res.output
        assert out.stat().st_size > 0
        assert (tmp_path / "sim.png").stat().st_size > 0
        assert "service level" in res.output

    def test_seed_repeat_identical(self, runner, tmp_path):
        args = ["simulate", "-l", "30", "--horizon-hours", "150",
                "--replications", "2", "--seed", "11"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert runner.invoke(main, args + ["-o", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["-o", str(b)]).exit_code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_mismatched_class_lists(self, runner, tmp_path):
        res = runner.invoke(main, ["simulate", "-l", "30", "-l", "40",
                                   "-t", "1.0",
                                   "-o", str(tmp_path / "x.csv")])
        assert res.exit_code == 2

    def test_queue_mode(self, runner, tmp_path):
        out = tmp_path / "q.csv"
        res = runner.invoke(main, ["simulate", "-l", "40", "--mode", "queue",
                                   "--horizon-hours", "200",
                                   "--replications", "2", "-o", str(out)])
        assert res.exit_code == 0, res.output


class TestReportCommand:
    def test_combines_plan_and_evaluation(self, runner, planned, tmp_path):
        ev = tmp_path / "evaluation.json"
        assert runner.invoke(main, ["evaluate", str(planned / "plan.json"),
                                    BUNDLE, "-o", str(ev)]).exit_code == 0
        out = tmp_path / "rep"
        res = runner.invoke(main, ["report", str(planned / "plan.json"),
                                   str(ev), "-o", str(out)])
        assert res.exit_code == 0, res.output
        lines = (out / "comparison.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + two rows
        assert (out / "comparison.png").stat().st_size > 0

    def test_empty_input_writes_header_only(self, runner, tmp_path):
        out = tmp_path / "rep"
        res = runner.invoke(main, ["report", "-o", str(out)])
        assert res.exit_code == 0
        lines = (out / "comparison.csv").read_text().strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("case,")


class TestSweepCommand:
    def test_writes_variant_table(self, runner, tmp_path):
        out = tmp_path / "sweep"
        res = runner.invoke(main, ["sweep", BUNDLE, "-o", str(out),
                                   "--gap", "0.05"])
        assert res.exit_code == 0, res.output
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 5  # header + four variants
        assert lines[1].startswith("baseline,")


class TestCaseIo:
    def test_bundle_loads(self, toy_bundle):
        inp = toy_bundle.inputs
        assert len(inp.paths) == 1
        assert len(inp.scenarios) == 2
        assert inp.alpha == 0.8

    def test_case93_bundle_loads(self):
        root = resources.files("pevplan") / "data" / "case93"
        cb = caseio.load_bundle(root / "bundle.json")
        assert len(cb.inputs.transport.nodes) == 93
        assert len(cb.inputs.types) == 4
        assert len(cb.inputs.scenarios) == 24
        assert len(cb.inputs.grid.buses) == 14
        assert sum(p.daily_flow.get(t.id, 0.0) for p in cb.inputs.paths
                   for t in cb.inputs.types) == pytest.approx(12000.0)
