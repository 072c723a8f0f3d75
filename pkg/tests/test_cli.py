import filecmp
import json
import math
import warnings

import numpy as np
import pytest

from aerialplan import artifacts as art
from aerialplan.cli import main
from aerialplan.exceptions import InfeasibleParametrization, ScenarioError
from aerialplan.pipeline import STAGES, RunConfig, StageFailure, compare_runs, run_pipeline
from aerialplan.scenario import SHIPPED, build_setup, load_scenario, parse_scenario, shipped_path
from aerialplan.topp_ra import SampledTrajectory


def shipped_dict(name="insertion_line"):
    return json.loads(shipped_path(name).read_text())


def short_scenario(tmp_path, **edits):
    """A 1 m hop without obstacles, quick enough to run the whole pipeline often."""
    d = shipped_dict()
    d["name"] = "short"
    d["waypoints"][1][0] = 1.0
    d.pop("tube")
    for key, val in edits.items():
        section, _, field = key.partition("__")
        if field:
            d[section][field] = val
        else:
            d[section] = val
    path = tmp_path / "short.json"
    path.write_text(json.dumps(d))
    return path


def tree_identical(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


class TestScenario:
    @pytest.mark.parametrize("name", SHIPPED)
    def test_shipped_load_cleanly(self, name):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            sc = load_scenario(name)
            setup = build_setup(sc)
        assert sc.name == name
        assert setup.table.actuated_count == 3
        assert len(sc.waypoints[0]) == 7

    def test_load_by_path(self):
        assert load_scenario(str(shipped_path("labyrinth"))).name == "labyrinth"

    def test_waypoint_dimension_names_index(self):
        d = shipped_dict()
        d["waypoints"][1] = d["waypoints"][1][:5]
        with pytest.raises(ScenarioError, match="waypoint 1"):
            parse_scenario(json.dumps(d))

    def test_missing_mass_is_a_field_error(self):
        d = shipped_dict()
        del d["multirotor"]["mass"]
        with pytest.raises(ScenarioError, match=r"multirotor\.mass"):
            parse_scenario(json.dumps(d))

    def test_unknown_field_rejected(self):
        d = shipped_dict()
        d["controller"]["kp_typo"] = 1.0
        with pytest.raises(ScenarioError, match="kp_typo"):
            parse_scenario(json.dumps(d))

    def test_bad_json_reports_position(self):
        with pytest.raises(ScenarioError, match="line 1, column"):
            parse_scenario("{not json")

    def test_wrong_schema_version(self):
        d = shipped_dict()
        d["schema_version"] = 2
        with pytest.raises(ScenarioError, match="schema_version"):
            parse_scenario(json.dumps(d))

    def test_sim_step_must_divide_sample_time(self):
        d = shipped_dict()
        d["sampling"]["dt_sim"] = 0.003
        with pytest.raises(ScenarioError, match="dt_sim"):
            parse_scenario(json.dumps(d))

    def test_missing_file(self):
        with pytest.raises(ScenarioError, match="not found"):
            load_scenario("/nonexistent/scenario.json")


class TestArtifacts:
    def test_trajectory_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 7
        traj = SampledTrajectory(np.arange(n) * 0.01, rng.normal(size=(n, 7)),
                                 rng.normal(size=(n, 7)), rng.normal(size=(n, 7)), 0.01)
        p = tmp_path / "t.csv"
        art.save_trajectory(p, traj)
        back = art.load_trajectory(p, 0.01)
        for name in ("t", "q", "dq", "ddq"):
            assert np.array_equal(getattr(back, name), getattr(traj, name))
        first = p.read_bytes()
        art.save_trajectory(p, back)
        assert p.read_bytes() == first
        header = p.read_text().splitlines()[0].split(",")
        assert header[:8] == ["t", "x", "y", "z", "psi", "q1", "q2", "q3"]
        assert header[8] == "d_x" and header[15] == "dd_x"

    def test_path_round_trip(self, tmp_path):
        pts = np.array([[0.1, 0.2, 1.5, 0.3, 0.0, -0.6, 1.2], [1 / 3, 0, 1.5, 0, 0, 0, 1]])
        art.save_path(tmp_path / "p.csv", pts)
        assert np.array_equal(art.load_path(tmp_path / "p.csv"), pts)

    def test_missing_artifact(self, tmp_path):
        with pytest.raises(art.ArtifactError, match="missing"):
            art.load_trajectory(tmp_path / "none.csv", 0.01)

    def test_wrong_columns(self, tmp_path):
        (tmp_path / "e.csv").write_text("a,b\n1,2\n")
        with pytest.raises(art.ArtifactError):
            art.load_errors(tmp_path / "e.csv")
        with pytest.raises(art.ArtifactError):
            art.load_sim_trace(tmp_path / "e.csv")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "p.csv").write_text("x,y,z,psi\n1,2,oops,4\n")
        with pytest.raises(art.ArtifactError):
            art.load_path(tmp_path / "p.csv")


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("short")
    scen = short_scenario(base)
    out = base / "run"
    assert main(["all", "--scenario", str(scen), "--out", str(out)]) == 0
    return scen, out


class TestPipeline:
    def test_artifacts_written(self, short_run):
        _, out = short_run
        for name in (art.PATH_CSV, art.TRAJECTORY_CSV, art.SIM_TRACE_CSV, art.COMPENSATED_CSV,
                     art.RESIDUALS_CSV, art.SIM_TRACE_COMPENSATED_CSV, art.ERRORS_CSV,
                     art.REPORT_JSON):
            assert (out / name).exists(), name
        report = json.loads((out / art.REPORT_JSON).read_text())
        assert set(report) == {"run", *STAGES}
        assert report["plan"]["points"] == 2

    def test_empty_space_plan_is_waypoints(self, short_run):
        scen, out = short_run
        sc = load_scenario(str(scen))
        assert np.array_equal(art.load_path(out / art.PATH_CSV), np.array(sc.waypoints))

    def test_error_columns(self, short_run):
        _, out = short_run
        header = (out / art.ERRORS_CSV).read_text().splitlines()[0]
        assert header == ",".join(art.ERROR_COLUMNS)
        err = art.load_errors(out / art.ERRORS_CSV)
        assert not np.isnan(err).any()

    def test_uav_columns_unchanged_by_compensation(self, short_run):
        _, out = short_run
        a = art.load_trajectory(out / art.TRAJECTORY_CSV, 0.01)
        b = art.load_trajectory(out / art.COMPENSATED_CSV, 0.01)
        assert np.array_equal(a.q[:, :4], b.q[:, :4]) and np.array_equal(a.dq[:, :4], b.dq[:, :4])

    def test_stage_by_stage_matches_all(self, short_run, tmp_path):
        scen, out = short_run
        staged = tmp_path / "staged"
        for stage in STAGES:
            assert main([stage, "--scenario", str(scen), "--out", str(staged)]) == 0
        assert tree_identical(out, staged)

    def test_repeat_run_identical(self, short_run, tmp_path):
        scen, out = short_run
        again = tmp_path / "again"
        assert main(["all", "--scenario", str(scen), "--out", str(again)]) == 0
        assert tree_identical(out, again)

    def test_disturbance_seed_changes_trace(self, short_run, tmp_path):
        scen, out = short_run
        other = tmp_path / "other"
        assert main(["all", "--scenario", str(scen), "--out", str(other),
                     "--seed-disturbance", "9"]) == 0
        assert (other / art.TRAJECTORY_CSV).read_bytes() == (out / art.TRAJECTORY_CSV).read_bytes()
        assert (other / art.SIM_TRACE_CSV).read_bytes() != (out / art.SIM_TRACE_CSV).read_bytes()

    def test_no_compensation_baseline(self, short_run, tmp_path):
        scen, out = short_run
        base = tmp_path / "base"
        assert main(["all", "--scenario", str(scen), "--out", str(base), "--no-compensation"]) == 0
        assert not (base / art.COMPENSATED_CSV).exists()
        err = art.load_errors(base / art.ERRORS_CSV)
        assert np.isnan(err[:, 4]).all()
        report = json.loads((base / art.REPORT_JSON).read_text())
        assert "compensated" not in report["evaluate"]

        summary, deltas = compare_runs(base, out)
        assert summary["z_reduction"] == pytest.approx(summary["peak_z_a"] - summary["peak_z_b"])
        assert summary["peak_z_b"] < summary["peak_z_a"]
        assert deltas.shape == (len(err), 4)

    def test_compare_self_is_zero(self, short_run, tmp_path, capsys):
        _, out = short_run
        assert main(["compare", str(out), str(out), "--out", str(tmp_path / "cmp")]) == 0
        summary = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
        assert summary["z_reduction"] == 0.0 and summary["max_abs_delta_z"] == 0.0
        _, deltas = art.read_csv(tmp_path / "cmp" / "deltas.csv")
        assert not deltas[:, 1:].any()
        assert '"z_reduction": 0.0' in capsys.readouterr().out


class TestExitCodes:
    def test_missing_scenario(self, tmp_path):
        assert main(["all", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

    def test_invalid_scenario(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{}")
        assert main(["plan", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_stage_without_inputs(self, tmp_path):
        scen = short_scenario(tmp_path)
        assert main(["simulate", "--scenario", str(scen), "--out", str(tmp_path / "o")]) == 2

    def test_compare_missing_run(self, tmp_path):
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 2

    def test_waypoint_in_obstacle(self, tmp_path):
        scen = short_scenario(tmp_path, obstacles__boxes=[{"lower": [0.9, -0.5, 0.0],
                                                           "upper": [1.1, 0.5, 3.0]}])
        assert main(["plan", "--scenario", str(scen), "--out", str(tmp_path / "o")]) == 3

    def test_divergence(self, tmp_path):
        scen = short_scenario(tmp_path, multirotor__workspace_bound=1.0)
        assert main(["all", "--scenario", str(scen), "--out", str(tmp_path / "o")]) == 5
        # artifacts from the stages that finished stay on disk
        assert (tmp_path / "o" / art.TRAJECTORY_CSV).exists()

    def test_infeasible_maps_to_four(self):
        assert StageFailure("parametrize", InfeasibleParametrization("x")).exit_code == 4

    def test_conflicting_flags(self, tmp_path):
        scen = short_scenario(tmp_path)
        assert main(["compensate", "--scenario", str(scen), "--out", str(tmp_path / "o"),
                     "--no-compensation"]) == 2

    def test_unknown_stage(self, tmp_path):
        cfg = RunConfig.from_scenario(load_scenario(str(short_scenario(tmp_path))), tmp_path / "o")
        with pytest.raises(ScenarioError):
            run_pipeline(cfg, ("plan", "fly"))


def test_report_values_are_finite(short_run):
    _, out = short_run
    ev = json.loads((out / art.REPORT_JSON).read_text())["evaluate"]

    def walk(node):
        if isinstance(node, dict):
            for v in node.values():
                walk(v)
        elif isinstance(node, float):
            assert math.isfinite(node)

    walk(ev)
