import json
import subprocess
import sys

import numpy as np
import pytest

from safecollab.cli import main
from safecollab.scenario import DATA_DIR
from safecollab.geometry import min_human_robot_distance
from safecollab.sim import RateClock, run
from safecollab.trace import (TraceError, compare, events_path, plot_data, read_trace, write_plot_data,
                              write_trace)
from safecollab.trajectory import build_path
from safecollab.kinematics import forward_kinematics
from conftest import pantry_doc, scenario_of


def short_doc(duration=3.0, events=None, **kw):
    doc = pantry_doc()
    doc["duration"] = duration
    doc["events"] = [] if events is None else events
    doc.update(kw)
    return doc


# --- clocks --------------------------------------------------------------------

@pytest.mark.parametrize("rate,expected", [(240, 240), (15, 15), (500, 500), (250, 250)])
def test_rate_clock_counts(rate, expected):
    clock = RateClock(rate, 500)
    assert sum(clock.fires(k) for k in range(500)) == expected


def test_rate_clock_spacing_is_even():
    ticks = [k for k in range(5000) if RateClock(240, 500).fires(k)]
    gaps = set(np.diff(ticks))
    assert gaps <= {2, 3}


# --- null scenario -------------------------------------------------------------

def test_empty_events_is_idle():
    sc = scenario_of(short_doc())
    trace, summary = run(sc)
    assert len(trace) == sc.n_cycles
    assert set(trace.columns["phase"]) == {"idle"}
    assert np.all(trace.qdot == 0.0)
    assert np.all(trace.q == sc.initial_q)
    assert summary.tasks_completed == 0 and summary.commands == 0
    kp = sc.human.sample(0.0)
    static = min(w.distance for w in min_human_robot_distance(sc.model, sc.initial_q, kp, sc.human.bones))
    assert trace.columns["min_sp"][0] == static
    np.testing.assert_array_equal(plot_data(trace)["v_rh"], 0.0)


def test_time_column_is_fixed_step():
    trace, _ = run(scenario_of(short_doc(duration=1.0)))
    np.testing.assert_allclose(np.diff(trace.columns["t"]), 1 / 500, atol=1e-12)


# --- pantry runs ------------------------------------------------------------------

def test_safe_run_respects_limits(pantry_runs):
    trace, summary = pantry_runs["safe"]
    assert np.all(trace.v_rh <= trace.v_max + 1e-6)
    assert summary.violation_events == 0 and summary.infeasible_cycles == 0
    assert summary.tasks_completed == 2
    assert summary.incomplete == []


def test_unsafe_run_violates(pantry_runs):
    _, summary = pantry_runs["unsafe"]
    assert summary.violation_events + summary.emergency_stops >= 1


def test_integrator_consistency(pantry_runs):
    trace, _ = pantry_runs["safe"]
    q, u = trace.q, trace.qdot
    np.testing.assert_array_equal(q[1:], q[:-1] + u[:-1] * (1 / 500))


def test_command_direction_and_monotone_abscissa(pantry_runs):
    trace, _ = pantry_runs["safe"]
    s = trace.columns["s"]
    phase = trace.columns["phase"]
    moving = np.isin(phase, ("to_pick", "to_place"))
    same_path = moving[1:] & moving[:-1] & (phase[1:] == phase[:-1])
    assert np.all(np.diff(s)[same_path] >= 0.0)
    assert np.all(trace.columns["alpha"] >= 0.0) and np.all(trace.columns["alpha"] <= 1.0)


def test_acceleration_contract(pantry_runs, pantry):
    trace, _ = pantry_runs["safe"]
    m = pantry.model
    u = trace.qdot
    acc = np.diff(np.vstack([np.zeros(m.n), u]), axis=0) / m.reaction_time
    feasible = trace.columns["feasible"]
    assert np.all(acc[feasible] <= m.qddot_max + 1e-6)
    assert np.all(acc[feasible] >= m.qddot_min - 1e-6)


def test_critical_link_column_below_limit(pantry_runs):
    data = plot_data(pantry_runs["safe"][0])
    assert np.all(data["v_rh_crit"] <= data["v_max_crit"] + 1e-6)


def test_each_instruction_grasped_and_released(pantry_runs):
    for trace, summary in pantry_runs.values():
        n_instr = sum(1 for e in trace.events_of("command") if e["kind"] == "instruction")
        started = len(trace.events_of("task_start"))
        assert len(trace.events_of("grasp")) + len(trace.events_of("incomplete")) >= started
        assert len(trace.events_of("release")) + len(trace.events_of("incomplete")) == n_instr


def test_fusion_is_mode_independent(pantry_runs):
    seqs = [[(e["t"], e["kind"], e["object"], e["area"]) for e in tr.events_of("command")]
            for tr, _ in pantry_runs.values()]
    assert seqs[0] == seqs[1]
    kinds = [k for _, k, _, _ in seqs[0]]
    assert kinds == ["instruction", "instruction", "error", "response"]


def test_safe_is_not_faster(pantry_runs):
    safe, unsafe = pantry_runs["safe"][1], pantry_runs["unsafe"][1]
    assert safe.completion_times[-1] >= unsafe.completion_times[-1]


# --- zero-order hold --------------------------------------------------------------

def test_witnesses_held_between_capture_ticks():
    sc = scenario_of(short_doc(duration=1.0))
    trace, _ = run(sc)
    sp = trace.columns["min_sp"]
    clock = RateClock(sc.capture_hz, sc.control_hz)
    for k in range(1, len(sp)):
        if not clock.fires(k):
            assert sp[k] == sp[k - 1]


def test_capture_picks_up_human_motion():
    doc = short_doc(duration=1.0)
    frames = doc["human"]["frames"]
    moved = json.loads(json.dumps(frames[0]))
    moved["t"] = 1.0
    for v in moved["keypoints"].values():
        v[0] += 0.5
    doc["human"]["frames"] = [frames[0], moved]
    trace, _ = run(scenario_of(doc))
    sp = trace.columns["min_sp"]
    changes = np.flatnonzero(np.diff(sp) != 0.0) + 1
    clock = RateClock(240, 500)
    assert len(changes) > 100
    assert all(clock.fires(int(k)) for k in changes)


# --- emergency stop ---------------------------------------------------------------

def intruder_doc():
    """Human wrist parked on the robot's path to the right area."""
    doc = short_doc(duration=6.0, events=[{"t": 0.0, "source": "voice",
                                           "utterance": "Fetch me the pasta in the right area"}])
    sc = scenario_of(doc)
    path = build_path(np.vstack([sc.initial_q, sc.areas["right"]]))
    tip = forward_kinematics(sc.model, path.sample(0.3)[0])[-1][:3, 3]
    frames = doc["human"]["frames"]
    f = json.loads(json.dumps(frames[0]))
    f["keypoints"]["r_wrist"] = tip.tolist()
    doc["human"]["frames"] = [f]
    return doc


def test_unsafe_intrusion_triggers_emergency_stop():
    trace, summary = run(scenario_of(intruder_doc()), safety_enabled=False)
    assert summary.emergency_stops >= 1
    stop = trace.events_of("emergency_stop")[0]
    k = int(round(stop["t"] * 500))
    hold = trace.qdot[k: k + 1000]
    np.testing.assert_array_equal(hold, 0.0)


def test_safe_intrusion_holds_and_logs_incomplete():
    trace, summary = run(scenario_of(intruder_doc()), safety_enabled=True)
    assert summary.violation_events == 0 and summary.emergency_stops == 0
    assert summary.min_distance > scenario_of(intruder_doc()).params.margin - 1e-9
    assert summary.tasks_completed == 0
    assert summary.incomplete and "to_pick" in summary.incomplete[0]


# --- determinism and traces --------------------------------------------------------

def test_noise_is_seeded(tmp_path):
    doc = short_doc(duration=1.0, keypoint_noise=0.01)
    sc = scenario_of(doc)
    paths = []
    for i, seed in enumerate((3, 3, 4)):
        p = tmp_path / f"t{i}.csv"
        write_trace(run(sc, seed=seed)[0], p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes() != paths[2].read_bytes()


def test_trace_roundtrip(tmp_path, pantry_runs):
    trace = pantry_runs["safe"][0]
    p = tmp_path / "safe.csv"
    write_trace(trace, p)
    back = read_trace(p)
    assert back.events == json.loads(json.dumps(trace.events))
    for name, col in trace.columns.items():
        if col.dtype == object:
            assert list(back.columns[name]) == list(col)
        else:
            np.testing.assert_array_equal(back.columns[name], col)
    assert events_path(p).is_file()


def test_self_comparison_has_zero_deltas(tmp_path, pantry_runs):
    trace = pantry_runs["safe"][0]
    rep = compare(trace, trace)
    assert rep["commands_match"]
    for k, row in rep["metrics"].items():
        assert row["delta"] == 0 or np.isnan(row["delta"]), k


def test_compare_rejects_different_scenarios(pantry_runs):
    safe = pantry_runs["safe"][0]
    other, _ = run(scenario_of(short_doc(duration=0.1)))
    with pytest.raises(TraceError):
        compare(safe, other)


def test_compare_pantry(pantry_runs):
    rep = compare(pantry_runs["safe"][0], pantry_runs["unsafe"][0])
    m = rep["metrics"]
    assert m["violations"]["safe"] == 0 and m["violations"]["unsafe"] >= 1
    assert m["completion_time"]["safe"] >= m["completion_time"]["unsafe"]
    assert rep["commands_match"]
    assert len(rep["series"]["t"]) == 12000


def test_plot_data_rows(tmp_path, pantry_runs):
    p = tmp_path / "plot.csv"
    write_plot_data(pantry_runs["safe"][0], p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",")[:5] == ["t", "v_rh", "v_max", "alpha", "min_sp"]
    assert len(lines) - 1 == 24 * 500


def test_plot_data_empty_trace_rejected(pantry_runs):
    trace = pantry_runs["safe"][0]
    from safecollab.trace import Trace
    empty = Trace(trace.meta, {k: v[:0] for k, v in trace.columns.items()})
    with pytest.raises(TraceError):
        plot_data(empty)


def test_read_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(TraceError):
        read_trace(p)


# --- CLI --------------------------------------------------------------------------

def test_cli_round_trip(tmp_path, capsys):
    doc = short_doc(duration=2.0, events=[{"t": 0.0, "source": "voice",
                                           "utterance": "Fetch me the pasta in the right area"}])
    scen = tmp_path / "s.json"
    doc["robot"] = str(DATA_DIR / "ur10e.json")
    scen.write_text(json.dumps(doc))
    assert main(["validate", "--scenario", str(scen)]) == 0
    assert json.loads(capsys.readouterr().out)["valid"]
    safe, unsafe = tmp_path / "safe.csv", tmp_path / "unsafe.csv"
    assert main(["run", "--scenario", str(scen), "--safety", "on", "--out", str(safe)]) == 0
    assert main(["run", "--scenario", str(scen), "--safety", "off", "--out", str(unsafe)]) == 0
    capsys.readouterr()
    report = tmp_path / "report.json"
    assert main(["compare", "--safe", str(safe), "--unsafe", str(unsafe), "--report", str(report)]) == 0
    assert json.loads(capsys.readouterr().out)["commands_match"]
    assert "series" in json.loads(report.read_text())
    plot = tmp_path / "plot.csv"
    assert main(["plot-data", "--trace", str(safe), "--out", str(plot)]) == 0
    assert len(plot.read_text().splitlines()) == 1 + 1000


def test_cli_errors_are_machine_readable(tmp_path, capsys):
    assert main(["validate", "--scenario", str(tmp_path / "missing.json")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "scenario" and err["field"] == "<file>"
    bad = tmp_path / "bad.json"
    doc = short_doc()
    del doc["safety"]
    bad.write_text(json.dumps(doc))
    assert main(["validate", "--scenario", str(bad)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "safety"
    assert main(["plot-data", "--trace", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "safecollab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "plot-data" in out.stdout
