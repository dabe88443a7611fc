import json

import numpy as np
import pytest

from cascadewatch.agents import shannon_entropy
from cascadewatch.bus import HEALTH, VERDICTS, EventNotice, SeverityNotice
from cascadewatch.cascade import reconstruct_proxy, reconstruction_error
from cascadewatch.domain import BENIGN, AnomalyLabel, CustomLabel, Stage, label_name
from cascadewatch.errors import BoundViolation, IoFailure, ScenarioError, UnknownClass
from cascadewatch.fusion import events_from_csv, merge_events
from cascadewatch.harness import (
    SweepSpec,
    emit_report,
    generate_frame,
    generate_stream,
    load_scenario,
    parse_scenario,
    run_scenario,
    run_sweep,
)
from cascadewatch.harness.runner import sweep_row
from cascadewatch.harness.scenario import CameraSpec, builtin_scenarios

CAM = CameraSpec(id="c1")


def doc(**kw):
    base = {"schema": "v1", "seed": 3, "duration_ticks": 60, "cameras": [{"id": "c1"}, {"id": "c2"}]}
    base.update(kw)
    return base


# -- scenario files ---------------------------------------------------------


def test_builtins_load():
    assert {"case_study", "null", "mixed_traffic", "scale"} <= set(builtin_scenarios())
    s = load_scenario("builtin:case_study")
    assert s.resolved_thresholds().tau1 == 0.85 and s.parallel_stage12


@pytest.mark.parametrize("timeline,exc", [
    ([{"start": 0, "end": 10, "camera": "c1", "class": "normal"},
      {"start": 10, "end": 12, "camera": "c1", "class": "frozen"}], ScenarioError),
    ([{"start": 0, "end": 60, "camera": "c1", "class": "normal"}], ScenarioError),
    ([{"start": 0, "end": 5, "camera": "zz", "class": "normal"}], ScenarioError),
    ([{"start": 5, "end": 4, "camera": "c1", "class": "normal"}], ScenarioError),
    ([{"start": 0, "end": 5, "camera": "c1", "class": "meteor"}], UnknownClass),
    ([{"start": 0, "end": 5, "camera": "c1", "class": "custom"}], ScenarioError),
])
def test_timeline_validation(timeline, exc):
    with pytest.raises(exc):
        parse_scenario(doc(timeline=timeline))


def test_other_validation(tmp_path):
    with pytest.raises(ScenarioError):
        parse_scenario(doc(schema="v2"))
    with pytest.raises(BoundViolation):
        parse_scenario(doc(thresholds={"tau1": 2.0}))
    with pytest.raises(ScenarioError):
        parse_scenario(doc(thresholds={"tau7": 0.1}))
    with pytest.raises(ScenarioError):
        parse_scenario(doc(thresholds="aggressive"))
    with pytest.raises(ScenarioError):
        parse_scenario(doc(stage_profiles="nope"))
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError):
        load_scenario(p)
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.json")


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv("CASCADE_SEED", "99")
    assert parse_scenario(doc()).seed == 99
    monkeypatch.setenv("CASCADE_SEED", "x")
    with pytest.raises(ScenarioError):
        parse_scenario(doc())


# -- synthetic frames ---------------------------------------------------------


def test_frame_classes_have_the_intended_statistics():
    for t in range(0, 300, 23):
        normal = generate_frame(CAM, "normal", t, 1)
        assert shannon_entropy(normal) >= 2.3
        assert reconstruction_error(reconstruct_proxy(normal)) < 1.5e-3
        assert shannon_entropy(generate_frame(CAM, "obstruction", t, 1)) < 1.0
        noise = generate_frame(CAM, "noise_burst", t, 1)
        assert reconstruction_error(reconstruct_proxy(noise)) > 20 * 1.5e-3


def test_frozen_repeats_last_normal_frame():
    frames = generate_stream(CAM, "frozen", range(40, 50), 1)
    before = generate_frame(CAM, "normal", 39, 1)
    assert all(np.array_equal(f.pixels, before.pixels) for f in frames)
    assert frames[0].seed_tag.startswith("frozen|")


def test_stream_is_deterministic():
    a = generate_stream(CAM, "normal", range(5), 8)
    b = generate_stream(CAM, "normal", range(5), 8)
    assert [f.pixels.tobytes() for f in a] == [f.pixels.tobytes() for f in b]
    c = generate_stream(CAM, "normal", range(5), 9)
    assert a[0].pixels.tobytes() != c[0].pixels.tobytes()


def test_unknown_generator_class():
    with pytest.raises(UnknownClass):
        generate_frame(CAM, "meteor", 0, 0)


# -- end-to-end ---------------------------------------------------------------


def test_null_scenario():
    run = run_scenario(load_scenario("builtin:null"))
    assert run.events == []
    assert all(r.exit_stage in (Stage.I, Stage.II) and r.final_label == BENIGN for r in run.final)
    assert run.macro_f1_proxy() == 1.0


@pytest.fixture(scope="module")
def case_run():
    return run_scenario(load_scenario("builtin:case_study"))


def test_case_study_transcript(case_run):
    env = case_run.transcript
    probes = [e.payload for e in env if e.topic == HEALTH]
    assert any(p.camera_id == "c1" and not p.entropy_ok for p in probes)
    verdicts = [e.payload for e in env if e.topic == VERDICTS]
    obs = [v.result for v in verdicts if v.result.camera_id == "c1" and v.result.exit_stage is Stage.I
           and v.result.final_label is AnomalyLabel.OBSTRUCTED_VIEW]
    assert obs and obs[0].confidence == 0.92 and obs[0].reconstruction_error == 0.18
    forced = [v.result for v in verdicts if v.origin == "alarm" and v.result.forced
              and v.result.final_label is AnomalyLabel.SUSPICIOUS_BEHAVIOR]
    assert forced[0].confidence == pytest.approx(0.84, abs=1e-12)
    sev = [e.payload for e in env if isinstance(e.payload, SeverityNotice)]
    assert abs(sev[0].score - 0.872) <= 1e-12 and sev[0].alert
    assert (sev[0].visual_label, sev[0].contextual_label) == (
        AnomalyLabel.OBSTRUCTED_VIEW, AnomalyLabel.SUSPICIOUS_BEHAVIOR)
    notices = [e.payload.event for e in env if isinstance(e.payload, EventNotice)]
    assert notices == case_run.events


def test_case_study_events_match_transcript_oracle(case_run, tmp_path):
    # rebuild finals straight from the verdict log: forced wins, else first seen
    best = {}
    for e in case_run.transcript:
        if e.topic != VERDICTS:
            continue
        r = e.payload.result
        if r.frame_ref not in best or (r.forced and not best[r.frame_ref].forced):
            best[r.frame_ref] = r
    expected = merge_events([best[k] for k in sorted(best)],
                            sources={"c1": "rtsp://lobby/c1", "c2": "rtsp://lobby/c2"})
    emit_report(case_run.metrics, case_run.events, tmp_path, "csv")
    assert events_from_csv((tmp_path / "events.csv").read_text()) == expected
    assert [(label_name(e.label), e.camera_id) for e in expected] == [
        ("obstructed_view", "c1"), ("suspicious_behavior", "c2")]


def test_conservation_and_queue(case_run):
    assert case_run.frames_generated == len(case_run.final) + case_run.queued
    partial = run_scenario(load_scenario("builtin:case_study"), until_tick=9)
    assert partial.frames_generated == 20 == len(partial.final) + partial.queued


def test_identical_runs_identical_hash(case_run):
    again = run_scenario(load_scenario("builtin:case_study"), keep_transcript=False)
    assert again.transcript_hash == case_run.transcript_hash
    assert again.metrics == case_run.metrics


def test_offline_and_config_drift():
    s = parse_scenario(doc(cameras=[{"id": "c1", "offline": [[25, 40]]},
                                    {"id": "c2", "actual_config": "cfg-v0"}]))
    run = run_scenario(s)
    by = {}
    for h in run.health:
        by.setdefault(h.camera_id, []).append(h)
    c1 = [h.stream_live for h in by["c1"]]
    assert c1 == [True, False]  # probes at ticks 0 and 30
    assert all(not h.config_ok for h in by["c2"])


def test_custom_segment_and_parallel_workers():
    tl = [{"start": 10, "end": 19, "camera": "c1", "class": "custom",
           "params": {"name": "forklift_in_aisle", "base": "noise_burst"}}]
    s = parse_scenario(doc(timeline=tl, workers=3))
    run = run_scenario(s)
    assert run.truth[("c1", 12)] == CustomLabel("forklift_in_aisle")
    # unknown class -> "default" profile entries; noise base -> Stage II exit
    labels = {r.frame_ref: r.final_label for r in run.final}
    assert labels[("c1", 12)] is AnomalyLabel.ILLUMINATION_SHIFT
    serial = run_scenario(s.model_copy(update={"workers": 1}))
    assert serial.transcript_hash == run.transcript_hash


def test_ema_policy_changes_confidence_drift():
    s = load_scenario("builtin:case_study")
    on = run_scenario(s, keep_transcript=False)
    off = run_scenario(s.model_copy(update={"ema_policy": "off"}), keep_transcript=False)
    conf = lambda run: [sc for lab, sc in run.stage3_scores if lab is AnomalyLabel.SUSPICIOUS_BEHAVIOR]
    assert set(np.round(conf(off), 12)) == {0.84}
    assert max(conf(on)) > 0.84


# -- sweeps and reports -------------------------------------------------------


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("tau9", (0.1,))
    with pytest.raises(ValueError):
        SweepSpec("tau1", ())
    with pytest.raises(ValueError):
        SweepSpec("tau1", (0.5, 0.4))
    with pytest.raises(ValueError):
        SweepSpec("tau1", (0.5,), ("precision",))


def test_single_value_sweep_equals_run():
    s = load_scenario("builtin:case_study")
    spec = SweepSpec("tau1", (0.85,))
    (row,) = run_sweep(s, spec)
    assert row == sweep_row(run_scenario(s), spec, 0.85)


def test_tau_c_sweep_accepted_fraction_non_increasing():
    s = load_scenario("builtin:case_study")
    rows = run_sweep(s, SweepSpec("tau_c", (0.3, 0.5, 0.6, 0.7, 0.9)))
    acc = [r["accepted_fraction"] for r in rows]
    assert all(a >= b for a, b in zip(acc, acc[1:]))
    assert acc[0] > acc[-1]


def test_report_formats(case_run, tmp_path):
    emit_report(case_run.metrics, case_run.events, tmp_path / "a", "csv")
    emit_report(case_run.metrics, case_run.events, tmp_path / "b", "json")
    from_csv = events_from_csv((tmp_path / "a/events.csv").read_text())
    from_json = json.loads((tmp_path / "b/events.json").read_text())
    assert [e.to_dict() for e in from_csv] == from_json
    summary = json.loads((tmp_path / "a/summary.json").read_text())
    assert summary["metrics"]["frames_total"] == case_run.metrics.frames_total


def test_report_header_only_and_io_failure(case_run, tmp_path):
    emit_report(case_run.metrics, [], tmp_path, "csv")
    assert (tmp_path / "events.csv").read_text().count("\n") == 1
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        emit_report(case_run.metrics, [], blocker / "sub", "csv")
