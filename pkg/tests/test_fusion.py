import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadewatch.cascade import ReconstructionPair
from cascadewatch.domain import BENIGN, AnomalyLabel, CascadeResult, Stage, StageVerdict, Thresholds
from cascadewatch.errors import AccountingMismatch, EmptyRun, UnsortedInput, WindowTooLarge
from cascadewatch.fusion import (
    SSIM_C1,
    SeverityInput,
    accounting,
    closed_form_latency,
    events_from_csv,
    events_to_csv,
    mae,
    merge_events,
    psnr,
    psnr_from_mse,
    severity,
    ssim,
)

import oracles

A, B = AnomalyLabel.OBSTRUCTED_VIEW, AnomalyLabel.FROZEN_STREAM
LAT = (0.034, 0.062, 1.82)


def result(cam, tick, label, conf=0.9, err=None, stage=1):
    v1 = StageVerdict(Stage.I, conf if stage == 1 else 0.1, label if stage == 1 else BENIGN,
                      stage == 1, LAT[0])
    if stage == 1:
        return CascadeResult((cam, tick), (v1,), label, Stage.I, LAT[0])
    v2 = StageVerdict(Stage.II, err if err is not None else 0.0, label if stage == 2 else BENIGN,
                      stage == 2, LAT[1])
    if stage == 2:
        return CascadeResult((cam, tick), (v1, v2), label, Stage.II, LAT[0] + LAT[1])
    v3 = StageVerdict(Stage.III, conf, label, True, LAT[2])
    return CascadeResult((cam, tick), (v1, v2, v3), label, Stage.III, LAT[0] + LAT[1] + LAT[2])


def test_severity_values():
    t = Thresholds()
    score, alert = severity(SeverityInput(0.92, 0.84), t)
    assert abs(score - 0.872) <= 1e-12 and alert
    assert severity(SeverityInput(1, 1), t) == (1.0, True)
    assert severity(SeverityInput(0, 0), t) == (0.0, False)
    with pytest.raises(ValueError):
        SeverityInput(1.2, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_severity_monotone_and_swap_symmetric(v, c, dv, lam):
    t = Thresholds(lambda1=lam, lambda2=1 - lam)
    base = severity(SeverityInput(v, c), t)[0]
    assert severity(SeverityInput(min(1, v + dv), c), t)[0] >= base - 1e-15
    assert severity(SeverityInput(v, min(1, c + dv)), t)[0] >= base - 1e-15
    swapped = Thresholds(lambda1=1 - lam, lambda2=lam)
    assert severity(SeverityInput(c, v), swapped) == severity(SeverityInput(v, c), t)


LABELS = {"A": A, "B": B, "-": BENIGN}


@pytest.mark.parametrize("gap", [0, 1])
def test_worked_example(gap):
    seq = "AABBB-A"
    rs = [result("c", i + 1, LABELS[ch]) for i, ch in enumerate(seq)]
    ev = merge_events(rs, gap)
    assert [(e.label, e.start_frame, e.end_frame) for e in ev] == [(A, 1, 2), (B, 3, 5), (A, 7, 7)]
    want = oracles.merged_runs([("c", i + 1, ch) for i, ch in enumerate(seq)], gap, benign="-")
    assert want == sorted([("c", "A", 1, 2, 2), ("c", "B", 3, 5, 3), ("c", "A", 7, 7, 1)])


def test_gap_bridges_only_same_label():
    rs = [result("c", 1, A), result("c", 3, A), result("c", 4, B), result("c", 6, B)]
    assert [(e.start_frame, e.end_frame) for e in merge_events(rs, 1)] == [(1, 3), (4, 6)]
    assert len(merge_events(rs, 0)) == 4


def test_event_statistics_and_source():
    rs = [result("c", 1, B, err=0.002, stage=2), result("c", 2, B, err=0.004, stage=2)]
    (e,) = merge_events(rs, sources={"c": "rtsp://c"})
    assert e.error_stats == (0.002, 0.003, 0.004)
    assert e.frame_count == 2 and e.source == "rtsp://c" and e.duration_ticks == 2


def test_unsorted_and_duplicates_rejected():
    with pytest.raises(UnsortedInput):
        merge_events([result("c", 2, A), result("c", 1, A)])
    with pytest.raises(UnsortedInput):
        merge_events([result("c", 1, A), result("c", 1, A)])
    with pytest.raises(UnsortedInput):
        merge_events([result("d", 1, A), result("c", 5, A)])


sequences = st.lists(
    st.tuples(st.sampled_from(["c1", "c2"]), st.integers(0, 40), st.sampled_from("AB-")),
    max_size=30,
)


@settings(max_examples=300, deadline=None)
@given(sequences, st.integers(0, 4))
def test_merge_matches_bruteforce(raw, gap):
    items = sorted({(c, t): lab for c, t, lab in raw}.items())
    items = [(c, t, lab) for (c, t), lab in items]
    ev = merge_events([result(c, t, LABELS[lab]) for c, t, lab in items], gap)
    got = sorted((e.camera_id, {A: "A", B: "B"}[e.label], e.start_frame, e.end_frame, e.frame_count)
                 for e in ev)
    assert got == oracles.merged_runs(items, gap, benign="-")
    assert sum(e.frame_count for e in ev) == sum(1 for *_, lab in items if lab != "-")


def test_csv_roundtrip_and_header_only():
    assert events_to_csv([]).splitlines() == [
        "label,camera,start,end,frames,err_min,err_mean,err_max,conf_mean,source"]
    rs = [result("c", 1, B, err=1 / 3, stage=2), result("c", 2, A, conf=0.1 + 0.2)]
    ev = merge_events(rs)
    assert events_from_csv(events_to_csv(ev)) == ev


def _pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        h, w = rng.choice([8, 16, 24]), rng.choice([8, 16])
        c = rng.choice([1, 3])
        x = rng.random((h, w, c))
        y = np.clip(x + rng.normal(0, rng.choice([0.01, 0.2]), x.shape), 0, 1)
        yield x, y


def test_metrics_against_naive_loops():
    for x, y in _pairs(60, seed=3):
        pair = ReconstructionPair.of(x, y)
        xl, yl = x.tolist(), y.tolist()
        assert mae(pair) == pytest.approx(oracles.mae(xl, yl), abs=1e-12)
        assert psnr(pair) == pytest.approx(oracles.psnr(xl, yl), abs=1e-12)
        assert ssim(pair) == pytest.approx(oracles.ssim(xl, yl), abs=1e-9)


def test_metric_closed_forms():
    x = np.random.default_rng(0).random((16, 16, 3))
    assert ssim(ReconstructionPair.of(x, x)) == 1.0
    assert psnr(ReconstructionPair.of(x, x)) == math.inf
    assert psnr_from_mse(1e-4) == 40.0
    assert psnr_from_mse(1.47e-4) == pytest.approx(38.33, abs=5e-3)
    zero, one = np.zeros((8, 8, 1)), np.ones((8, 8, 1))
    # zero variances leave only the luminance term
    assert ssim(ReconstructionPair.of(zero, one)) == pytest.approx(SSIM_C1 / (1 + SSIM_C1), abs=1e-15)
    assert mae(ReconstructionPair.of(zero, one)) == 1.0
    with pytest.raises(WindowTooLarge):
        ssim(ReconstructionPair.of(zero, one), window=9)


def test_accounting_closed_form():
    fr = (0.713, 0.186, 0.101)
    mean = closed_form_latency(fr, LAT)
    assert mean == pytest.approx(oracles.closed_form(fr, LAT), abs=1e-15)
    assert mean == pytest.approx(0.2356, abs=1e-4)
    assert 8.7 / mean == pytest.approx(36.9, abs=0.05)

    rs = [result("c", i, A, stage=1 + (i % 3 == 0) + (i % 7 == 0)) for i in range(210)]
    m = accounting(rs, LAT)
    f = [m.exit_fractions[s] for s in Stage]
    assert m.mean_latency == pytest.approx(oracles.closed_form(f, LAT), abs=1e-12)
    assert m.speedup_ratio == pytest.approx(8.7 / m.mean_latency)
    assert accounting([result("c", 0, A)], LAT).mean_latency == 0.034
    three = accounting([result("c", 0, A, stage=3)], LAT)
    assert three.mean_latency == pytest.approx(sum(LAT))


def test_accounting_errors():
    with pytest.raises(EmptyRun):
        accounting([])
    with pytest.raises(AccountingMismatch):
        accounting([result("c", 0, A)], (0.05, 0.062, 1.82))
