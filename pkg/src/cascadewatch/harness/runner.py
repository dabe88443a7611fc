"""End-to-end scenario driver, threshold sweeps and report emission."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from ..agents import CameraEntry, CameraRegistry, EventAgent, HealthStatus, MonitorAgent
from ..bus import (
    ALERTS,
    EVENTS,
    HEALTH,
    TASKS,
    VERDICTS,
    AlarmSignal,
    Broker,
    Envelope,
    EventNotice,
    FrameTask,
    SeverityNotice,
    Verdict,
)
from ..cascade import (
    SyntheticDetector,
    SyntheticReconstruction,
    SyntheticSemantic,
    StageProfile,
    run_cascade,
)
from ..domain import (
    BENIGN,
    TICKS_PER_SECOND,
    AnomalyLabel,
    CascadeResult,
    Frame,
    Label,
    Stage,
    Thresholds,
    label_name,
    parse_label,
    validate_thresholds,
)
from ..errors import ConfigError, IoFailure, StreamUnavailable
from ..fusion import (
    Event,
    RunMetrics,
    SeverityInput,
    accounting,
    events_to_csv,
    merge_events,
    severity,
)
from ..semantics import SemanticClassifier, builtin_model, classify, ema_update, load_model
from .generate import generate_frame
from .scenario import Scenario, Segment

log = logging.getLogger(__name__)

TRUTH_LABELS = {
    "normal": AnomalyLabel.BENIGN,
    "obstruction": AnomalyLabel.OBSTRUCTED_VIEW,
    "noise_burst": AnomalyLabel.ILLUMINATION_SHIFT,
    "frozen": AnomalyLabel.FROZEN_STREAM,
    "loiter_alarm": AnomalyLabel.SUSPICIOUS_BEHAVIOR,
}


class StreamBuffer:
    """Most recent frames per camera, as seen by the agents."""

    def __init__(self, scenario: Scenario, depth: int):
        self.now_tick = 0
        self._cams = {c.id: c for c in scenario.cameras}
        self._frames = {c.id: deque(maxlen=depth) for c in scenario.cameras}

    def push(self, frame: Frame):
        self._frames[frame.camera_id].append(frame)

    def _offline(self, camera_id: str) -> bool:
        return any(a <= self.now_tick <= b for a, b in self._cams[camera_id].offline)

    def latest(self, camera_id: str) -> Frame:
        buf = self._frames.get(camera_id)
        if not buf or self._offline(camera_id):
            raise StreamUnavailable(camera_id)
        return buf[-1]

    def recent(self, camera_id: str, n: int) -> list[Frame]:
        if self._offline(camera_id):
            raise StreamUnavailable(camera_id)
        return list(self._frames[camera_id])[-n:]

    def config_checksum(self, camera_id: str) -> str:
        cam = self._cams[camera_id]
        return cam.actual_config if cam.actual_config is not None else cam.config_checksum


@dataclass
class RunResult:
    metrics: RunMetrics
    events: list[Event]
    transcript: list[Envelope]
    transcript_hash: str
    results: list[CascadeResult]
    origins: list[str]
    final: list[CascadeResult]
    truth: dict
    health: list[HealthStatus]
    severities: list[SeverityNotice]
    stage3_scores: list[tuple[Label, float]]
    frames_generated: int
    queued: int
    thresholds: Thresholds

    @property
    def early_exit_pct(self) -> float:
        f = self.metrics.exit_fractions
        return 100.0 * (f[Stage.I] + f[Stage.II])

    @property
    def accepted_fraction(self) -> float:
        n = len(self.stage3_scores)
        return sum(1 for lab, _ in self.stage3_scores if lab != BENIGN) / n if n else 0.0

    def macro_f1_proxy(self) -> float:
        from sklearn.metrics import f1_score

        truth = [label_name(self.truth[r.frame_ref]) for r in self.final]
        pred = [label_name(r.final_label) for r in self.final]
        labels = sorted(set(truth) | set(pred))
        return float(f1_score(truth, pred, labels=labels, average="macro", zero_division=0))


def _backends(scenario: Scenario, t: Thresholds):
    profiles = scenario.resolved_profiles()
    detector = SyntheticDetector(StageProfile.parse(profiles["detector"], Stage.I), scenario.seed)
    recon = SyntheticReconstruction(StageProfile.parse(profiles["reconstruction"], Stage.II), scenario.seed)
    if scenario.semantic_model:
        bank, fixture = load_model(scenario.semantic_model)
    else:
        bank, fixture = builtin_model()
    classifier = SemanticClassifier(bank, fixture, t.tau_c)
    semantic = SyntheticSemantic(StageProfile.parse(profiles["semantic"], Stage.III), classifier,
                                 scenario.seed)
    return detector, recon, semantic


def _fixed_latencies(stages) -> list[float] | None:
    lats = [b.profile.latency for b in stages]
    if all(l.fixed for l in lats):
        return [l.mean for l in lats]
    return None


class _Severity:
    """Correlates visual (Stage I anomaly) and contextual (accepted Stage III)
    detections that fall within ``window`` ticks of each other."""

    def __init__(self, t: Thresholds, window: int):
        self.t = t
        self.window = window
        self.visual: deque = deque()

    def observe(self, r: CascadeResult) -> SeverityInput | None:
        tick = r.stream_time
        while self.visual and self.visual[0][0] < tick - self.window:
            self.visual.popleft()
        if r.exit_stage is Stage.I and r.final_label != BENIGN:
            self.visual.append((tick, r.confidence, r.frame_ref, r.final_label))
            return None
        if r.exit_stage is Stage.III and r.final_label != BENIGN and r.verdicts[-1].error is None:
            candidates = [v for v in self.visual if abs(v[0] - tick) <= self.window and v[2] != r.frame_ref]
            if not candidates:
                return None
            best = max(candidates, key=lambda v: v[1])
            score, alert = severity(SeverityInput(best[1], r.confidence), self.t)
            return SeverityNotice(score, alert, best[2], best[3], r.frame_ref, r.final_label)
        return None


def run_scenario(
    scenario: Scenario,
    thresholds: Thresholds | None = None,
    keep_transcript: bool = True,
    extra_alarms: Iterable[tuple[str, int]] = (),
    until_tick: int | None = None,
) -> RunResult:
    """Simulate the scenario tick by tick and collect metrics, events and the
    bus transcript.

    Within a tick: cameras emit frames (published as ``tasks``), scripted alarms
    go out on ``alerts``, the event agent escalates alarmed cameras, the monitor
    probes if due, the cascade worker drains ``tasks`` and publishes
    ``verdicts``, and the supervisor fuses severities. Prototype EMA updates
    from a tick are applied after the whole tick's batch is evaluated.
    """
    t = validate_thresholds(thresholds or scenario.resolved_thresholds())
    detector, recon, semantic = _backends(scenario, t)
    stages = (detector, recon, semantic)
    classifier: SemanticClassifier = semantic.classifier

    now = [0.0]
    broker = Broker(clock=lambda: now[0])
    transcript: list[Envelope] = []
    digest = hashlib.sha256()

    def record(env: Envelope):
        digest.update(json.dumps(env.to_record(), sort_keys=True).encode())
        digest.update(b"\n")
        if keep_transcript:
            transcript.append(env)

    broker.listeners.append(record)

    registry = CameraRegistry(
        tuple(CameraEntry(c.id, c.source, c.config_checksum) for c in scenario.cameras),
        scenario.probe_interval,
    )
    source = StreamBuffer(scenario, depth=max(scenario.alarm_window, 8))
    event_agent = EventAgent(registry, source, broker, scenario.alarm_window)
    monitor = MonitorAgent(registry, source, broker, t, scenario.entropy_bins)
    worker_sub = broker.subscribe(TASKS, "cascade-worker")
    verdict_sub = broker.subscribe(VERDICTS, "supervisor")
    health_sub = broker.subscribe(HEALTH, "supervisor")
    fuser = _Severity(t, scenario.correlation_window)

    segments = {c.id: scenario.segments_for(c.id) for c in scenario.cameras}
    seg_idx = {c.id: 0 for c in scenario.cameras}
    alarms: dict[int, list[str]] = {}
    for seg in scenario.timeline:
        if seg.cls == "loiter_alarm":
            alarms.setdefault(seg.start, []).append(seg.camera)
    for cam, tick in extra_alarms:
        alarms.setdefault(tick, []).append(cam)

    results: list[CascadeResult] = []
    origins: list[str] = []
    best: dict = {}
    truth: dict = {}
    severities: list[SeverityNotice] = []
    stage3_scores: list[tuple[Label, float]] = []
    pool = ThreadPoolExecutor(scenario.workers) if scenario.workers > 1 else None
    failures = 0
    generated = 0
    last_tick = scenario.duration_ticks - 1 if until_tick is None else min(until_tick, scenario.duration_ticks - 1)

    try:
        for tick in range(last_tick + 1):
            now[0] = tick / TICKS_PER_SECOND
            source.now_tick = tick

            for cam in scenario.cameras:
                segs = segments[cam.id]
                i = seg_idx[cam.id]
                while i < len(segs) and segs[i].end < tick:
                    i += 1
                seg_idx[cam.id] = i
                seg: Segment | None = segs[i] if i < len(segs) and segs[i].start <= tick else None
                cls = seg.cls if seg else "normal"
                frame = generate_frame(cam, cls, tick, scenario.seed, seg)
                generated += 1
                if seg is not None and seg.cls == "custom":
                    truth[frame.ref] = parse_label(seg.params.get("label", seg.params["name"]))
                else:
                    truth[frame.ref] = TRUTH_LABELS[cls]
                source.push(frame)
                broker.publish(TASKS, FrameTask(frame))

            for cam_id in alarms.get(tick, ()):
                broker.publish(ALERTS, AlarmSignal(cam_id, tick))
            event_agent.step(now[0])
            monitor.step(now[0])

            # cascade worker: evaluate the tick's batch against one bank snapshot
            envs = broker.poll(worker_sub)
            snapshot = stages

            def evaluate(env, snapshot=snapshot):
                task = env.payload
                return run_cascade(task.frame, snapshot, t, force_stage3=task.escalate_semantics,
                                   parallel=scenario.parallel_stage12)

            batch = list(pool.map(evaluate, envs)) if pool else [evaluate(e) for e in envs]
            for env, r in zip(envs, batch):
                origin = env.payload.origin
                results.append(r)
                origins.append(origin)
                failures += any(v.error for v in r.verdicts + r.evidence)
                prev = best.get(r.frame_ref)
                if prev is None or (r.forced and not prev.forced):
                    best[r.frame_ref] = r
                broker.publish(VERDICTS, Verdict(r, origin))
                if r.exit_stage is Stage.III and r.verdicts[-1].error is None:
                    v3 = r.verdicts[-1]
                    label, score = classifier.classify(v3.detail)
                    stage3_scores.append((label, score))
                    classifier = _ema(classifier, scenario.ema_policy, label, v3.detail)
            if classifier is not stages[2].classifier:
                stages = (detector, recon, semantic.with_classifier(classifier))

            for env in broker.poll(verdict_sub):
                notice = fuser.observe(env.payload.result)
                if notice is not None:
                    severities.append(notice)
                    broker.publish(EVENTS, notice)
            broker.poll(health_sub)
    finally:
        if pool:
            pool.shutdown()

    final = [best[k] for k in sorted(best)]
    sources = {c.id: c.source for c in scenario.cameras}
    events = merge_events(final, scenario.event_gap, sources)
    for ev in events:
        broker.publish(EVENTS, EventNotice(ev))

    fixed = None if scenario.parallel_stage12 or failures else _fixed_latencies(stages)
    metrics = accounting(results, fixed, scenario.baseline_latency, len(events))
    return RunResult(
        metrics=metrics,
        events=events,
        transcript=transcript,
        transcript_hash=digest.hexdigest(),
        results=results,
        origins=origins,
        final=final,
        truth=truth,
        health=list(monitor.history),
        severities=severities,
        stage3_scores=stage3_scores,
        frames_generated=generated,
        queued=broker.pending(worker_sub),
        thresholds=t,
    )


def _ema(classifier: SemanticClassifier, policy: str, label: Label, text: str) -> SemanticClassifier:
    if policy == "off":
        return classifier
    if label == BENIGN:
        if policy != "all":
            return classifier
        label, _ = classify(text, classifier.fixture, classifier.bank, -math.inf)
    bank = ema_update(classifier.bank, label, classifier.fixture.embed(text))
    return classifier.with_bank(bank)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

SWEEP_PARAMETERS = ("tau1", "tau2", "tau_c")
SWEEP_METRICS = ("early_exit_pct", "macro_f1_proxy", "mean_latency", "accepted_fraction")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    metrics_requested: tuple[str, ...] = SWEEP_METRICS

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"cannot sweep {self.parameter!r}; choose from {SWEEP_PARAMETERS}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if list(self.values) != sorted(self.values):
            raise ConfigError("sweep values must be sorted ascending")
        bad = set(self.metrics_requested) - set(SWEEP_METRICS)
        if bad:
            raise ConfigError(f"unknown sweep metrics {sorted(bad)}")


def sweep_row(run: RunResult, spec: SweepSpec, value: float) -> dict:
    row = {"parameter": spec.parameter, "value": value}
    for m in spec.metrics_requested:
        if m == "early_exit_pct":
            row[m] = run.early_exit_pct
        elif m == "macro_f1_proxy":
            row[m] = run.macro_f1_proxy()
        elif m == "mean_latency":
            row[m] = run.metrics.mean_latency
        elif m == "accepted_fraction":
            row[m] = run.accepted_fraction
    for s in Stage:
        row[f"exits_{s.name}"] = run.metrics.exits_by_stage[s]
    return row


def run_sweep(scenario: Scenario, spec: SweepSpec) -> list[dict]:
    """One fresh run per value (same seed); rows in value order."""
    base = scenario.resolved_thresholds()
    rows = []
    for value in spec.values:
        t = validate_thresholds(replace(base, **{spec.parameter: value}))
        run = run_scenario(scenario, thresholds=t, keep_transcript=False)
        rows.append(sweep_row(run, spec, value))
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    import csv
    import io

    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


def emit_report(metrics: RunMetrics, events: Sequence[Event], out_dir, fmt: str = "csv",
                extra: dict | None = None) -> list[Path]:
    """Write ``summary.json`` plus ``events.csv`` or ``events.json``."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = {"metrics": metrics.to_dict()}
        if extra:
            summary.update(extra)
        p = out / "summary.json"
        p.write_text(json.dumps(summary, indent=2) + "\n")
        written.append(p)
        if fmt == "csv":
            p = out / "events.csv"
            p.write_text(events_to_csv(events))
        else:
            p = out / "events.json"
            p.write_text(json.dumps([e.to_dict() for e in events], indent=2) + "\n")
        written.append(p)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return written


def run_extra(run: RunResult, scenario: Scenario) -> dict:
    return {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "transcript_hash": run.transcript_hash,
        "thresholds": run.thresholds.to_dict(),
        "severity_alerts": [n.to_record() for n in run.severities],
        "frames_generated": run.frames_generated,
    }
