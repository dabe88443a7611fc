"""Event-driven alarm agent and cyclical health-monitoring agent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .bus import ALERTS, HEALTH, TASKS, AlarmSignal, Broker, FrameTask, ProbeReport
from .domain import TICKS_PER_SECOND, Frame, Thresholds
from .errors import ConfigError, DegenerateFrame, StreamUnavailable, UnknownCamera

DEFAULT_BINS = 256
DEFAULT_ALARM_WINDOW = 4


def shannon_entropy(frame: Frame | np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Histogram entropy (nats) of all intensities of a frame.

    Bucket ``i`` covers ``[i/bins, (i+1)/bins)``; the value 1.0 lands in the
    last bucket. Empty buckets contribute nothing.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    px = frame.pixels if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    px = px.reshape(-1)
    if px.size == 0:
        raise DegenerateFrame("frame has no pixels")
    idx = np.minimum((px * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p = counts[counts > 0] / px.size
    h = float(-(p * np.log(p)).sum())
    return h if h > 0.0 else 0.0


# --------------------------------------------------------------------------
# Registry and health
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraEntry:
    camera_id: str
    stream: str
    config_checksum: str


@dataclass(frozen=True)
class CameraRegistry:
    cameras: tuple[CameraEntry, ...]
    probe_interval: float = 1.0  # seconds

    def __post_init__(self):
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate camera ids in {ids}")
        if not self.probe_interval > 0:
            raise ConfigError("probe_interval must be > 0")

    def __contains__(self, camera_id) -> bool:
        return any(c.camera_id == camera_id for c in self.cameras)

    def get(self, camera_id: str) -> CameraEntry:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        raise UnknownCamera(camera_id)


@dataclass(frozen=True)
class HealthStatus:
    camera_id: str
    entropy: float
    entropy_ok: bool
    stream_live: bool
    config_ok: bool
    probed_at: float

    @property
    def healthy(self) -> bool:
        return self.entropy_ok and self.stream_live and self.config_ok


class StreamSource(Protocol):
    """What the agents need from the camera side."""

    def latest(self, camera_id: str) -> Frame: ...

    def recent(self, camera_id: str, n: int) -> list[Frame]: ...

    def config_checksum(self, camera_id: str) -> str: ...


def cyclical_probe(
    registry: CameraRegistry,
    source: StreamSource,
    thresholds: Thresholds,
    broker: Broker,
    now: float,
    bins: int = DEFAULT_BINS,
) -> list[HealthStatus]:
    """Probe every camera once, publishing one report per camera on ``health``.

    A low-entropy frame is also routed to the cascade via ``tasks``. An
    unreachable stream is reported with ``stream_live=False`` (entropy 0) and
    the sweep moves on.
    """
    if not registry.cameras:
        raise ConfigError("registry is empty")
    out = []
    for cam in registry.cameras:
        try:
            frame = source.latest(cam.camera_id)
        except StreamUnavailable:
            status = HealthStatus(cam.camera_id, 0.0, False, False, False, now)
            frame = None
        else:
            h = shannon_entropy(frame, bins)
            age = now - frame.stream_time / TICKS_PER_SECOND
            try:
                config_ok = source.config_checksum(cam.camera_id) == cam.config_checksum
            except StreamUnavailable:
                config_ok = False
            status = HealthStatus(
                cam.camera_id, h, h >= thresholds.tau_h, age < 2 * registry.probe_interval,
                config_ok, now,
            )
        broker.publish(
            HEALTH,
            ProbeReport(status.camera_id, status.entropy, status.healthy,
                        status.entropy_ok, status.stream_live, status.config_ok),
            at=now,
        )
        if frame is not None and not status.entropy_ok:
            broker.publish(TASKS, FrameTask(frame, escalate_semantics=False, origin="monitor"), at=now)
        out.append(status)
    return out


def event_agent_on_alarm(
    alarm: AlarmSignal,
    source: StreamSource,
    registry: CameraRegistry,
    broker: Broker,
    window: int = DEFAULT_ALARM_WINDOW,
    now: float | None = None,
) -> list[FrameTask]:
    """Route the ``window`` most recent frames of the alarmed camera to the cascade."""
    registry.get(alarm.camera_id)
    frames = source.recent(alarm.camera_id, window)
    tasks = [FrameTask(f, escalate_semantics=True, origin="alarm") for f in frames]
    for task in tasks:
        broker.publish(TASKS, task, at=now)
    return tasks


# --------------------------------------------------------------------------
# Agent loops
# --------------------------------------------------------------------------


@dataclass
class EventAgent:
    """Consumes ``alerts`` only."""

    registry: CameraRegistry
    source: StreamSource
    broker: Broker
    window: int = DEFAULT_ALARM_WINDOW
    name: str = "event-agent"
    handled: list = field(default_factory=list)

    def __post_init__(self):
        self._sub = self.broker.subscribe(ALERTS, self.name)

    def step(self, now: float) -> list[FrameTask]:
        published = []
        for env in self.broker.poll(self._sub):
            published += event_agent_on_alarm(
                env.payload, self.source, self.registry, self.broker, self.window, now
            )
            self.handled.append(env.payload)
        return published


@dataclass
class MonitorAgent:
    """Probes the camera set every ``registry.probe_interval`` seconds.

    Publishes only; it never subscribes to ``alerts``.
    """

    registry: CameraRegistry
    source: StreamSource
    broker: Broker
    thresholds: Thresholds
    bins: int = DEFAULT_BINS
    last_probe: float = -math.inf
    history: list = field(default_factory=list)

    def due(self, now: float) -> bool:
        return now - self.last_probe >= self.registry.probe_interval - 1e-12

    def step(self, now: float) -> list[HealthStatus]:
        if not self.due(now):
            return []
        self.last_probe = now
        statuses = cyclical_probe(self.registry, self.source, self.thresholds, self.broker, now, self.bins)
        self.history.extend(statuses)
        return statuses
