"""In-process topic broker with ordered, lossless, pull-based delivery.

Each topic keeps a gap-free sequence counter. Subscribers hold a cursor and
``poll`` for envelopes past it; a new subscriber starts at the current head, so
history is never replayed. Envelopes every current subscriber has consumed are
dropped, which keeps long simulations bounded without losing anything a live
subscriber could still read.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .domain import CascadeResult, Frame, label_name
from .errors import DuplicateSubscriber, LagOverflow, PayloadMismatch, UnknownTopic

DEFAULT_RETENTION = 65536


# --------------------------------------------------------------------------
# Payloads
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AlarmSignal:
    camera_id: str
    alarm_time: int

    def to_record(self) -> dict:
        return {"type": "alarm", "camera_id": self.camera_id, "alarm_time": self.alarm_time}


@dataclass(frozen=True)
class ProbeReport:
    camera_id: str
    entropy: float
    healthy: bool
    entropy_ok: bool = True
    stream_live: bool = True
    config_ok: bool = True

    def to_record(self) -> dict:
        return {
            "type": "probe",
            "camera_id": self.camera_id,
            "entropy": self.entropy,
            "healthy": self.healthy,
            "entropy_ok": self.entropy_ok,
            "stream_live": self.stream_live,
            "config_ok": self.config_ok,
        }


@dataclass(frozen=True)
class FrameTask:
    frame: Frame
    escalate_semantics: bool = False
    origin: str = "stream"

    def to_record(self) -> dict:
        f = self.frame
        return {
            "type": "task",
            "frame_ref": [f.camera_id, f.stream_time],
            "shape": [f.height, f.width, f.channels],
            "seed_tag": f.seed_tag,
            "pixels_sha256": hashlib.sha256(f.pixels.tobytes()).hexdigest(),
            "escalate_semantics": self.escalate_semantics,
            "origin": self.origin,
        }


@dataclass(frozen=True)
class Verdict:
    result: CascadeResult
    origin: str = "stream"

    def to_record(self) -> dict:
        return {"type": "verdict", "origin": self.origin, "result": self.result.to_dict()}


@dataclass(frozen=True)
class EventNotice:
    event: Any

    def to_record(self) -> dict:
        return {"type": "event", "event": self.event.to_dict()}


@dataclass(frozen=True)
class SeverityNotice:
    score: float
    alert: bool
    visual_ref: tuple[str, int]
    visual_label: Any
    contextual_ref: tuple[str, int]
    contextual_label: Any

    def to_record(self) -> dict:
        return {
            "type": "severity",
            "score": self.score,
            "alert": self.alert,
            "visual_ref": list(self.visual_ref),
            "visual_label": label_name(self.visual_label),
            "contextual_ref": list(self.contextual_ref),
            "contextual_label": label_name(self.contextual_label),
        }


ALERTS, HEALTH, TASKS, VERDICTS, EVENTS = "alerts", "health", "tasks", "verdicts", "events"

DEFAULT_TOPICS: dict[str, tuple[type, ...]] = {
    ALERTS: (AlarmSignal,),
    HEALTH: (ProbeReport,),
    TASKS: (FrameTask,),
    VERDICTS: (Verdict,),
    EVENTS: (EventNotice, SeverityNotice),
}


# --------------------------------------------------------------------------
# Broker
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Envelope:
    topic: str
    seq: int
    payload: Any
    published_at: float

    def to_record(self) -> dict:
        rec = getattr(self.payload, "to_record", None)
        body = rec() if rec is not None else repr(self.payload)
        return {"topic": self.topic, "seq": self.seq, "published_at": self.published_at,
                "payload": body}


@dataclass
class Subscription:
    topic: str
    subscriber_id: str
    cursor: int = 0


@dataclass
class _Topic:
    name: str
    types: tuple[type, ...]
    retention: int | None
    log: list = field(default_factory=list)
    start: int = 0  # index of first live entry in ``log``
    max_seq: int = 0
    subscribers: dict = field(default_factory=dict)

    @property
    def first_seq(self) -> int:
        # seq of the oldest retained envelope (max_seq + 1 when empty)
        return self.max_seq - (len(self.log) - self.start) + 1

    def trim(self):
        if self.subscribers:
            floor = min(s.cursor for s in self.subscribers.values())
        else:
            floor = self.max_seq
        drop = floor - self.first_seq + 1
        if self.retention is not None:
            drop = max(drop, (len(self.log) - self.start) - self.retention)
        if drop > 0:
            self.start += drop
        if self.start > 1024 and self.start * 2 > len(self.log):
            del self.log[: self.start]
            self.start = 0


class Broker:
    """Thread-safe topic broker.

    ``clock`` supplies the simulated publish time; ``retention`` caps how many
    unconsumed envelopes a topic keeps (``None`` = unbounded). Callables in
    ``listeners`` see every envelope in global publish order.
    """

    def __init__(
        self,
        topics: dict[str, Iterable[type]] | Iterable[str] = DEFAULT_TOPICS,
        retention: int | None = None,
        clock: Callable[[], float] | None = None,
    ):
        self._lock = threading.Lock()
        self._topics: dict[str, _Topic] = {}
        self.retention = retention
        self.clock = clock or (lambda: 0.0)
        self.listeners: list[Callable[[Envelope], None]] = []
        if isinstance(topics, dict):
            for name, types in topics.items():
                self.register(name, tuple(types))
        else:
            for name in topics:
                self.register(name, ())

    def register(self, topic: str, types: tuple[type, ...] = ()) -> None:
        with self._lock:
            if topic not in self._topics:
                self._topics[topic] = _Topic(topic, tuple(types), self.retention)

    @property
    def topics(self) -> list[str]:
        return list(self._topics)

    def _topic(self, name: str) -> _Topic:
        try:
            return self._topics[name]
        except KeyError:
            raise UnknownTopic(name) from None

    def publish(self, topic: str, payload: Any, at: float | None = None) -> int:
        t = self._topic(topic)
        if t.types and not isinstance(payload, t.types):
            raise PayloadMismatch(
                f"topic {topic!r} carries {[c.__name__ for c in t.types]}, "
                f"got {type(payload).__name__}"
            )
        with self._lock:
            t.max_seq += 1
            env = Envelope(topic, t.max_seq, payload, self.clock() if at is None else at)
            t.log.append(env)
            t.trim()
            for listener in self.listeners:
                listener(env)
        return env.seq

    def subscribe(self, topic: str, subscriber_id: str) -> Subscription:
        t = self._topic(topic)
        with self._lock:
            if subscriber_id in t.subscribers:
                raise DuplicateSubscriber(f"{subscriber_id!r} already subscribed to {topic!r}")
            sub = Subscription(topic, subscriber_id, t.max_seq)
            t.subscribers[subscriber_id] = sub
            t.trim()
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        t = self._topic(sub.topic)
        with self._lock:
            if t.subscribers.get(sub.subscriber_id) is sub:
                del t.subscribers[sub.subscriber_id]
                t.trim()

    def poll(self, sub: Subscription, max_n: int | None = None) -> list[Envelope]:
        """Return up to ``max_n`` envelopes after the cursor, advancing it."""
        t = self._topic(sub.topic)
        if max_n is not None and max_n <= 0:
            return []
        with self._lock:
            if t.subscribers.get(sub.subscriber_id) is not sub:
                raise KeyError(f"subscription {sub.subscriber_id!r} is not active on {sub.topic!r}")
            if sub.cursor >= t.max_seq:
                return []
            first = t.first_seq
            if sub.cursor + 1 < first:
                raise LagOverflow(
                    f"{sub.subscriber_id!r} at seq {sub.cursor} but {sub.topic!r} retains from {first}"
                )
            i = t.start + (sub.cursor + 1 - first)
            j = len(t.log) if max_n is None else min(len(t.log), i + max_n)
            out = t.log[i:j]
            sub.cursor = out[-1].seq
            t.trim()
        return out

    def head(self, topic: str) -> int:
        return self._topic(topic).max_seq

    def pending(self, sub: Subscription) -> int:
        return self._topic(sub.topic).max_seq - sub.cursor
