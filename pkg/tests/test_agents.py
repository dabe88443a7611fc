import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cascadewatch.agents import (
    CameraEntry,
    CameraRegistry,
    EventAgent,
    MonitorAgent,
    cyclical_probe,
    event_agent_on_alarm,
    shannon_entropy,
)
from cascadewatch.bus import ALERTS, HEALTH, TASKS, AlarmSignal, Broker
from cascadewatch.domain import Frame, Thresholds
from cascadewatch.errors import ConfigError, DegenerateFrame, StreamUnavailable, UnknownCamera

from oracles import entropy as entropy_oracle


class FakeSource:
    def __init__(self, frames, down=(), configs=None):
        self.frames = frames  # camera -> list[Frame]
        self.down = set(down)
        self.configs = configs or {}

    def latest(self, cam):
        if cam in self.down or not self.frames.get(cam):
            raise StreamUnavailable(cam)
        return self.frames[cam][-1]

    def recent(self, cam, n):
        if cam in self.down:
            raise StreamUnavailable(cam)
        return self.frames[cam][-n:]

    def config_checksum(self, cam):
        return self.configs.get(cam, "cfg")


def _textured(cam, tick, seed=0):
    return Frame(cam, tick, np.random.default_rng(seed + tick).random((16, 16, 3)))


def _flat(cam, tick, v=0.05):
    return Frame(cam, tick, np.full((16, 16, 3), v))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (8, 8, 3), elements=st.floats(0, 1)),
       st.sampled_from([2, 16, 256, 1000]))
def test_entropy_matches_recount_and_is_bounded(px, bins):
    h = shannon_entropy(px, bins)
    assert h == pytest.approx(entropy_oracle(px.reshape(-1).tolist(), bins), abs=1e-9)
    assert 0.0 <= h <= math.log(bins) + 1e-12


def test_entropy_edges():
    assert shannon_entropy(np.ones((8, 8))) == 0.0
    assert math.copysign(1.0, shannon_entropy(np.zeros((8, 8)))) == 1.0
    # 1.0 shares the last bucket with 255/256
    two = np.array([255 / 256, 1.0] * 32)
    assert shannon_entropy(two) == 0.0
    uniform = (np.arange(256) + 0.5) / 256
    assert shannon_entropy(uniform) == pytest.approx(math.log(256), abs=1e-12)
    with pytest.raises(DegenerateFrame):
        shannon_entropy(np.array([]))
    with pytest.raises(ValueError):
        shannon_entropy(uniform, bins=1)


def _registry(*ids, interval=1.0):
    return CameraRegistry(tuple(CameraEntry(i, f"rtsp://{i}", "cfg") for i in ids), interval)


def test_registry_validation():
    with pytest.raises(ConfigError):
        _registry("a", "a")
    with pytest.raises(ConfigError):
        _registry("a", interval=0)
    with pytest.raises(UnknownCamera):
        _registry("a").get("b")


def test_probe_flags_each_failure_mode_and_continues():
    src = FakeSource(
        {"ok": [_textured("ok", 30)], "dark": [_flat("dark", 30)], "stale": [_textured("stale", 0)],
         "drift": [_textured("drift", 30)], "gone": [_textured("gone", 30)]},
        down={"gone"}, configs={"drift": "cfg-v2"},
    )
    reg = _registry("ok", "dark", "stale", "drift", "gone")
    b = Broker()
    health, tasks = b.subscribe(HEALTH, "h"), b.subscribe(TASKS, "t")
    out = {s.camera_id: s for s in cyclical_probe(reg, src, Thresholds(), b, now=2.5)}
    assert out["ok"].healthy
    assert not out["dark"].entropy_ok and out["dark"].stream_live
    assert not out["stale"].stream_live and out["stale"].entropy_ok
    assert not out["drift"].config_ok
    g = out["gone"]
    assert (g.entropy, g.stream_live, g.entropy_ok, g.config_ok) == (0.0, False, False, False)
    assert [e.payload.camera_id for e in b.poll(health)] == ["ok", "dark", "stale", "drift", "gone"]
    escalated = b.poll(tasks)
    assert [e.payload.frame.camera_id for e in escalated] == ["dark"]
    assert escalated[0].payload.origin == "monitor"


def test_probe_empty_registry():
    with pytest.raises(ConfigError):
        cyclical_probe(CameraRegistry(()), FakeSource({}), Thresholds(), Broker(), 0.0)


def test_alarm_routes_recent_window():
    frames = [_textured("c2", t) for t in range(10)]
    src = FakeSource({"c2": frames})
    b = Broker()
    tasks = b.subscribe(TASKS, "t")
    out = event_agent_on_alarm(AlarmSignal("c2", 9), src, _registry("c2"), b, window=4)
    assert [t.frame.stream_time for t in out] == [6, 7, 8, 9]
    assert all(t.escalate_semantics for t in out)
    assert len(b.poll(tasks)) == 4
    with pytest.raises(UnknownCamera):
        event_agent_on_alarm(AlarmSignal("zz", 9), src, _registry("c2"), b)


def test_agents_keep_to_their_topics():
    src = FakeSource({"c": [_textured("c", t) for t in range(5)]})
    reg = _registry("c")
    b = Broker()
    ev = EventAgent(reg, src, b, window=2)
    mon = MonitorAgent(reg, src, b, Thresholds())
    # the monitor never subscribes anywhere; the event agent only to alerts
    assert list(b._topics[ALERTS].subscribers) == ["event-agent"]
    assert all(not b._topics[t].subscribers for t in (HEALTH, TASKS))
    b.publish(ALERTS, AlarmSignal("c", 4))
    assert len(ev.step(0.1)) == 2
    assert ev.step(0.2) == []
    assert mon.step(0.0) and not mon.step(0.5) and mon.step(1.0)
    assert len(mon.history) == 2
