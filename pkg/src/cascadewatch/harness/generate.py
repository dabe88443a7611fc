"""Seeded synthetic camera frames.

Every frame is a pure function of (camera spec, class, tick, seed), so any
frame can be regenerated without replaying the stream.
"""

from __future__ import annotations

import functools
import hashlib

import numpy as np

from ..domain import Frame
from ..errors import UnknownClass
from .scenario import CameraSpec, Segment

GENERATOR_CLASSES = ("normal", "obstruction", "noise_burst", "frozen", "loiter_alarm")

OBSTRUCTION_LEVEL = 0.05
OBSTRUCTION_NOISE = 0.0008
TEXTURE_NOISE = 0.004


def _key(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def _rng(seed: int, camera_id: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, _key(camera_id), *extra])


def seed_tag(cls: str, camera_id: str, tick: int, seed: int) -> str:
    return f"{cls}|{camera_id}|{tick}|{seed}"


@functools.lru_cache(maxsize=256)
def _layout(seed: int, camera_id: str, height: int, width: int, channels: int):
    # static scene layout per camera: ramp, tint and the two quadrature
    # components of the travelling wave
    scene = _rng(seed, camera_id)
    theta = scene.uniform(0, 2 * np.pi)
    offset = scene.uniform(0.3, 0.4)
    tint = scene.uniform(-0.04, 0.04, size=channels)
    wave_phase = scene.uniform(0, 2 * np.pi)

    yy, xx = np.mgrid[0:height, 0:width]
    u = xx / (width - 1)
    v = yy / (height - 1)
    c, s = np.cos(theta), np.sin(theta)
    ramp = (c * u + s * v - min(0, c) - min(0, s)) / (abs(c) + abs(s))
    # keep per-pixel slopes (and so the proxy error) independent of frame size
    amp = min(1.0, min(width, height) / 32)
    arg = 2 * np.pi * (u + 0.5 * v) + wave_phase
    static = offset + 0.4 * amp * ramp
    static = static[:, :, None] + tint[None, None, :]
    wave_s = (0.05 * amp * np.sin(arg))[:, :, None]
    wave_c = (0.05 * amp * np.cos(arg))[:, :, None]
    for a in (static, wave_s, wave_c):
        a.flags.writeable = False
    return static, wave_s, wave_c


def _gradient(cam: CameraSpec, tick: int, seed: int) -> np.ndarray:
    static, wave_s, wave_c = _layout(seed, cam.id, cam.height, cam.width, cam.channels)
    phi = tick / 45.0
    drift = 0.02 * np.sin(tick / 90.0)
    # sin(arg + phi) expanded so the spatial part stays cached
    px = static + wave_s * np.cos(phi) + wave_c * np.sin(phi) + drift
    px += _rng(seed, cam.id, tick).normal(0.0, TEXTURE_NOISE, size=px.shape)
    return np.clip(px, 0.0, 1.0, out=px)


def _pixels(cam: CameraSpec, base: str, tick: int, seed: int, segment_start: int) -> np.ndarray:
    shape = (cam.height, cam.width, cam.channels)
    if base in ("normal", "loiter_alarm"):
        return _gradient(cam, tick, seed)
    if base == "obstruction":
        noise = _rng(seed, cam.id, tick, 1).normal(0.0, OBSTRUCTION_NOISE, size=shape)
        return np.clip(OBSTRUCTION_LEVEL + noise, 0.0, 1.0)
    if base == "noise_burst":
        return _rng(seed, cam.id, tick, 2).random(shape)
    if base == "frozen":
        return _gradient(cam, max(segment_start - 1, 0), seed)
    raise UnknownClass(base)


def generate_frame(cam: CameraSpec, cls: str, tick: int, seed: int, segment: Segment | None = None) -> Frame:
    """One frame of ``cls`` at ``tick``. ``segment`` supplies frozen/custom context."""
    tag_cls = cls
    base = cls
    start = segment.start if segment is not None else tick
    if cls == "custom":
        if segment is None:
            raise UnknownClass("custom frames need their segment")
        tag_cls = segment.params["name"]
        base = segment.params.get("base", "normal")
    elif cls not in GENERATOR_CLASSES:
        raise UnknownClass(cls)
    return Frame(cam.id, tick, _pixels(cam, base, tick, seed, start), seed_tag(tag_cls, cam.id, tick, seed))


def generate_stream(cam: CameraSpec, cls: str, ticks: range, seed: int,
                    segment: Segment | None = None) -> list[Frame]:
    if segment is None and cls in ("frozen", "custom"):
        segment = Segment(start=ticks.start, end=max(ticks.start, ticks.stop - 1), camera=cam.id,
                          cls=cls, params={} if cls == "frozen" else {"name": "custom_event"})
    return [generate_frame(cam, cls, t, seed, segment) for t in ticks]
