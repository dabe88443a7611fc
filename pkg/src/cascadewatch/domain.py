"""Core value types: frames, labels, thresholds and stage verdicts."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Union

import numpy as np

from .errors import BoundViolation, InvalidFrame, InvalidLabel, WeightSumViolation

#: Simulated frame rate. One tick is one frame period.
TICKS_PER_SECOND = 30
MIN_FRAME_SIDE = 8


# --------------------------------------------------------------------------
# Frames
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Frame:
    """A small normalized pixel grid tagged with its camera and tick.

    ``pixels`` has shape ``(height, width, channels)`` and is stored read-only;
    its row-major flattening is the wire representation.
    """

    camera_id: str
    stream_time: int
    pixels: np.ndarray
    seed_tag: str | None = None

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise InvalidFrame(f"pixels must be (H, W, C), got shape {px.shape}")
        h, w, c = px.shape
        if c not in (1, 3):
            raise InvalidFrame(f"channels must be 1 or 3, got {c}")
        if h < MIN_FRAME_SIDE or w < MIN_FRAME_SIDE:
            raise InvalidFrame(f"frame {w}x{h} smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}")
        if not (np.isfinite(px).all() and px.min() >= 0.0 and px.max() <= 1.0):
            raise InvalidFrame("pixel intensities must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def ref(self) -> tuple[str, int]:
        return (self.camera_id, self.stream_time)

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    @classmethod
    def from_flat(cls, camera_id, stream_time, width, height, channels, pixels, seed_tag=None):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.size != width * height * channels:
            raise InvalidFrame(
                f"expected {width * height * channels} pixel values, got {arr.size}"
            )
        return cls(camera_id, int(stream_time), arr.reshape(height, width, channels), seed_tag)

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "stream_time": self.stream_time,
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "pixels": self.flat().tolist(),
            "seed_tag": self.seed_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Frame":
        return cls.from_flat(
            d["camera_id"], d["stream_time"], d["width"], d["height"], d["channels"],
            d["pixels"], d.get("seed_tag"),
        )

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.camera_id == other.camera_id
            and self.stream_time == other.stream_time
            and self.seed_tag == other.seed_tag
            and self.pixels.shape == other.pixels.shape
            and np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.camera_id, self.stream_time, self.seed_tag, self.pixels.tobytes()))


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise InvalidFrame("truncated PNM header")
    return data[start:pos], pos


def read_pnm(path, camera_id: str = "pnm", stream_time: int = 0) -> Frame:
    """Load a binary P5 (gray) or P6 (color) image with maxval 255."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise InvalidFrame(f"unsupported PNM magic {magic!r}")
    width, pos = _read_token(data, pos)
    height, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval != 255:
        raise InvalidFrame(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte before the raster
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    if len(data) - pos < size:
        raise InvalidFrame("truncated PNM raster")
    raster = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos)
    return Frame.from_flat(camera_id, stream_time, width, height, channels, raster / 255.0)


def write_pnm(frame: Frame, path) -> None:
    magic = b"P5" if frame.channels == 1 else b"P6"
    raster = np.rint(frame.flat() * 255.0).astype(np.uint8)
    header = magic + b"\n%d %d\n255\n" % (frame.width, frame.height)
    Path(path).write_bytes(header + raster.tobytes())


# --------------------------------------------------------------------------
# Labels
# --------------------------------------------------------------------------


class AnomalyLabel(str, enum.Enum):
    OBSTRUCTED_VIEW = "obstructed_view"
    PERSON_DETECTED = "person_detected"
    CAMERA_BLOCKED = "camera_blocked"
    SUSPICIOUS_BEHAVIOR = "suspicious_behavior"
    FROZEN_STREAM = "frozen_stream"
    ILLUMINATION_SHIFT = "illumination_shift"
    BENIGN = "benign"

    def __str__(self) -> str:
        return self.value


_SNAKE = re.compile(r"^[a-z][a-z0-9]*(_[a-z0-9]+)*$")


@dataclass(frozen=True, order=True)
class CustomLabel:
    """Scenario-defined category outside the built-in set."""

    name: str

    def __post_init__(self):
        if not _SNAKE.match(self.name or ""):
            raise InvalidLabel(f"custom label must be nonempty lowercase snake_case: {self.name!r}")
        if self.name in _BUILTIN_NAMES:
            raise InvalidLabel(f"{self.name!r} is a built-in label")

    @property
    def value(self) -> str:
        return self.name

    def __str__(self) -> str:
        return self.name


Label = Union[AnomalyLabel, CustomLabel]
_BUILTIN_NAMES = {m.value for m in AnomalyLabel}
BENIGN = AnomalyLabel.BENIGN


def parse_label(name: str | Label) -> Label:
    if isinstance(name, (AnomalyLabel, CustomLabel)):
        return name
    if name in _BUILTIN_NAMES:
        return AnomalyLabel(name)
    return CustomLabel(name)


def label_name(label: Label) -> str:
    return label.value


# --------------------------------------------------------------------------
# Thresholds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    tau1: float = 0.45
    tau2: float = 1.5e-3
    tau_c: float = 0.54
    tau_h: float = 2.3
    tau_s: float = 0.75
    lambda1: float = 0.4
    lambda2: float = 0.6

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


#: Alternate configuration for the builtin two-camera case study, where the
#: detector and reconstruction thresholds live on an aggregate-error scale.
CASE_STUDY_THRESHOLDS = Thresholds(tau1=0.85, tau2=0.12)

NAMED_THRESHOLDS = {"default": Thresholds(), "case-study": CASE_STUDY_THRESHOLDS}

_BOUNDS = {
    "tau1": (0.0, 1.0, False),
    "tau2": (0.0, math.inf, True),
    "tau_c": (-1.0, 1.0, False),
    "tau_h": (0.0, math.inf, False),
    "tau_s": (0.0, 1.0, False),
    "lambda1": (0.0, 1.0, False),
    "lambda2": (0.0, 1.0, False),
}


def validate_thresholds(t: Thresholds) -> Thresholds:
    """Return ``t`` unchanged, or raise on the first violated bound."""
    for name, (lo, hi, open_low) in _BOUNDS.items():
        v = getattr(t, name)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or math.isnan(v):
            raise BoundViolation(name, v, "finite real")
        too_low = v <= lo if open_low else v < lo
        if too_low or v > hi:
            lo_br = "(" if open_low else "["
            raise BoundViolation(name, v, f"{lo_br}{lo}, {hi}]")
    if abs(t.lambda1 + t.lambda2 - 1.0) > 1e-9:
        raise WeightSumViolation(t.lambda1, t.lambda2)
    return t


# --------------------------------------------------------------------------
# Verdicts
# --------------------------------------------------------------------------


class Stage(enum.IntEnum):
    I = 1
    II = 2
    III = 3

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, slots=True)
class StageVerdict:
    stage: Stage
    confidence: float
    label: Label
    exited: bool
    elapsed: float
    detail: str = ""
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.name,
            "confidence": self.confidence,
            "label": label_name(self.label),
            "exited": self.exited,
            "elapsed": self.elapsed,
            "detail": self.detail,
            "error": self.error,
        }


@dataclass(frozen=True, slots=True)
class CascadeResult:
    """Outcome of one pass through the cascade.

    ``verdicts`` is the routing path actually taken. ``evidence`` holds verdicts
    computed alongside the path but not on it (Stage II run concurrently with a
    Stage I that exited); it only appears when ``parallel`` is set, in which case
    ``total_latency`` charges the concurrent Stage I/II pair by its maximum.
    """

    frame_ref: tuple[str, int]
    verdicts: tuple[StageVerdict, ...]
    final_label: Label
    exit_stage: Stage
    total_latency: float
    forced: bool = False
    parallel: bool = False
    evidence: tuple[StageVerdict, ...] = field(default=())

    def __post_init__(self):
        vs = self.verdicts
        if not 1 <= len(vs) <= 3 or [v.stage for v in vs] != list(Stage)[: len(vs)]:
            raise ValueError("verdicts must be in stage order starting at Stage I")
        if self.exit_stage != vs[-1].stage or self.final_label != vs[-1].label:
            raise ValueError("exit stage and final label must match the last verdict")
        if not self.parallel and self.total_latency != sum(v.elapsed for v in vs):
            raise ValueError("total_latency must equal the sum of verdict latencies")

    @property
    def camera_id(self) -> str:
        return self.frame_ref[0]

    @property
    def stream_time(self) -> int:
        return self.frame_ref[1]

    @property
    def exit_verdict(self) -> StageVerdict:
        return self.verdicts[-1]

    @property
    def confidence(self) -> float:
        return self.verdicts[-1].confidence

    @property
    def reconstruction_error(self) -> float | None:
        for v in self.verdicts + self.evidence:
            if v.stage is Stage.II and v.error is None:
                return v.confidence
        return None

    def to_dict(self) -> dict:
        return {
            "frame_ref": list(self.frame_ref),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "evidence": [v.to_dict() for v in self.evidence],
            "final_label": label_name(self.final_label),
            "exit_stage": self.exit_stage.name,
            "total_latency": self.total_latency,
            "forced": self.forced,
            "parallel": self.parallel,
        }
