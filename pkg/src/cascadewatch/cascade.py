"""Three-stage early-exit cascade and deterministic stand-in stage backends.

Routing: Stage I exits when its confidence reaches ``tau1``; otherwise Stage II
exits when the reconstruction error reaches ``tau2``; everything else goes to
Stage III. Both comparisons are closed (``>=``).
"""

from __future__ import annotations

import hashlib
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from .domain import (
    BENIGN,
    CascadeResult,
    Frame,
    Label,
    Stage,
    StageVerdict,
    Thresholds,
    label_name,
    parse_label,
)
from .errors import (
    BackendFailure,
    ConfigError,
    InvalidFrame,
    ShapeNotDivisible,
    UnknownScenarioClass,
)

DEFAULT_LATENCIES = {Stage.I: 0.034, Stage.II: 0.062, Stage.III: 1.82}
PROXY_FACTORS = (2, 4, 8)


# --------------------------------------------------------------------------
# Reconstruction proxy
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReconstructionPair:
    original: Frame
    reconstruction: Frame

    def __post_init__(self):
        if self.original.pixels.shape != self.reconstruction.pixels.shape:
            raise InvalidFrame(
                f"shape mismatch {self.original.pixels.shape} vs {self.reconstruction.pixels.shape}"
            )

    @classmethod
    def of(cls, original, reconstruction) -> "ReconstructionPair":
        """Build a pair from frames or raw ``(H, W, C)`` arrays."""
        if not isinstance(original, Frame):
            original = Frame("x", 0, original)
        if not isinstance(reconstruction, Frame):
            reconstruction = Frame(original.camera_id, original.stream_time, reconstruction)
        return cls(original, reconstruction)


def _box_reconstruct(px: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = px.shape
    blocks = px.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))
    return np.repeat(np.repeat(blocks, factor, axis=0), factor, axis=1)


def reconstruct_proxy(frame: Frame, factor: int = 4) -> ReconstructionPair:
    """Box-average downsample by ``factor`` then nearest-neighbour upsample."""
    if factor not in PROXY_FACTORS:
        raise ValueError(f"factor must be one of {PROXY_FACTORS}")
    if frame.height % factor or frame.width % factor:
        raise ShapeNotDivisible(f"{frame.width}x{frame.height} not divisible by {factor}")
    rec = np.clip(_box_reconstruct(frame.pixels, factor), 0.0, 1.0)
    return ReconstructionPair(frame, Frame(frame.camera_id, frame.stream_time, rec, frame.seed_tag))


def reconstruction_error(pair: ReconstructionPair) -> float:
    """Per-pixel mean squared error over all channels."""
    d = pair.original.pixels - pair.reconstruction.pixels
    return float(np.mean(d * d))


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------


class StageOutput(NamedTuple):
    confidence: float
    label: Label
    detail: str
    latency: float


class StageBackend(ABC):
    """One cascade stage. ``evaluate`` must be deterministic in its input."""

    stage: Stage

    @abstractmethod
    def evaluate(self, frame: Frame) -> StageOutput: ...


def scenario_class(frame: Frame) -> str:
    """Scenario class encoded in ``seed_tag`` (``class|camera|tick|seed``)."""
    if not frame.seed_tag:
        return "normal"
    return frame.seed_tag.split("|", 1)[0]


def frame_rng(seed: int, stage: Stage, frame: Frame) -> random.Random:
    if frame.seed_tag:
        key = frame.seed_tag
    else:
        key = f"{frame.camera_id}|{frame.stream_time}|" + hashlib.sha256(frame.pixels.tobytes()).hexdigest()
    return random.Random(f"{seed}|{stage.name}|{key}")


@dataclass(frozen=True)
class Distribution:
    """Per-frame value distribution from a profile.

    JSON forms: ``{"fixed": v}``, ``{"beta": [a, b], "scale": s}``,
    ``{"uniform": [lo, hi]}``, and the string ``"proxy"`` (Stage II only:
    measure the reconstruction proxy on the pixels).
    """

    kind: str
    params: tuple = ()
    scale: float = 1.0

    @classmethod
    def parse(cls, obj: Any) -> "Distribution":
        if isinstance(obj, Distribution):
            return obj
        if isinstance(obj, (int, float)) and not isinstance(obj, bool):
            return cls("fixed", (float(obj),))
        if obj == "proxy":
            return cls("proxy")
        if isinstance(obj, Mapping):
            scale = float(obj.get("scale", 1.0))
            if "fixed" in obj:
                return cls("fixed", (float(obj["fixed"]),), scale)
            if "beta" in obj:
                a, b = (float(x) for x in obj["beta"])
                if a <= 0 or b <= 0:
                    raise ConfigError(f"beta parameters must be positive: {obj}")
                return cls("beta", (a, b), scale)
            if "uniform" in obj:
                lo, hi = (float(x) for x in obj["uniform"])
                if lo > hi:
                    raise ConfigError(f"uniform bounds reversed: {obj}")
                return cls("uniform", (lo, hi), scale)
        raise ConfigError(f"unrecognized distribution {obj!r}")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.params[0] * self.scale
        if self.kind == "beta":
            return rng.betavariate(*self.params) * self.scale
        if self.kind == "uniform":
            return rng.uniform(*self.params) * self.scale
        raise ValueError(f"{self.kind} distribution cannot be sampled")

    def to_json(self):
        if self.kind == "proxy":
            return "proxy"
        out: dict = {self.kind: self.params[0] if self.kind == "fixed" else list(self.params)}
        if self.scale != 1.0:
            out["scale"] = self.scale
        return out


@dataclass(frozen=True)
class Latency:
    mean: float
    jitter: float = 0.0

    @classmethod
    def parse(cls, obj) -> "Latency":
        if isinstance(obj, Latency):
            return obj
        if isinstance(obj, Mapping):
            lat = cls(float(obj["mean"]), float(obj.get("jitter", 0.0)))
        else:
            lat = cls(float(obj))
        if lat.mean < 0 or lat.jitter < 0:
            raise ConfigError(f"latency must be nonnegative: {obj!r}")
        return lat

    @property
    def fixed(self) -> bool:
        return self.jitter == 0.0

    def sample(self, rng: random.Random) -> float:
        if self.fixed:
            return self.mean
        return max(0.0, rng.uniform(self.mean - self.jitter, self.mean + self.jitter))

    def to_json(self):
        return self.mean if self.fixed else {"mean": self.mean, "jitter": self.jitter}


@dataclass(frozen=True)
class ClassProfile:
    label: Label
    value: Distribution | None = None
    descriptions: tuple[str, ...] = ()


@dataclass(frozen=True)
class StageProfile:
    """Per-scenario-class behaviour of one stand-in backend.

    A ``"default"`` class entry, if present, covers classes not listed.
    """

    latency: Latency
    classes: Mapping[str, ClassProfile]
    factor: int = 4

    def for_class(self, cls: str) -> ClassProfile:
        try:
            return self.classes[cls]
        except KeyError:
            if "default" in self.classes:
                return self.classes["default"]
            raise UnknownScenarioClass(cls) from None

    @classmethod
    def parse(cls, obj: Mapping, stage: Stage) -> "StageProfile":
        if isinstance(obj, StageProfile):
            return obj
        latency = Latency.parse(obj.get("latency", DEFAULT_LATENCIES[stage]))
        classes = {}
        value_key = {Stage.I: "confidence", Stage.II: "error", Stage.III: None}[stage]
        for name, spec in obj.get("classes", {}).items():
            label = parse_label(spec.get("label", "benign"))
            value = Distribution.parse(spec[value_key]) if value_key else None
            if value is not None and value.kind == "proxy" and stage is not Stage.II:
                raise ConfigError("proxy distributions are only valid for Stage II")
            descriptions = tuple(spec.get("descriptions", ()))
            if stage is Stage.III and not descriptions:
                raise ConfigError(f"semantic class {name!r} needs descriptions")
            classes[name] = ClassProfile(label, value, descriptions)
        factor = int(obj.get("factor", 4))
        if factor not in PROXY_FACTORS:
            raise ConfigError(f"factor must be one of {PROXY_FACTORS}")
        return cls(latency, classes, factor)

    def to_json(self) -> dict:
        classes = {}
        for name, cp in self.classes.items():
            entry: dict = {"label": label_name(cp.label)}
            if cp.value is not None:
                entry["confidence" if cp.value.kind != "proxy" else "error"] = cp.value.to_json()
            if cp.descriptions:
                entry["descriptions"] = list(cp.descriptions)
            classes[name] = entry
        return {"latency": self.latency.to_json(), "factor": self.factor, "classes": classes}


class SyntheticDetector(StageBackend):
    """Stage I stand-in: draws a confidence per frame from its class profile."""

    stage = Stage.I

    def __init__(self, profile: StageProfile, seed: int = 0):
        self.profile = profile
        self.seed = seed

    def evaluate(self, frame: Frame) -> StageOutput:
        cp = self.profile.for_class(scenario_class(frame))
        rng = frame_rng(self.seed, self.stage, frame)
        conf = cp.value.sample(rng)
        return StageOutput(conf, cp.label, "", self.profile.latency.sample(rng))


class SyntheticReconstruction(StageBackend):
    """Stage II stand-in: proxy reconstruction error, or a per-class draw."""

    stage = Stage.II

    def __init__(self, profile: StageProfile, seed: int = 0):
        self.profile = profile
        self.seed = seed

    def evaluate(self, frame: Frame) -> StageOutput:
        cp = self.profile.for_class(scenario_class(frame))
        rng = frame_rng(self.seed, self.stage, frame)
        if cp.value.kind == "proxy":
            err = reconstruction_error(reconstruct_proxy(frame, self.profile.factor))
        else:
            err = cp.value.sample(rng)
        return StageOutput(err, cp.label, "", self.profile.latency.sample(rng))


class SyntheticSemantic(StageBackend):
    """Stage III stand-in: picks a description, then normalizes it with the
    prototype classifier (abstaining to Benign below ``tau_c``)."""

    stage = Stage.III

    def __init__(self, profile: StageProfile, classifier, seed: int = 0):
        self.profile = profile
        self.classifier = classifier
        self.seed = seed

    def describe(self, frame: Frame) -> str:
        cp = self.profile.for_class(scenario_class(frame))
        rng = frame_rng(self.seed, self.stage, frame)
        return rng.choice(cp.descriptions)

    def evaluate(self, frame: Frame) -> StageOutput:
        cp = self.profile.for_class(scenario_class(frame))
        rng = frame_rng(self.seed, self.stage, frame)
        text = rng.choice(cp.descriptions)
        latency = self.profile.latency.sample(rng)
        label, score = self.classifier.classify(text)
        return StageOutput(min(1.0, max(0.0, score)), label, text, latency)

    def with_classifier(self, classifier) -> "SyntheticSemantic":
        return SyntheticSemantic(self.profile, classifier, self.seed)


def synthetic_detector_backend(profile: Mapping | StageProfile, seed: int = 0) -> SyntheticDetector:
    return SyntheticDetector(StageProfile.parse(profile, Stage.I), seed)


def synthetic_reconstruction_backend(profile: Mapping | StageProfile, seed: int = 0) -> SyntheticReconstruction:
    return SyntheticReconstruction(StageProfile.parse(profile, Stage.II), seed)


def synthetic_semantic_backend(profile: Mapping | StageProfile, classifier, seed: int = 0) -> SyntheticSemantic:
    return SyntheticSemantic(StageProfile.parse(profile, Stage.III), classifier, seed)


# --------------------------------------------------------------------------
# Routing
# --------------------------------------------------------------------------


def _evaluate(backend: StageBackend, stage: Stage, frame: Frame) -> tuple[StageOutput | None, str | None]:
    try:
        out = backend.evaluate(frame)
        conf = float(out.confidence)
        if not out.latency >= 0:
            raise ValueError(f"negative latency {out.latency}")
        if stage is Stage.II:
            if not conf >= 0:
                raise ValueError(f"reconstruction error {conf} is negative")
        elif not 0.0 <= conf <= 1.0:
            raise ValueError(f"confidence {conf} outside [0, 1]")
        return out, None
    except ConfigError:
        raise
    except Exception as exc:  # fail open: record and escalate
        return None, str(BackendFailure(stage, exc))


def _verdict(stage: Stage, out: StageOutput | None, err: str | None, threshold: float | None,
             force: bool) -> StageVerdict:
    if out is None:
        return StageVerdict(stage, 0.0, BENIGN, stage is Stage.III, 0.0, "", err)
    if stage is Stage.III:
        exited = True
    else:
        exited = not force and out.confidence >= threshold
    return StageVerdict(stage, float(out.confidence), out.label, exited, float(out.latency), out.detail)


def run_cascade(
    frame: Frame,
    stages: Sequence[StageBackend],
    t: Thresholds,
    force_stage3: bool = False,
    parallel: bool = False,
) -> CascadeResult:
    """Route one frame through the cascade.

    ``force_stage3`` keeps Stage I/II verdicts as evidence but always goes on to
    Stage III. ``parallel`` evaluates Stage I and II together and charges the
    pair by the slower of the two.
    """
    detector, recon, semantic = stages
    v1 = _verdict(Stage.I, *_evaluate(detector, Stage.I, frame), t.tau1, force_stage3)
    v2 = None
    if parallel:
        v2 = _verdict(Stage.II, *_evaluate(recon, Stage.II, frame), t.tau2, force_stage3)
        if v1.exited:
            v2 = StageVerdict(v2.stage, v2.confidence, v2.label, False, v2.elapsed, v2.detail, v2.error)
            return CascadeResult(frame.ref, (v1,), v1.label, Stage.I, max(v1.elapsed, v2.elapsed),
                                 force_stage3, True, (v2,))
    elif v1.exited:
        return CascadeResult(frame.ref, (v1,), v1.label, Stage.I, v1.elapsed, force_stage3)

    if v2 is None:
        v2 = _verdict(Stage.II, *_evaluate(recon, Stage.II, frame), t.tau2, force_stage3)
    first_two = max(v1.elapsed, v2.elapsed) if parallel else v1.elapsed + v2.elapsed
    if v2.exited:
        return CascadeResult(frame.ref, (v1, v2), v2.label, Stage.II, first_two, force_stage3, parallel)

    v3 = _verdict(Stage.III, *_evaluate(semantic, Stage.III, frame), None, force_stage3)
    return CascadeResult(frame.ref, (v1, v2, v3), v3.label, Stage.III, first_two + v3.elapsed,
                         force_stage3, parallel)
