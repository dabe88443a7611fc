"""Scenario files: schema ``v1`` JSON describing cameras, a scripted timeline,
thresholds and backend profiles."""

from __future__ import annotations

import json
import os
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..domain import NAMED_THRESHOLDS, Thresholds, validate_thresholds
from ..errors import ScenarioError, UnknownClass
from .presets import PROFILE_PRESETS, merge_profiles, profile_preset

SEGMENT_CLASSES = ("normal", "obstruction", "noise_burst", "frozen", "loiter_alarm", "custom")
SEED_ENV = "CASCADE_SEED"


class CameraSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    width: int = Field(32, ge=8)
    height: int = Field(32, ge=8)
    channels: Literal[1, 3] = 3
    texture: Literal["gradient"] = "gradient"
    stream: str | None = None
    config_checksum: str = "cfg-v1"
    # what the camera actually reports; differs from config_checksum to simulate drift
    actual_config: str | None = None
    offline: list[tuple[int, int]] = []

    @property
    def source(self) -> str:
        return self.stream or f"stream://{self.id}"


class Segment(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    start: int = Field(ge=0)
    end: int  # inclusive
    camera: str
    cls: str = Field(alias="class")
    params: dict[str, Any] = {}

    @field_validator("cls")
    @classmethod
    def _known_class(cls, v):
        if v not in SEGMENT_CLASSES:
            raise ValueError(f"unknown segment class {v!r}; expected one of {SEGMENT_CLASSES}")
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.end < self.start:
            raise ValueError(f"segment end {self.end} before start {self.start}")
        if self.cls == "custom":
            name = self.params.get("name")
            if not name or name in SEGMENT_CLASSES:
                raise ValueError("custom segments need params.name distinct from built-in classes")
            base = self.params.get("base", "normal")
            if base not in ("normal", "obstruction", "noise_burst", "frozen"):
                raise ValueError(f"custom base {base!r} is not a frame generator")
        return self

    @property
    def tag_class(self) -> str:
        """Class name used in frame seed tags and profile lookup."""
        return self.params["name"] if self.cls == "custom" else self.cls


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal["v1"] = Field("v1", alias="schema")
    name: str = "scenario"
    seed: int = 0
    duration_ticks: int = Field(gt=0)
    cameras: list[CameraSpec] = Field(min_length=1)
    timeline: list[Segment] = []
    thresholds: Union[str, dict[str, Any]] = "default"
    stage_profiles: Union[str, dict[str, Any]] = "default"
    probe_interval: float = Field(1.0, gt=0)  # seconds
    alarm_window: int = Field(4, ge=1)
    event_gap: int = Field(0, ge=0)
    parallel_stage12: bool = False
    ema_policy: Literal["accepted", "all", "off"] = "accepted"
    semantic_model: str | None = None
    correlation_window: int = Field(30, ge=0)  # ticks
    entropy_bins: int = Field(256, ge=2)
    baseline_latency: float = Field(8.7, gt=0)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_timeline(self):
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate camera ids {ids}")
        per_camera: dict[str, list[Segment]] = {}
        for seg in self.timeline:
            if seg.camera not in ids:
                raise ValueError(f"segment references unknown camera {seg.camera!r}")
            if seg.end >= self.duration_ticks:
                raise ValueError(f"segment {seg.start}-{seg.end} exceeds duration {self.duration_ticks}")
            per_camera.setdefault(seg.camera, []).append(seg)
        for cam, segs in per_camera.items():
            segs.sort(key=lambda s: s.start)
            for a, b in zip(segs, segs[1:]):
                if b.start <= a.end:
                    raise ValueError(f"overlapping segments on camera {cam!r}: "
                                     f"{a.start}-{a.end} and {b.start}-{b.end}")
        return self

    # -- resolution helpers -------------------------------------------------

    def resolved_thresholds(self) -> Thresholds:
        spec = self.thresholds
        if isinstance(spec, str):
            if spec not in NAMED_THRESHOLDS:
                raise ScenarioError(f"unknown threshold preset {spec!r}")
            return NAMED_THRESHOLDS[spec]
        spec = dict(spec)
        base = NAMED_THRESHOLDS.get(spec.pop("preset", "default"))
        if base is None:
            raise ScenarioError("unknown threshold preset")
        try:
            return validate_thresholds(replace(base, **spec))
        except TypeError as exc:
            raise ScenarioError(f"bad thresholds: {exc}") from exc

    def resolved_profiles(self) -> dict:
        spec = self.stage_profiles
        if isinstance(spec, str):
            try:
                return profile_preset(spec)
            except KeyError:
                raise ScenarioError(f"unknown profile preset {spec!r}; have {PROFILE_PRESETS}") from None
        try:
            base = profile_preset(spec.get("preset", "default"))
        except KeyError:
            raise ScenarioError(f"unknown profile preset {spec.get('preset')!r}") from None
        return merge_profiles(base, spec)

    def segments_for(self, camera_id: str) -> list[Segment]:
        return sorted((s for s in self.timeline if s.camera == camera_id), key=lambda s: s.start)

    def frames_total(self) -> int:
        return self.duration_ticks * len(self.cameras)


def parse_scenario(doc: dict, apply_env: bool = True) -> Scenario:
    try:
        scenario = Scenario.model_validate(doc)
    except ValidationError as exc:
        if any("unknown segment class" in str(e.get("msg", "")) for e in exc.errors()):
            raise UnknownClass(str(exc)) from exc
        raise ScenarioError(str(exc)) from exc
    if apply_env and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ScenarioError(f"{SEED_ENV} must be an integer") from None
        scenario = scenario.model_copy(update={"seed": seed})
    scenario.resolved_thresholds()
    scenario.resolved_profiles()
    return scenario


BUILTIN_PREFIX = "builtin:"


def builtin_scenarios() -> list[str]:
    files = resources.files("cascadewatch").joinpath("scenarios")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_scenario(path: str | os.PathLike, apply_env: bool = True) -> Scenario:
    """Read a scenario from a JSON file or ``builtin:<name>``."""
    path = str(path)
    try:
        if path.startswith(BUILTIN_PREFIX):
            name = path[len(BUILTIN_PREFIX):]
            text = resources.files("cascadewatch").joinpath("scenarios", f"{name}.json").read_text()
        else:
            text = Path(path).read_text()
        doc = json.loads(text)
    except FileNotFoundError as exc:
        raise ScenarioError(f"scenario not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    return parse_scenario(doc, apply_env)


def scenario_to_json(s: Scenario) -> str:
    return s.model_dump_json(by_alias=True, indent=2)
