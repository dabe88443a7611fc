"""Post-cascade behaviour: severity fusion, event merging, quality metrics and
exit/latency accounting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cascade import ReconstructionPair
from .domain import BENIGN, CascadeResult, Label, Stage, Thresholds, label_name, parse_label
from .errors import AccountingMismatch, EmptyRun, UnsortedInput, WindowTooLarge

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_C1, SSIM_C2 = SSIM_K1 ** 2, SSIM_K2 ** 2
DEFAULT_SSIM_WINDOW = 8
DEFAULT_BASELINE_LATENCY = 8.7

EVENT_COLUMNS = ("label", "camera", "start", "end", "frames", "err_min", "err_mean", "err_max",
                 "conf_mean", "source")


# --------------------------------------------------------------------------
# Severity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SeverityInput:
    conf_visual: float
    conf_contextual: float

    def __post_init__(self):
        for name in ("conf_visual", "conf_contextual"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def severity(inp: SeverityInput, t: Thresholds) -> tuple[float, bool]:
    score = t.lambda1 * inp.conf_visual + t.lambda2 * inp.conf_contextual
    return score, score >= t.tau_s


# --------------------------------------------------------------------------
# Events
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    label: Label
    camera_id: str
    start_frame: int
    end_frame: int
    frame_count: int
    error_stats: tuple[float, float, float] | None
    mean_confidence: float
    source: str

    @property
    def duration_ticks(self) -> int:
        return self.end_frame - self.start_frame + 1

    def row(self) -> list:
        e = self.error_stats
        return [
            label_name(self.label), self.camera_id, self.start_frame, self.end_frame,
            self.frame_count,
            *(("", "", "") if e is None else (repr(e[0]), repr(e[1]), repr(e[2]))),
            repr(self.mean_confidence), self.source,
        ]

    def to_dict(self) -> dict:
        return dict(zip(EVENT_COLUMNS, [
            label_name(self.label), self.camera_id, self.start_frame, self.end_frame,
            self.frame_count,
            *((None, None, None) if self.error_stats is None else self.error_stats),
            self.mean_confidence, self.source,
        ]))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Event":
        stats = None if d["err_min"] is None else (d["err_min"], d["err_mean"], d["err_max"])
        return cls(parse_label(d["label"]), d["camera"], d["start"], d["end"], d["frames"],
                   stats, d["conf_mean"], d["source"])


class _Run:
    __slots__ = ("label", "camera", "start", "end", "confs", "errors")

    def __init__(self, r: CascadeResult):
        self.label = r.final_label
        self.camera = r.camera_id
        self.start = self.end = r.stream_time
        self.confs: list[float] = []
        self.errors: list[float] = []
        self.add(r)

    def add(self, r: CascadeResult):
        self.end = r.stream_time
        self.confs.append(r.confidence)
        err = r.reconstruction_error
        if err is not None:
            self.errors.append(err)

    def close(self, sources: Mapping[str, str]) -> Event:
        errs = self.errors
        stats = (min(errs), math.fsum(errs) / len(errs), max(errs)) if errs else None
        return Event(self.label, self.camera, self.start, self.end, len(self.confs), stats,
                     math.fsum(self.confs) / len(self.confs), sources.get(self.camera, self.camera))


def merge_events(
    verdicts: Iterable[CascadeResult],
    gap: int = 0,
    sources: Mapping[str, str] | None = None,
) -> list[Event]:
    """Collapse runs of same-label anomalous verdicts into events.

    Input must be strictly increasing in ``(camera_id, stream_time)``. Two
    anomalous verdicts on one camera join when they share a label, no
    differently-labelled anomaly lies between them, and at most ``gap`` ticks
    separate them. Benign verdicts never join an event.
    """
    if gap < 0:
        raise ValueError("gap must be >= 0")
    sources = sources or {}
    events: list[Event] = []
    cur: _Run | None = None
    prev = None
    for r in verdicts:
        key = r.frame_ref
        if prev is not None and key <= prev:
            raise UnsortedInput(f"{key} follows {prev}")
        prev = key
        if r.final_label == BENIGN:
            continue
        if (cur is not None and cur.camera == r.camera_id and cur.label == r.final_label
                and r.stream_time - cur.end - 1 <= gap):
            cur.add(r)
            continue
        if cur is not None:
            events.append(cur.close(sources))
        cur = _Run(r)
    if cur is not None:
        events.append(cur.close(sources))
    return events


def events_to_csv(events: Sequence[Event]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for e in events:
        w.writerow(e.row())
    return buf.getvalue()


def events_from_csv(text: str) -> list[Event]:
    rows = list(csv.DictReader(io.StringIO(text)))

    def num(v):
        return None if v == "" else float(v)

    out = []
    for r in rows:
        lo, mean, hi = num(r["err_min"]), num(r["err_mean"]), num(r["err_max"])
        out.append(Event(parse_label(r["label"]), r["camera"], int(r["start"]), int(r["end"]),
                         int(r["frames"]), None if lo is None else (lo, mean, hi),
                         float(r["conf_mean"]), r["source"]))
    return out


# --------------------------------------------------------------------------
# Reconstruction quality
# --------------------------------------------------------------------------


def _arrays(pair: ReconstructionPair) -> tuple[np.ndarray, np.ndarray]:
    return pair.original.pixels, pair.reconstruction.pixels


def psnr_from_mse(mse: float) -> float:
    """PSNR in dB for unit peak intensity; +inf when ``mse`` is 0."""
    if mse == 0:
        return math.inf
    return -10.0 * math.log10(mse)


def psnr(pair: ReconstructionPair) -> float:
    x, y = _arrays(pair)
    d = x - y
    return psnr_from_mse(float(np.mean(d * d)))


def mae(pair: ReconstructionPair) -> float:
    x, y = _arrays(pair)
    return float(np.mean(np.abs(x - y)))


def ssim(pair: ReconstructionPair, window: int = DEFAULT_SSIM_WINDOW) -> float:
    """Mean SSIM over non-overlapping ``window`` x ``window`` tiles, per channel.

    Tiles that would overhang the right/bottom edge are skipped. Local
    statistics are uniform-weight population moments.
    """
    x, y = _arrays(pair)
    h, w, c = x.shape
    if window < 1 or window > min(h, w):
        raise WindowTooLarge(f"window {window} exceeds frame {w}x{h}")
    nh, nw = h // window, w // window

    def tiles(a):
        return a[: nh * window, : nw * window].reshape(nh, window, nw, window, c)

    tx, ty = tiles(x), tiles(y)
    mx = tx.mean(axis=(1, 3), keepdims=True)
    my = ty.mean(axis=(1, 3), keepdims=True)
    dx, dy = tx - mx, ty - my
    vx = (dx * dx).mean(axis=(1, 3))
    vy = (dy * dy).mean(axis=(1, 3))
    cov = (dx * dy).mean(axis=(1, 3))
    mx, my = mx[:, 0, :, 0], my[:, 0, :, 0]
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


# --------------------------------------------------------------------------
# Accounting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    frames_total: int
    exits_by_stage: dict
    exit_fractions: dict
    mean_latency: float
    baseline_latency: float
    speedup_ratio: float
    events_total: int = 0

    def to_dict(self) -> dict:
        return {
            "frames_total": self.frames_total,
            "exits_by_stage": {s.name: n for s, n in self.exits_by_stage.items()},
            "exit_fractions": {s.name: p for s, p in self.exit_fractions.items()},
            "mean_latency": self.mean_latency,
            "baseline_latency": self.baseline_latency,
            "speedup_ratio": self.speedup_ratio,
            "events_total": self.events_total,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunMetrics":
        return cls(
            d["frames_total"],
            {Stage[k]: v for k, v in d["exits_by_stage"].items()},
            {Stage[k]: v for k, v in d["exit_fractions"].items()},
            d["mean_latency"], d["baseline_latency"], d["speedup_ratio"], d.get("events_total", 0),
        )


def closed_form_latency(fractions: Sequence[float], latencies: Sequence[float]) -> float:
    """Expected per-frame latency when a frame exiting at stage j pays stages 1..j."""
    p1, p2, p3 = fractions
    l1, l2, l3 = latencies
    return p1 * l1 + p2 * (l1 + l2) + p3 * (l1 + l2 + l3)


def accounting(
    results: Sequence[CascadeResult],
    stage_latencies: Sequence[float] | None = None,
    baseline: float = DEFAULT_BASELINE_LATENCY,
    events_total: int = 0,
) -> RunMetrics:
    """Exit counts, mean latency and speedup against an all-Stage-III baseline.

    With ``stage_latencies`` given (fixed-latency backends, sequential routing)
    the mean is cross-checked against :func:`closed_form_latency`.
    """
    n = len(results)
    if n == 0:
        raise EmptyRun("no cascade results")
    counts = {s: 0 for s in Stage}
    for r in results:
        counts[r.exit_stage] += 1
    fractions = {s: counts[s] / n for s in Stage}
    mean = math.fsum(r.total_latency for r in results) / n
    if stage_latencies is not None:
        expected = closed_form_latency([fractions[s] for s in Stage], stage_latencies)
        if abs(expected - mean) > 1e-9:
            raise AccountingMismatch(f"mean latency {mean} != closed form {expected}")
    speedup = baseline / mean if mean > 0 else math.inf
    return RunMetrics(n, counts, fractions, mean, baseline, speedup, events_total)


def metrics_to_json(metrics: RunMetrics, events: Sequence[Event], extra: Mapping | None = None) -> str:
    doc = {"metrics": metrics.to_dict(), "events": [e.to_dict() for e in events]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"
