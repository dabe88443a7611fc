"""Nearest-centroid normalization of free-text descriptions.

Descriptions are embedded (via a fixture table standing in for a sentence
encoder), scored by cosine similarity against unit-norm class centroids, and
accepted only when the best score reaches ``tau_c``; otherwise the result is
Benign. Centroids can drift toward accepted observations by EMA.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import BENIGN, AnomalyLabel, Label, label_name, parse_label
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyClass,
    UnknownLabel,
    ZeroMean,
    ZeroVector,
)

DEFAULT_DIM = 16
DEFAULT_EMA_ALPHA = 0.1
UNIT_TOL = 1e-9


def _vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.isfinite(a).all():
        raise ValueError("embedding has non-finite entries")
    return a


def normalize(v) -> np.ndarray:
    a = _vec(v)
    n = float(np.linalg.norm(a))
    if n == 0.0:
        raise ZeroVector("cannot normalize a zero vector")
    return a / n


def cosine_similarity(a, b) -> float:
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape[0]} vs {b.shape[0]}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity of a zero vector")
    return max(-1.0, min(1.0, float(np.dot(a, b)) / (na * nb)))


# --------------------------------------------------------------------------
# Prototype bank
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PrototypeBank:
    entries: Mapping[Label, np.ndarray]
    exemplar_counts: Mapping[Label, int] = field(default_factory=dict)
    ema_alpha: float = DEFAULT_EMA_ALPHA

    def __post_init__(self):
        if len(self.entries) < 2:
            raise ConfigError("a prototype bank needs at least two labels")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ConfigError(f"ema_alpha must lie in (0, 1], got {self.ema_alpha}")
        entries = {}
        dims = set()
        for key in sorted(self.entries, key=lambda k: label_name(parse_label(k))):
            mu = _vec(self.entries[key])
            label = parse_label(key)
            if label == BENIGN:
                raise ConfigError("Benign is the abstention outcome, not a bank class")
            if abs(float(np.linalg.norm(mu)) - 1.0) > UNIT_TOL:
                raise ConfigError(f"centroid for {label_name(label)} is not unit-norm")
            mu = mu.copy()
            mu.flags.writeable = False
            entries[label] = mu
            dims.add(mu.shape[0])
        if len(dims) != 1:
            raise DimensionMismatch(f"centroid dimensions differ: {sorted(dims)}")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "exemplar_counts", dict(self.exemplar_counts))

    @property
    def dim(self) -> int:
        return next(iter(self.entries.values())).shape[0]

    @property
    def labels(self) -> list[Label]:
        return list(self.entries)

    def centroid(self, label) -> np.ndarray:
        try:
            return self.entries[parse_label(label)]
        except KeyError:
            raise UnknownLabel(label) from None


def build_bank(exemplars: Mapping, ema_alpha: float = DEFAULT_EMA_ALPHA) -> PrototypeBank:
    """Centroid of each class = normalized mean of its exemplars."""
    entries, counts = {}, {}
    for label, vecs in exemplars.items():
        vecs = [_vec(v) for v in vecs]
        if not vecs:
            raise EmptyClass(f"class {label_name(parse_label(label))} has no exemplars")
        mean = np.mean(np.stack(vecs), axis=0)
        if float(np.linalg.norm(mean)) == 0.0:
            raise ZeroMean(f"exemplars for {label} cancel exactly")
        label = parse_label(label)
        entries[label] = normalize(mean)
        counts[label] = len(vecs)
    return PrototypeBank(entries, counts, ema_alpha)


def ema_update(bank: PrototypeBank, label, observation) -> PrototypeBank:
    """Return a new bank with ``label``'s centroid blended toward ``observation``."""
    label = parse_label(label)
    mu = bank.centroid(label)
    obs = normalize(observation)
    if obs.shape != mu.shape:
        raise DimensionMismatch(f"{obs.shape[0]} vs {mu.shape[0]}")
    a = bank.ema_alpha
    blend = (1.0 - a) * mu + a * obs
    if float(np.linalg.norm(blend)) == 0.0:
        raise ZeroMean("EMA blend cancels exactly")
    entries = dict(bank.entries)
    entries[label] = normalize(blend)
    return PrototypeBank(entries, bank.exemplar_counts, a)


# --------------------------------------------------------------------------
# Embedding fixture and classification
# --------------------------------------------------------------------------


def hashed_unit_vector(text: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    while True:
        v = rng.standard_normal(dim)
        n = float(np.linalg.norm(v))
        if n > 0.0:
            return v / n


@dataclass(frozen=True)
class EmbeddingFixture:
    """Description -> embedding table; unknown text hashes to a unit vector."""

    dim: int
    vectors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        vecs = {}
        for text, v in self.vectors.items():
            v = _vec(v)
            if v.shape[0] != self.dim:
                raise DimensionMismatch(f"fixture {text!r} has dimension {v.shape[0]}, expected {self.dim}")
            vecs[text] = v
        object.__setattr__(self, "vectors", vecs)

    def embed(self, text: str) -> np.ndarray:
        v = self.vectors.get(text)
        return v if v is not None else hashed_unit_vector(text, self.dim)


def classify(text: str, fixture: EmbeddingFixture, bank: PrototypeBank, tau_c: float) -> tuple[Label, float]:
    """Best-matching centroid label and its cosine score, or Benign below ``tau_c``.

    Ties go to the lexicographically smallest label name.
    """
    q = fixture.embed(text)
    best_label, best = None, -math.inf
    for label, mu in bank.entries.items():  # sorted by name
        s = cosine_similarity(q, mu)
        if s > best:
            best_label, best = label, s
    if best >= tau_c:
        return best_label, best
    return BENIGN, best


@dataclass(frozen=True)
class SemanticClassifier:
    bank: PrototypeBank
    fixture: EmbeddingFixture
    tau_c: float = 0.54

    def classify(self, text: str) -> tuple[Label, float]:
        return classify(text, self.fixture, self.bank, self.tau_c)

    def with_bank(self, bank: PrototypeBank) -> "SemanticClassifier":
        return SemanticClassifier(bank, self.fixture, self.tau_c)


def acceptance_sweep(scored: Sequence[tuple], taus: Iterable[float]) -> list[tuple[float, float]]:
    """Fraction of scored predictions with confidence >= tau, for each tau.

    An empty ``scored`` list gives 0.0 everywhere.
    """
    confs = np.sort(np.array([float(c) for _, c in scored], dtype=np.float64))
    n = confs.size
    out = []
    for tau in sorted(taus):
        if n == 0:
            out.append((tau, 0.0))
        else:
            accepted = n - int(np.searchsorted(confs, tau, side="left"))
            out.append((tau, accepted / n))
    return out


# --------------------------------------------------------------------------
# Fixture construction
# --------------------------------------------------------------------------


def vector_at_similarity(bank: PrototypeBank, label, similarity: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vector whose cosine with ``label``'s centroid is exactly ``similarity``.

    The off-centroid component is orthogonal to every centroid in the bank, so
    its score against any other class is ``similarity * <mu_label, mu_other>``.
    """
    if not -1.0 <= similarity <= 1.0:
        raise ValueError("similarity must lie in [-1, 1]")
    mu = bank.centroid(label)
    basis = np.stack(list(bank.entries.values()), axis=1)
    if basis.shape[1] >= bank.dim:
        raise ValueError("need more embedding dimensions than classes")
    q, _ = np.linalg.qr(basis)
    while True:
        g = rng.standard_normal(bank.dim)
        u = g - q @ (q.T @ g)
        n = float(np.linalg.norm(u))
        if n > 1e-6:
            u /= n
            break
    return similarity * mu + math.sqrt(max(0.0, 1.0 - similarity * similarity)) * u


# Descriptions the built-in model pins to exact scores: text -> (label, cosine).
PINNED_DESCRIPTIONS = {
    "individual loitering near restricted gate": (AnomalyLabel.SUSPICIOUS_BEHAVIOR, 0.84),
    "obscured lens": (AnomalyLabel.CAMERA_BLOCKED, 0.606),
    "hand covering lens": (AnomalyLabel.PERSON_DETECTED, 0.612),
    "unauthorized person": (AnomalyLabel.PERSON_DETECTED, 0.593),
    "figure partially visible at frame edge": (AnomalyLabel.PERSON_DETECTED, 0.53),
    "heavy static noise across the image": (AnomalyLabel.ILLUMINATION_SHIFT, 0.58),
    "scene appears unchanged for several seconds": (AnomalyLabel.ILLUMINATION_SHIFT, 0.47),
    "routine pedestrian traffic": (AnomalyLabel.PERSON_DETECTED, 0.41),
    "empty platform under normal lighting": (AnomalyLabel.CAMERA_BLOCKED, 0.22),
    "commuters walking through the concourse": (AnomalyLabel.PERSON_DETECTED, 0.49),
}

BUILTIN_CLASSES = (
    AnomalyLabel.CAMERA_BLOCKED,
    AnomalyLabel.PERSON_DETECTED,
    AnomalyLabel.SUSPICIOUS_BEHAVIOR,
    AnomalyLabel.ILLUMINATION_SHIFT,
)


def builtin_model(seed: int = 2024, dim: int = DEFAULT_DIM, exemplars_per_class: int = 20,
                  ema_alpha: float = DEFAULT_EMA_ALPHA) -> tuple[PrototypeBank, EmbeddingFixture]:
    """Few-shot bank from seeded exemplars plus fixtures pinned to known scores."""
    rng = np.random.default_rng(seed)
    exemplars = {}
    for label in BUILTIN_CLASSES:
        base = normalize(rng.standard_normal(dim))
        exemplars[label] = [normalize(base + 0.35 * rng.standard_normal(dim))
                            for _ in range(exemplars_per_class)]
    bank = build_bank(exemplars, ema_alpha)
    vectors = {text: vector_at_similarity(bank, label, s, rng)
               for text, (label, s) in PINNED_DESCRIPTIONS.items()}
    return bank, EmbeddingFixture(dim, vectors)


# --------------------------------------------------------------------------
# JSON document
# --------------------------------------------------------------------------


def model_to_json(bank: PrototypeBank, fixture: EmbeddingFixture) -> dict:
    return {
        "dim": bank.dim,
        "centroids": {label_name(k): v.tolist() for k, v in bank.entries.items()},
        "fixtures": {t: v.tolist() for t, v in fixture.vectors.items()},
        "ema_alpha": bank.ema_alpha,
        "exemplar_counts": {label_name(k): n for k, n in bank.exemplar_counts.items()},
    }


def model_from_json(doc: Mapping) -> tuple[PrototypeBank, EmbeddingFixture]:
    try:
        dim = int(doc["dim"])
        centroids = {parse_label(k): _vec(v) for k, v in doc["centroids"].items()}
        fixtures = {t: _vec(v) for t, v in doc.get("fixtures", {}).items()}
        alpha = float(doc.get("ema_alpha", DEFAULT_EMA_ALPHA))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed semantic model: {exc}") from exc
    counts = {parse_label(k): int(v) for k, v in doc.get("exemplar_counts", {}).items()}
    bank = PrototypeBank(centroids, counts, alpha)
    if bank.dim != dim:
        raise DimensionMismatch(f"centroids have dimension {bank.dim}, document says {dim}")
    return bank, EmbeddingFixture(dim, fixtures)


def save_model(bank: PrototypeBank, fixture: EmbeddingFixture, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(bank, fixture), indent=1))


def load_model(path) -> tuple[PrototypeBank, EmbeddingFixture]:
    return model_from_json(json.loads(Path(path).read_text()))
