"""Synthetic dataset generation and the three AI stage models.

Detection is a ground-truth pass-through with a timed cost: the simulator
evaluates system behavior, not model accuracy. Identification is a real
cosine-similarity search over unit embeddings, and the cloud recognizer is a
latency plus false-positive injection model calibrated through the scenario
config.

All randomness flows through splitmix64 so runs replay identically on any
platform.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .domain import (
    EMBEDDING_DIM,
    EmbeddingVec,
    FaceDatabase,
    ImageFormat,
    ImageRecord,
    PersonId,
    StageDurations,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TO_UNIT = 2.0 ** -53

# Cosine distance of a perturbed copy to its source stays ~0.96, far above
# any sensible threshold, while fresh random vectors score near zero.
_PERTURB_SCALE = 0.025

CELEBRITY_LABELS = tuple(f"Celebrity {i:02d}" for i in range(16))


class EmptyDatabase(ValueError):
    pass


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


class Prng:
    """splitmix64 stream: state advances by the 64-bit golden gamma, outputs
    go through the standard finalizer."""

    __slots__ = ("state", "_spare_gauss")

    def __init__(self, seed: int):
        self.state = seed & _MASK64
        self._spare_gauss: Optional[float] = None

    def u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix(self.state)

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.u64() >> 11) * _TO_UNIT

    def gauss(self) -> float:
        if self._spare_gauss is not None:
            value, self._spare_gauss = self._spare_gauss, None
            return value
        # Box-Muller; guard the log argument away from zero.
        u1 = self.uniform()
        while u1 <= 0.0:
            u1 = self.uniform()
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_gauss = radius * math.sin(theta)
        return radius * math.cos(theta)

    def randbytes(self, n: int) -> bytes:
        n_words = (n + 7) // 8
        words = [self.u64() for _ in range(n_words)]
        return struct.pack(f"<{n_words}Q", *words)[:n]

    def randrange(self, n: int) -> int:
        if n < 1:
            raise ValueError("randrange needs n >= 1")
        return self.u64() % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]


def substream(seed: int, tag: int) -> int:
    """Derive an independent stream seed for one subsystem of a run."""
    return _mix((seed ^ (tag * _GOLDEN)) & _MASK64)


def random_unit_vector(rng: Prng) -> EmbeddingVec:
    values = [rng.gauss() for _ in range(EMBEDDING_DIM)]
    norm = math.sqrt(math.fsum(v * v for v in values))
    return EmbeddingVec(tuple(v / norm for v in values))


def perturbed_copy(base: EmbeddingVec, rng: Prng) -> EmbeddingVec:
    values = [v + _PERTURB_SCALE * rng.gauss() for v in base.values]
    norm = math.sqrt(math.fsum(v * v for v in values))
    return EmbeddingVec(tuple(v / norm for v in values))


def make_face_db(seed: int, size: int) -> FaceDatabase:
    rng = Prng(substream(seed, 101))
    entries = tuple(
        (PersonId(i, f"Person {i}"), random_unit_vector(rng)) for i in range(size)
    )
    return FaceDatabase(entries)


def generate_dataset(
    seed: int,
    n: int,
    face_prob: float,
    known_prob: float,
    db: FaceDatabase,
    payload_bytes: int,
    width_px: int = 64,
    height_px: int = 64,
    format: ImageFormat = ImageFormat.PNG,
) -> list[ImageRecord]:
    """Produce ``n`` records, fully determined by ``seed``.

    Each record has a face with probability ``face_prob``; a face is a
    perturbed copy of a database embedding with probability ``known_prob``
    (carrying that person as ground truth), otherwise a fresh random unit
    vector with no ground truth. Payloads are seeded pseudo-random bytes.
    """
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    if not (0.0 <= face_prob <= 1.0 and 0.0 <= known_prob <= 1.0):
        raise ValueError("probabilities must be in [0,1]")
    if known_prob > 0.0 and len(db) == 0:
        raise EmptyDatabase("known_prob > 0 requires a non-empty face database")
    rng = Prng(substream(seed, 1))
    records = []
    for k in range(n):
        has_face = rng.uniform() < face_prob
        ground_truth = None
        embedding = None
        if has_face:
            known = rng.uniform() < known_prob
            if known:
                person, base = db.entries[rng.randrange(len(db))]
                ground_truth = person
                embedding = perturbed_copy(base, rng)
            else:
                embedding = random_unit_vector(rng)
        # Payload bytes come from a per-image substream so identity draws do
        # not depend on payload size.
        payload_rng = Prng(rng.u64())
        records.append(ImageRecord(
            id=f"img{k:05d}",
            payload=payload_rng.randbytes(payload_bytes),
            width_px=width_px,
            height_px=height_px,
            format=format,
            has_face=has_face,
            ground_truth=ground_truth,
            embedding=embedding,
        ))
    return records


def cosine(a: EmbeddingVec, b: EmbeddingVec) -> float:
    """Dot product of two unit vectors; lies in [-1, 1] up to rounding."""
    total = 0.0
    for x, y in zip(a.values, b.values):
        total += x * y
    return total


@dataclass(frozen=True)
class DetectionResult:
    image_id: str
    face_found: bool
    t_quality: float
    t_infer1: float
    t_infer2: float

    @property
    def t_total(self) -> float:
        return self.t_quality + self.t_infer1 + self.t_infer2


def detection_for(image: ImageRecord, durations: StageDurations,
                  jitter_factor: float = 1.0) -> DetectionResult:
    """Outcome and cost of the far-edge detection stage for one image. The
    caller books the core for ``t_total``; ``face_found`` passes the ground
    truth through."""
    return DetectionResult(
        image_id=image.id,
        face_found=image.has_face,
        t_quality=durations.t_quality * jitter_factor,
        t_infer1=durations.t_infer1 * jitter_factor,
        t_infer2=durations.t_infer2 * jitter_factor,
    )


@dataclass(frozen=True)
class IdentifyResult:
    image_id: str
    best_person: PersonId
    best_similarity: float
    recognized: bool
    t_identify: float


def identify(embedding: EmbeddingVec, db: FaceDatabase, threshold: float,
             t_identify: float, image_id: str = "") -> IdentifyResult:
    """Score every database entry; the best match wins, ties going to the
    lowest person id; recognized iff the best similarity reaches the
    threshold."""
    if len(db) == 0:
        raise EmptyDatabase("identification requires a non-empty database")
    best_person = None
    best_sim = -math.inf
    for person, entry in db.entries:
        sim = cosine(embedding, entry)
        if sim > best_sim or (sim == best_sim and person.id < best_person.id):
            best_person = person
            best_sim = sim
    return IdentifyResult(
        image_id=image_id,
        best_person=best_person,
        best_similarity=best_sim,
        recognized=best_sim >= threshold,
        t_identify=t_identify,
    )


class CloudOutcome(Enum):
    MATCH = "MATCH"
    NO_MATCH = "NO_MATCH"


@dataclass(frozen=True)
class CloudResult:
    image_id: str
    outcome: CloudOutcome
    label: Optional[str]
    is_false_positive: bool
    t_cloud: float


def cloud_recognize(image: ImageRecord, fp_rate: float, rng: Prng,
                    latency: float) -> CloudResult:
    """Simulated large-scale recognizer: known identities resolve correctly;
    an unknown face draws exactly one rng sample and is mislabeled as some
    celebrity with probability ``fp_rate``."""
    if not 0.0 <= fp_rate <= 1.0:
        raise ValueError("fp_rate must be in [0,1]")
    if image.ground_truth is not None:
        return CloudResult(image.id, CloudOutcome.MATCH,
                           image.ground_truth.label, False, latency)
    u = rng.uniform()
    if fp_rate > 0.0 and u < fp_rate:
        index = min(int(u / fp_rate * len(CELEBRITY_LABELS)),
                    len(CELEBRITY_LABELS) - 1)
        return CloudResult(image.id, CloudOutcome.MATCH,
                           CELEBRITY_LABELS[index], True, latency)
    return CloudResult(image.id, CloudOutcome.NO_MATCH, None, False, latency)
