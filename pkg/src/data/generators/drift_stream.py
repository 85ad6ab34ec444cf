"""Synthetic Gaussian streams with concept drift and injected anomalies."""
import math
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy import stats

from ...exceptions import InvalidInputError
from ..streams import LabeledStream

# Probability mass of a Gaussian within three standard deviations.
THREE_SIGMA_MASS = 0.9973
# Half-width of the anomaly sampling box, in multiples of the 3-sigma radius.
OUTLIER_BOX = 2.0


class ConceptSpec(BaseModel):
    """Isotropic Gaussian concept."""

    mean: List[float] = Field(min_length=1)
    scale: float = Field(default=1.0, gt=0.0)


class DriftSpec(BaseModel):
    """Description of a synthetic drifting stream.

    Segment lengths are drawn uniformly from ``[segment_min, segment_max]`` unless
    ``drift_positions`` pins the drift points explicitly.
    """

    kind: Literal["abrupt", "gradual", "incremental", "recurrent"] = "abrupt"
    concepts: List[ConceptSpec] = Field(min_length=2)
    n: int = Field(default=5000, ge=1)
    anomaly_rate: float = Field(default=0.01, ge=0.0, lt=0.5)
    segment_min: int = Field(default=250, ge=1)
    segment_max: int = Field(default=1000, ge=1)
    drift_positions: Optional[List[int]] = None
    transition_width: int = Field(default=200, ge=1)

    @field_validator("concepts")
    @classmethod
    def _same_dim(cls, concepts: List[ConceptSpec]) -> List[ConceptSpec]:
        if len({len(c.mean) for c in concepts}) != 1:
            raise ValueError("all concepts must share one dimension")
        return concepts

    @model_validator(mode="after")
    def _check_layout(self) -> "DriftSpec":
        if self.segment_min > self.segment_max:
            raise ValueError("segment_min must not exceed segment_max")
        if self.drift_positions is not None:
            positions = self.drift_positions
            if any(p <= 0 or p >= self.n for p in positions) or any(b <= a for a, b in zip(positions, positions[1:])):
                raise ValueError("drift_positions must be strictly increasing and inside (0, n)")
            if self.kind == "recurrent" and len(positions) < len(self.concepts):
                raise ValueError("a recurrent stream needs at least as many drifts as concepts")
        elif self.kind == "recurrent" and self.n < (len(self.concepts) + 1) * self.segment_max:
            raise ValueError("n is too short to guarantee a recurring concept; need n >= (concepts + 1) * segment_max")
        return self

    @property
    def dim(self) -> int:
        return len(self.concepts[0].mean)


def random_concepts(count: int, dim: int, rng: np.random.Generator, spread: float = 4.0) -> List[ConceptSpec]:
    """Concepts with means drawn uniformly from ``[-spread, spread]^dim`` and unit-ish scales."""
    if count < 2 or dim < 1:
        raise InvalidInputError("random_concepts needs at least 2 concepts and dim >= 1")
    return [
        ConceptSpec(mean=rng.uniform(-spread, spread, size=dim).tolist(), scale=float(rng.uniform(0.5, 1.5)))
        for _ in range(count)
    ]


def _boundaries(spec: DriftSpec, rng: np.random.Generator) -> List[int]:
    if spec.drift_positions is not None:
        return list(spec.drift_positions)
    bounds, t = [], 0
    while True:
        t += int(rng.integers(spec.segment_min, spec.segment_max + 1))
        if t >= spec.n:
            return bounds
        bounds.append(t)


def _concept_sequence(spec: DriftSpec, n_segments: int, rng: np.random.Generator) -> List[int]:
    k = len(spec.concepts)
    if spec.kind == "recurrent":
        return [i % k for i in range(n_segments)]
    sequence = [0]
    for _ in range(n_segments - 1):
        choices = [c for c in range(k) if c != sequence[-1]]
        sequence.append(int(rng.choice(choices)))
    return sequence


def outlier_radius(dim: int) -> float:
    """Radius, in units of the concept scale, holding 99.73% of an isotropic Gaussian."""
    return math.sqrt(stats.chi2.ppf(THREE_SIGMA_MASS, dim))


def _uniform_outliers(center: np.ndarray, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from a box around each center, rejecting those inside the 3-sigma ball."""
    n, dim = center.shape
    radius = outlier_radius(dim)
    unit = np.empty((n, dim))
    todo = np.arange(n)
    while todo.size:
        draw = rng.uniform(-OUTLIER_BOX * radius, OUTLIER_BOX * radius, size=(todo.size, dim))
        keep = np.linalg.norm(draw, axis=1) > radius
        unit[todo[keep]] = draw[keep]
        todo = todo[~keep]
    return center + scale[:, None] * unit


def synth_stream(spec: DriftSpec, seed: int) -> LabeledStream:
    """Draw a drifting stream.

    Each instance comes from the active concept's Gaussian. Gradual drift switches
    concepts with a probability rising linearly across ``transition_width``;
    incremental drift moves the mean and scale linearly over the same span.
    Each instance is an anomaly with probability ``anomaly_rate``. Anomalies are
    uniform draws from a box around the active concept, rejected while they fall
    inside the ball holding 99.73% of its mass.

    Args:
        spec: Stream description
        seed: Random seed

    Returns:
        Stream with labels, per-instance concept ids and drift markers
    """
    rng = np.random.default_rng(seed)
    bounds = _boundaries(spec, rng)
    sequence = _concept_sequence(spec, len(bounds) + 1, rng)
    means = np.array([c.mean for c in spec.concepts], dtype=np.float64)
    scales = np.array([c.scale for c in spec.concepts], dtype=np.float64)

    segment = np.searchsorted(np.array(bounds, dtype=np.int64), np.arange(spec.n), side="right")
    concept = np.array(sequence, dtype=np.int64)[segment]
    center = means[concept].copy()
    scale = scales[concept].copy()

    if spec.kind in ("gradual", "incremental"):
        for i, b in enumerate(bounds):
            previous = sequence[i]
            stop = min(b + spec.transition_width, spec.n, bounds[i + 1] if i + 1 < len(bounds) else spec.n)
            t = np.arange(b, stop)
            progress = (t - b + 1) / (spec.transition_width + 1)
            if spec.kind == "gradual":
                stay = rng.random(t.size) >= progress
                concept[t[stay]] = previous
                center[t[stay]] = means[previous]
                scale[t[stay]] = scales[previous]
            else:
                center[t] = (1.0 - progress)[:, None] * means[previous] + progress[:, None] * means[concept[t]]
                scale[t] = (1.0 - progress) * scales[previous] + progress * scales[concept[t]]

    instances = center + scale[:, None] * rng.standard_normal((spec.n, spec.dim))
    labels = (rng.random(spec.n) < spec.anomaly_rate).astype(np.int64)
    anomalous = np.flatnonzero(labels)
    if anomalous.size:
        instances[anomalous] = _uniform_outliers(center[anomalous], scale[anomalous], rng)

    return LabeledStream(
        instances=instances,
        labels=labels,
        name=f"synthetic-{spec.kind}",
        drift_markers=tuple(bounds),
        concepts=concept,
        synthetic=True,
        extra={"kind": spec.kind, "seed": seed},
    )


def concept_runs(concepts: np.ndarray) -> List[Tuple[int, int]]:
    """(start, concept id) for each maximal run of one concept."""
    runs = []
    for i, c in enumerate(concepts):
        if not runs or runs[-1][1] != int(c):
            runs.append((i, int(c)))
    return runs
