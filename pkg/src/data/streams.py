"""In-memory labelled stream."""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..exceptions import DimensionMismatchError, InvalidInputError


@dataclass(frozen=True)
class LabeledStream:
    """Ordered instances with optional ground truth and drift metadata."""

    instances: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "stream"
    drift_markers: Tuple[int, ...] = ()
    concepts: Optional[np.ndarray] = None
    synthetic: bool = False
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        instances = np.asarray(self.instances, dtype=np.float64)
        if instances.ndim != 2:
            raise InvalidInputError(f"instances must be a 2-D matrix, got shape {instances.shape}")
        object.__setattr__(self, "instances", instances)
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(np.int64)
            if labels.shape != (instances.shape[0],):
                raise DimensionMismatchError(instances.shape[0], labels.shape[0], what="labels")
            object.__setattr__(self, "labels", labels)
        if self.concepts is not None and len(self.concepts) != instances.shape[0]:
            raise DimensionMismatchError(instances.shape[0], len(self.concepts), what="concept ids")
        markers = tuple(int(m) for m in self.drift_markers)
        if any(b <= a for a, b in zip(markers, markers[1:])):
            raise InvalidInputError(f"drift markers must be strictly increasing, got {markers}")
        object.__setattr__(self, "drift_markers", markers)

    @property
    def n(self) -> int:
        return self.instances.shape[0]

    @property
    def d(self) -> int:
        return self.instances.shape[1]

    @property
    def meta(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "d": self.d,
            "n": self.n,
            "drift_markers": list(self.drift_markers),
            "synthetic": self.synthetic,
            **self.extra,
        }

    def slice(self, start: int, stop: Optional[int] = None) -> "LabeledStream":
        stop = self.n if stop is None else stop
        return LabeledStream(
            instances=self.instances[start:stop],
            labels=None if self.labels is None else self.labels[start:stop],
            name=self.name,
            drift_markers=tuple(m - start for m in self.drift_markers if start <= m < stop),
            concepts=None if self.concepts is None else self.concepts[start:stop],
            synthetic=self.synthetic,
            extra=dict(self.extra),
        )


def historical_count(n: int, h_r: float) -> int:
    """Number of leading instances used for training: ``floor(h_r * n)``, at least 1."""
    if n < 1:
        raise InvalidInputError("Cannot split an empty stream")
    return max(1, min(n, int(math.floor(h_r * n + 1e-9))))


def split_historical(stream: LabeledStream, h_r: float) -> Tuple[LabeledStream, LabeledStream]:
    """Split off the historical prefix; the remainder is the online part."""
    count = historical_count(stream.n, h_r)
    return stream.slice(0, count), stream.slice(count)
