"""Per-feature standardization frozen at training time."""
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from sklearn.preprocessing import StandardScaler

from ...exceptions import DimensionMismatchError, InvalidInputError


@dataclass(frozen=True)
class Standardizer:
    """Mean/scale pair estimated on historical data.

    Constant features get scale 1 so they map to 0 instead of dividing by zero.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Standardizer":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise InvalidInputError(f"Standardizer needs a non-empty 2-D matrix, got shape {data.shape}")
        scaler = StandardScaler().fit(data)
        return cls(mean=np.array(scaler.mean_, dtype=np.float64), scale=np.array(scaler.scale_, dtype=np.float64))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def transform(self, x) -> np.ndarray:
        """Standardize one instance ``(d,)`` or a batch ``(B, d)``."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[-1] != self.dim:
            raise DimensionMismatchError(self.dim, arr.shape[-1], what="feature vector")
        return (arr - self.mean) / self.scale

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Standardizer":
        mean = np.array(payload["mean"], dtype=np.float64)
        scale = np.array(payload["scale"], dtype=np.float64)
        if mean.shape != scale.shape or np.any(scale <= 0):
            raise InvalidInputError("Standardizer mean/scale must align and scale must be positive")
        return cls(mean=mean, scale=scale)
