"""Threshold-free ranking metrics."""
from typing import Sequence, Tuple

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from ...exceptions import DimensionMismatchError, InvalidInputError


def _validate(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DimensionMismatchError(s.shape[0], y.shape[0], what="labels")
    if s.size == 0:
        raise InvalidInputError("Metrics need at least one score")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("Scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("Labels must be 0 or 1")
    return s, y.astype(np.int64)


def has_both_classes(labels: Sequence[int]) -> bool:
    y = np.asarray(labels)
    return bool(y.size) and 0 < int(y.sum()) < y.size


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve; tied positive/negative pairs count one half.

    Raises:
        InvalidInputError: If only one class is present
    """
    s, y = _validate(scores, labels)
    if not has_both_classes(y):
        raise InvalidInputError("auc_roc needs both positive and negative labels")
    return float(roc_auc_score(y, s))


def auc_pr(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: mean precision at the rank of each positive.

    Raises:
        InvalidInputError: If there are no positives
    """
    s, y = _validate(scores, labels)
    if int(y.sum()) == 0:
        raise InvalidInputError("auc_pr needs at least one positive label")
    return float(average_precision_score(y, s))
