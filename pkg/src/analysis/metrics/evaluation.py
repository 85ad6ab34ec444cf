"""Evaluation report over a run's verdicts."""
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ...exceptions import DimensionMismatchError, InvalidInputError
from ..thresholds import Decision, DetectorKind, Verdict, expected_cost
from .ranking import auc_pr, auc_roc, has_both_classes

# Relative spread of shift norms below which the shifts count as input-independent.
SHIFT_COLLAPSE_TOLERANCE = 1e-6


class GlobalMetrics(BaseModel):
    aucroc: Optional[float] = None
    aucpr: Optional[float] = None
    fpr: float
    fnr: float
    flagged_fpr: float
    flagged_fnr: float
    expected_cost: float


class WindowMetrics(BaseModel):
    start: int
    end: int
    aucroc: Optional[float] = None
    mean_uncertainty: float
    dynamic_share: float
    flagged_rate: float
    mean_shift_norm: Optional[float] = None


class BaselineComparison(BaseModel):
    start: int
    aucroc: Optional[float] = None
    baseline_aucroc: Optional[float] = None
    delta: Optional[float] = None


class EvaluationReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    global_: GlobalMetrics = Field(alias="global")
    windows: List[WindowMetrics]
    drift_markers: List[int] = Field(default_factory=list)
    model_version_changes: List[int] = Field(default_factory=list)
    shift_collapse: Optional[bool] = None
    synthetic: bool = False
    baseline: Optional[BaselineComparison] = None

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


def _rates(predicted: np.ndarray, labels: np.ndarray):
    negatives, positives = labels == 0, labels == 1
    fpr = float(predicted[negatives].mean()) if negatives.any() else 0.0
    fnr = float((~predicted[positives]).mean()) if positives.any() else 0.0
    return fpr, fnr


def _window_aucroc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    return auc_roc(scores, labels) if has_both_classes(labels) else None


def windowed_aucroc(scores: np.ndarray, labels: np.ndarray, window: int) -> List[Optional[float]]:
    return [_window_aucroc(scores[s : s + window], labels[s : s + window]) for s in range(0, len(scores), window)]


def detect_shift_collapse(verdicts: Sequence[Verdict]) -> Optional[bool]:
    """True when dynamic shifts barely vary across instances; None without shift diagnostics."""
    norms = np.array([v.shift_norm for v in verdicts if v.shift_norm is not None], dtype=np.float64)
    if norms.size < 2:
        return None
    return bool(norms.std() <= SHIFT_COLLAPSE_TOLERANCE * max(float(np.abs(norms).mean()), 1e-12))


def compare_with_baseline(
    verdicts: Sequence[Verdict], baseline: Sequence[Verdict], labels: np.ndarray, window: int
) -> BaselineComparison:
    """Mean windowed AUCROC of both runs over the second half of the stream."""
    if len(baseline) != len(verdicts):
        raise DimensionMismatchError(len(verdicts), len(baseline), what="baseline verdicts")
    start = len(verdicts) // 2
    tail = labels[start:]

    def mean_auc(run: Sequence[Verdict]) -> Optional[float]:
        scores = np.array([v.score for v in run[start:]], dtype=np.float64)
        values = [a for a in windowed_aucroc(scores, tail, window) if a is not None]
        return float(np.mean(values)) if values else None

    main, other = mean_auc(verdicts), mean_auc(baseline)
    delta = main - other if main is not None and other is not None else None
    return BaselineComparison(start=start, aucroc=main, baseline_aucroc=other, delta=delta)


def evaluate(
    verdicts: Sequence[Verdict],
    labels: Sequence[int],
    window: int,
    drift_markers: Optional[Sequence[int]] = None,
    synthetic: bool = False,
    baseline: Optional[Sequence[Verdict]] = None,
) -> EvaluationReport:
    """Global and windowed metrics for a scored stream.

    Args:
        verdicts: Verdicts in stream order
        labels: Ground truth aligned with ``verdicts``
        window: Window length for the time series of metrics
        drift_markers: Known drift positions to echo into the report
        synthetic: Mark the report as computed on generated data
        baseline: Verdicts of a comparison run over the same stream

    Returns:
        Report; window AUCROC is ``None`` for single-class windows

    Raises:
        DimensionMismatchError: If verdicts and labels are not aligned
    """
    y = np.asarray(labels).astype(np.int64)
    if len(verdicts) != y.shape[0]:
        raise DimensionMismatchError(len(verdicts), y.shape[0], what="labels")
    if not verdicts:
        raise InvalidInputError("evaluate needs at least one verdict")
    if window < 1:
        raise InvalidInputError(f"window must be >= 1, got {window}")

    scores = np.array([v.score for v in verdicts], dtype=np.float64)
    uncertainty = np.array([v.uncertainty for v in verdicts], dtype=np.float64)
    dynamic = np.array([v.detector is DetectorKind.DYNAMIC for v in verdicts])
    flagged = np.array([v.decision is Decision.ANOMALY for v in verdicts])
    shift_norms = np.array([np.nan if v.shift_norm is None else v.shift_norm for v in verdicts], dtype=np.float64)

    fpr, fnr = _rates(scores > verdicts[-1].threshold, y)
    flagged_fpr, flagged_fnr = _rates(flagged, y)
    global_metrics = GlobalMetrics(
        aucroc=_window_aucroc(scores, y),
        aucpr=auc_pr(scores, y) if y.sum() > 0 else None,
        fpr=fpr,
        fnr=fnr,
        flagged_fpr=flagged_fpr,
        flagged_fnr=flagged_fnr,
        expected_cost=expected_cost(flagged_fpr, flagged_fnr, float(y.mean())),
    )

    windows = []
    for start in range(0, len(verdicts), window):
        sl = slice(start, start + window)
        norms = shift_norms[sl][~np.isnan(shift_norms[sl])]
        windows.append(
            WindowMetrics(
                start=start,
                end=min(start + window, len(verdicts)),
                aucroc=_window_aucroc(scores[sl], y[sl]),
                mean_uncertainty=float(uncertainty[sl].mean()),
                dynamic_share=float(dynamic[sl].mean()),
                flagged_rate=float(flagged[sl].mean()),
                mean_shift_norm=float(norms.mean()) if norms.size else None,
            )
        )

    versions = [v.model_version for v in verdicts]
    changes = [i for i in range(1, len(versions)) if versions[i] != versions[i - 1]]
    return EvaluationReport(
        global_=global_metrics,
        windows=windows,
        drift_markers=list(drift_markers or []),
        model_version_changes=changes,
        shift_collapse=detect_shift_collapse(verdicts),
        synthetic=synthetic,
        baseline=compare_with_baseline(verdicts, baseline, y, window) if baseline is not None else None,
    )
