"""Dynamic threshold optimisation over sliding score windows.

Scores are uncertainty-calibrated reconstruction errors. The decision threshold is
the ``tau`` quantile of recent scores plus a regulariser pulled from uncertain
near-threshold samples. Windows:

* ``w_n`` holds scores of instances decided normal.
* ``w_x`` holds scores of instances decided anomalous. Only those inside the time
  span of ``w_n`` join the quantile, otherwise a window of normal decisions is
  censored at the threshold itself and the quantile can only ratchet down.
* ``w_c`` holds high-uncertainty scores close to the base threshold.
"""
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..config.settings import Settings
from ..exceptions import DataFormatError, InvalidInputError, WarmupError

# Bound on |lambda * U * (r_e - R_e)| before exponentiation.
EXPONENT_CLAMP = 30.0


class Decision(str, Enum):
    ANOMALY = "anomaly"
    NORMAL = "normal"


class DetectorKind(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class Verdict:
    """Per-instance output record."""

    index: int
    recon_error: float
    uncertainty: float
    score: float
    threshold: float
    decision: Decision
    detector: DetectorKind
    model_version: int
    shift_norm: Optional[float] = None

    def to_record(self) -> Dict[str, Any]:
        record = {
            "index": self.index,
            "score": self.score,
            "recon_error": self.recon_error,
            "uncertainty": self.uncertainty,
            "threshold": self.threshold,
            "decision": self.decision.value,
            "detector": self.detector.value,
            "model_version": self.model_version,
        }
        if self.shift_norm is not None:
            record["shift_norm"] = self.shift_norm
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "Verdict":
        try:
            return cls(
                index=int(record["index"]),
                recon_error=float(record["recon_error"]),
                uncertainty=float(record["uncertainty"]),
                score=float(record["score"]),
                threshold=float(record["threshold"]),
                decision=Decision(record["decision"]),
                detector=DetectorKind(record["detector"]),
                model_version=int(record["model_version"]),
                shift_norm=None if record.get("shift_norm") is None else float(record["shift_norm"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"Malformed verdict record: {e}") from e


def calibrated_score(recon_error: float, uncertainty: float, pivot: float, lam: float) -> Tuple[float, bool]:
    """Anomaly score and whether its exponent hit the clamp."""
    if recon_error < 0 or uncertainty < 0 or lam < 0:
        raise InvalidInputError(
            f"anomaly_score needs R_e >= 0, U >= 0, lambda >= 0 (got {recon_error}, {uncertainty}, {lam})"
        )
    exponent = lam * uncertainty * (pivot - recon_error)
    clamped = abs(exponent) > EXPONENT_CLAMP
    if clamped:
        exponent = math.copysign(EXPONENT_CLAMP, exponent)
    return recon_error * math.exp(exponent), clamped


def anomaly_score(recon_error: float, uncertainty: float, pivot: float, lam: float) -> float:
    """``R_e * exp(lambda * U * (r_e - R_e))``; uncertain large errors are damped, small ones amplified."""
    return calibrated_score(recon_error, uncertainty, pivot, lam)[0]


def update_pivot(pivot: float, recon_error: float, ema_beta: float) -> float:
    if not 0.0 <= ema_beta <= 1.0:
        raise InvalidInputError(f"ema_beta must be in [0, 1], got {ema_beta}")
    return ema_beta * pivot + (1.0 - ema_beta) * recon_error


def window_quantile(window: Sequence[float], q: float) -> float:
    """Smallest score ``s`` in the window with empirical CDF ``F(s) >= q``.

    Raises:
        WarmupError: If the window is empty
        InvalidInputError: If ``q`` is outside (0, 1)
    """
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"q must be in (0, 1), got {q}")
    values = np.sort(np.asarray(window, dtype=np.float64))
    if values.size == 0:
        raise WarmupError("window_quantile on an empty window")
    cdf = np.arange(1, values.size + 1) / values.size
    return float(values[int(np.argmax(cdf >= q))])


def mad(window: Sequence[float]) -> float:
    """Median absolute deviation from the median."""
    values = np.asarray(window, dtype=np.float64)
    if values.size == 0:
        raise WarmupError("mad on an empty window")
    return float(np.median(np.abs(values - np.median(values))))


def admit_candidate(uncertainty: float, score: float, mu_t: float, mu_a0: float, delta: float) -> bool:
    """Uncertain (above ``mu_t``) and within ``delta`` of the base threshold, bounds inclusive."""
    return uncertainty > mu_t and (mu_a0 - delta) <= score <= (mu_a0 + delta)


def regularizer(mu_a0: float, candidate_stat: Optional[float], kappa: float) -> float:
    """``kappa * (mu_a0 - candidate_stat)``, or 0 without candidates."""
    if candidate_stat is None:
        return 0.0
    return kappa * (mu_a0 - candidate_stat)


def expected_cost(fpr: float, fnr: float, prior_anomaly: float, cost_fp: float = 1.0, cost_fn: float = 1.0) -> float:
    """Bayes misclassification cost ``pi_N * C_fp * FPR + pi_A * C_fn * FNR`` of an operating point."""
    return (1.0 - prior_anomaly) * cost_fp * fpr + prior_anomaly * cost_fn * fnr


@dataclass
class ThresholdState:
    """Mutable threshold state owned by one stream consumer."""

    tau: float
    kappa: float
    lam: float
    ema_beta: float
    capacity: int
    warmup_min: int
    mu_t: float
    bootstrap: float
    pivot: float
    threshold_mode: str = "regularized"
    regularizer_stat: str = "median"
    use_dto: bool = True
    w_n: Deque[Tuple[int, float]] = field(default_factory=deque)
    w_x: Deque[Tuple[int, float]] = field(default_factory=deque)
    w_c: Deque[float] = field(default_factory=deque)
    mu_a0: Optional[float] = None
    mu_ar: Optional[float] = None
    mu_a_star: Optional[float] = None
    delta: Optional[float] = None
    exponent_clamps: int = 0
    observed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0 or self.kappa < 0 or self.lam < 0:
            raise InvalidInputError("ThresholdState needs tau in (0, 1), kappa >= 0 and lambda >= 0")
        self.w_n = deque(self.w_n, maxlen=self.capacity)
        self.w_x = deque(self.w_x, maxlen=self.capacity)
        self.w_c = deque(self.w_c, maxlen=self.capacity)

    @classmethod
    def from_settings(cls, settings: Settings, mu_t: float, bootstrap: float, pivot: float) -> "ThresholdState":
        return cls(
            tau=settings.tau,
            kappa=settings.kappa,
            lam=settings.calibration_lambda if settings.score_mode == "calibrated" else 0.0,
            ema_beta=settings.ema_beta,
            capacity=settings.window_size,
            warmup_min=settings.warmup_min,
            mu_t=mu_t,
            bootstrap=bootstrap,
            pivot=pivot,
            threshold_mode=settings.threshold_mode,
            regularizer_stat=settings.regularizer_stat,
            use_dto=settings.use_dto,
        )

    @property
    def normal_scores(self) -> List[float]:
        return [score for _, score in self.w_n]

    @property
    def warm(self) -> bool:
        return self.use_dto and len(self.w_n) >= self.warmup_min

    def quantile_window(self) -> List[float]:
        """Normal scores plus flagged scores from the span covered by ``w_n``."""
        if not self.w_n:
            return []
        oldest = self.w_n[0][0]
        return self.normal_scores + [score for index, score in self.w_x if index >= oldest]

    def score(self, recon_error: float, uncertainty: float) -> float:
        value, clamped = calibrated_score(recon_error, uncertainty, self.pivot, self.lam)
        if clamped:
            self.exponent_clamps += 1
        return value


def current_threshold(state: ThresholdState) -> float:
    """Decision threshold ``mu_a0 + mu_ar``, or the bootstrap value while warming up.

    Updates ``mu_a0``/``mu_ar``/``mu_a_star`` on the state.
    """
    if not state.warm:
        state.mu_a0 = state.mu_ar = None
        state.mu_a_star = state.bootstrap
        return state.bootstrap
    mu_a0 = window_quantile(state.quantile_window(), state.tau)
    mu_ar = 0.0
    if state.threshold_mode == "regularized" and state.w_c:
        stat = np.median(state.w_c) if state.regularizer_stat == "median" else np.mean(state.w_c)
        mu_ar = regularizer(mu_a0, float(stat), state.kappa)
    state.mu_a0, state.mu_ar = mu_a0, mu_ar
    state.mu_a_star = mu_a0 + mu_ar
    return state.mu_a_star


def observe(state: ThresholdState, verdict: Verdict) -> ThresholdState:
    """Fold one emitted verdict into the windows, pivot and threshold.

    Normal decisions enter ``w_n``; anomalies enter ``w_x``. Candidates are admitted
    against the base threshold in force when the verdict was emitted.
    """
    if verdict.decision is Decision.NORMAL:
        state.w_n.append((verdict.index, verdict.score))
    else:
        state.w_x.append((verdict.index, verdict.score))
    if state.mu_a0 is not None and state.w_n:
        state.delta = mad(state.normal_scores)
        if admit_candidate(verdict.uncertainty, verdict.score, state.mu_t, state.mu_a0, state.delta):
            state.w_c.append(verdict.score)
    state.pivot = update_pivot(state.pivot, verdict.recon_error, state.ema_beta)
    state.observed += 1
    current_threshold(state)
    return state


def reinitialize_on_drift(
    state: ThresholdState, bootstrap: Optional[float] = None, mu_t: Optional[float] = None
) -> ThresholdState:
    """Drop all window entries and fall back to the bootstrap threshold. The pivot is kept.

    Args:
        state: State to reset in place
        bootstrap: New bootstrap threshold (e.g. from a freshly swapped model)
        mu_t: New admission uncertainty level
    """
    state.w_n.clear()
    state.w_x.clear()
    state.w_c.clear()
    state.delta = None
    if bootstrap is not None:
        state.bootstrap = bootstrap
    if mu_t is not None:
        state.mu_t = mu_t
    current_threshold(state)
    return state


class ThresholdSnapshot(BaseModel):
    """JSON form of :class:`ThresholdState` for checkpoints."""

    tau: float
    kappa: float
    lam: float
    ema_beta: float
    capacity: int = Field(ge=1)
    warmup_min: int = Field(ge=1)
    mu_t: float
    bootstrap: float
    pivot: float
    threshold_mode: str
    regularizer_stat: str
    use_dto: bool
    w_n: List[Tuple[int, float]]
    w_x: List[Tuple[int, float]]
    w_c: List[float]
    mu_a0: Optional[float] = None
    mu_ar: Optional[float] = None
    mu_a_star: Optional[float] = None
    delta: Optional[float] = None
    exponent_clamps: int = 0
    observed: int = 0


def snapshot_state(state: ThresholdState) -> ThresholdSnapshot:
    return ThresholdSnapshot(
        **{name: getattr(state, name) for name in ThresholdSnapshot.model_fields if name not in ("w_n", "w_x", "w_c")},
        w_n=list(state.w_n),
        w_x=list(state.w_x),
        w_c=list(state.w_c),
    )


def restore_state(snapshot: ThresholdSnapshot) -> ThresholdState:
    return ThresholdState(**snapshot.model_dump())
