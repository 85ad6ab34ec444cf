"""Per-instance inference: routing, calibrated scoring, thresholding and update triggers."""
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel

from ..analysis.thresholds import (
    Decision,
    DetectorKind,
    ThresholdState,
    Verdict,
    current_threshold,
    observe,
    reinitialize_on_drift,
)
from ..config.settings import Settings
from ..exceptions import TrainingError
from .bundle import VACUOUS_UNCERTAINTY, Assessment, ModelBundle, assess_batch
from .training import fit_bundle


@dataclass
class UpdateMonitor:
    """Accumulated high-uncertainty mass over the most recent ``capacity`` instances.

    Only uncertainties above ``mu_e`` contribute. With ``normalizer`` set to the
    vacuous uncertainty, each contribution lies in (0, 1] so the mass is comparable
    to a count of instances.
    """

    mu_e: float
    mu_o_abs: float
    t_max: int
    capacity: int
    normalizer: float = 1.0
    contributions: Deque[float] = field(default_factory=deque)
    delta_t: int = 0
    backoff_until: int = -1

    def __post_init__(self):
        self.contributions = deque(self.contributions, maxlen=self.capacity)

    @classmethod
    def from_settings(cls, settings: Settings, mu_e: float) -> "UpdateMonitor":
        return cls(
            mu_e=mu_e,
            mu_o_abs=settings.mu_o_frac * settings.window_size,
            t_max=settings.t_max,
            capacity=settings.window_size,
            normalizer=VACUOUS_UNCERTAINTY if settings.update_mass == "vacuous" else 1.0,
        )

    def contribution(self, uncertainty: float) -> float:
        return uncertainty / self.normalizer if uncertainty > self.mu_e else 0.0

    def push(self, uncertainty: float) -> None:
        self.contributions.append(self.contribution(uncertainty))
        self.delta_t += 1

    @property
    def mass(self) -> float:
        return math.fsum(self.contributions)

    def reset(self) -> None:
        self.contributions.clear()
        self.delta_t = 0
        self.backoff_until = -1


class MonitorSnapshot(BaseModel):
    mu_e: float
    mu_o_abs: float
    t_max: int
    capacity: int
    normalizer: float
    contributions: List[float]
    delta_t: int
    backoff_until: int


def snapshot_monitor(monitor: UpdateMonitor) -> MonitorSnapshot:
    return MonitorSnapshot(
        mu_e=monitor.mu_e,
        mu_o_abs=monitor.mu_o_abs,
        t_max=monitor.t_max,
        capacity=monitor.capacity,
        normalizer=monitor.normalizer,
        contributions=list(monitor.contributions),
        delta_t=monitor.delta_t,
        backoff_until=monitor.backoff_until,
    )


def restore_monitor(snapshot: MonitorSnapshot) -> UpdateMonitor:
    return UpdateMonitor(**snapshot.model_dump())


def offline_update_check(monitor: UpdateMonitor, window_uncertainties: Optional[Sequence[float]] = None) -> bool:
    """Whether an offline update is due.

    Args:
        monitor: Update monitor
        window_uncertainties: Recompute the mass from these raw uncertainties instead
            of the monitor's running window

    Returns:
        True when the mass exceeds ``mu_o_abs`` or ``delta_t`` exceeds ``t_max``
    """
    if window_uncertainties is None:
        mass = monitor.mass
    else:
        mass = math.fsum(monitor.contribution(float(u)) for u in window_uncertainties)
    return mass > monitor.mu_o_abs or monitor.delta_t > monitor.t_max


def new_threshold_state(bundle: ModelBundle, settings: Settings) -> ThresholdState:
    return ThresholdState.from_settings(settings, bundle.mu_t, bundle.bootstrap_threshold, bundle.pivot_init)


def assess(bundle: ModelBundle, x_raw: np.ndarray, settings: Settings) -> Assessment:
    """Batch uncertainty/routing/error for raw rows scored by ``bundle``."""
    x_raw = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
    bundle.check_dim(x_raw.shape[1])
    return assess_batch(bundle.scd, bundle.iec, bundle.dsd, bundle.standardizer.transform(x_raw), bundle.mu_e, settings)


def decide(
    bundle: ModelBundle,
    state: ThresholdState,
    monitor: UpdateMonitor,
    assessment: Assessment,
    row: int,
    index: int,
    settings: Settings,
) -> Tuple[Verdict, bool]:
    """Emit the verdict for one assessed row and update threshold state and monitor.

    Returns:
        The verdict and whether an offline update should be triggered
    """
    uncertainty = float(assessment.uncertainty[row])
    recon_error = float(assessment.recon_error[row])
    dynamic = bool(assessment.dynamic[row])
    score = state.score(recon_error, uncertainty)
    threshold = state.mu_a_star if state.mu_a_star is not None else current_threshold(state)
    shift_norm = float(assessment.shift_norm[row]) if dynamic else None
    verdict = Verdict(
        index=index,
        recon_error=recon_error,
        uncertainty=uncertainty,
        score=score,
        threshold=threshold,
        decision=Decision.ANOMALY if score > threshold else Decision.NORMAL,
        detector=DetectorKind.DYNAMIC if dynamic else DetectorKind.STATIC,
        model_version=bundle.version,
        shift_norm=shift_norm,
    )
    observe(state, verdict)
    monitor.push(uncertainty)
    trigger = settings.enable_updates and index >= monitor.backoff_until and offline_update_check(monitor)
    return verdict, trigger


def score_instance(
    bundle: ModelBundle, state: ThresholdState, monitor: UpdateMonitor, x, index: int, settings: Settings
) -> Tuple[Verdict, bool]:
    """Score one raw instance (see :func:`decide`)."""
    return decide(bundle, state, monitor, assess(bundle, x, settings), 0, index, settings)


@dataclass
class UpdateBuffer:
    """Recent raw instances classified normal, kept for fine-tuning."""

    capacity: int
    rows: Deque[np.ndarray] = field(default_factory=deque)

    def __post_init__(self):
        self.rows = deque(self.rows, maxlen=self.capacity)

    def push(self, x: np.ndarray) -> None:
        self.rows.append(np.array(x, dtype=np.float64))

    def snapshot(self) -> np.ndarray:
        return np.array(self.rows, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rows)


def run_offline_update(bundle: ModelBundle, recent: np.ndarray, settings: Settings) -> ModelBundle:
    """Build the next bundle version from the retained recent instances.

    ``finetune`` starts from the current parameters; ``retrain`` trains from scratch.

    Raises:
        TrainingError: If the buffer is empty or training fails
    """
    recent = np.asarray(recent, dtype=np.float64)
    if recent.ndim != 2 or recent.shape[0] < 2:
        raise TrainingError(f"Offline update needs at least 2 retained instances, got shape {recent.shape}")
    version = bundle.version + 1
    if settings.update_mode == "retrain":
        new = fit_bundle(recent, settings, version=version, historical_count=bundle.historical_count)
    else:
        new = fit_bundle(recent, settings, base=bundle, version=version)
    logger.bind(component="pipeline", model_version=version).info(
        "offline update built v{} from {} instances ({})", version, recent.shape[0], settings.update_mode
    )
    return new


def swap_bundle(
    new: ModelBundle, state: ThresholdState, monitor: UpdateMonitor
) -> Tuple[ThresholdState, UpdateMonitor]:
    """Reset threshold state and monitor for a freshly swapped bundle."""
    reinitialize_on_drift(state, bootstrap=new.bootstrap_threshold, mu_t=new.mu_t)
    monitor.mu_e = new.mu_e
    monitor.reset()
    return state, monitor
