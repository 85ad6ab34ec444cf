"""Trained model bundle and batch assessment shared by training and scoring."""
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from ..analysis.detectors.dynamic_detector import Hypernetwork, dynamic_reconstruct_batch
from ..analysis.detectors.evidence_controller import EvidentialClassifier, concept_uncertainty, evidential_batch
from ..analysis.detectors.standardizer import Standardizer
from ..analysis.detectors.static_detector import Autoencoder, reconstruct_batch
from ..config.settings import Settings
from ..exceptions import DimensionMismatchError

# Concept uncertainty of the flat Dirichlet (1, 1), the largest value a binary opinion reaches.
VACUOUS_UNCERTAINTY = concept_uncertainty([1.0, 1.0])


@dataclass(frozen=True)
class ModelBundle:
    """All trained components plus the calibration values derived from training data."""

    scd: Autoencoder
    iec: EvidentialClassifier
    dsd: Hypernetwork
    standardizer: Standardizer
    mu_p: float
    mu_e: float
    mu_t: float
    pivot_init: float
    bootstrap_threshold: float
    version: int = 1
    historical_count: int = 0
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.standardizer.dim

    def check_dim(self, d: int) -> None:
        if d != self.input_dim:
            raise DimensionMismatchError(self.input_dim, d, what="stream feature dimension")


@dataclass
class Assessment:
    """Per-row intermediate results for a batch of standardized instances."""

    uncertainty: np.ndarray
    recon_error: np.ndarray
    dynamic: np.ndarray
    shift_norm: np.ndarray
    clamped: int = 0


def assess_batch(
    scd: Autoencoder,
    iec: EvidentialClassifier,
    dsd: Hypernetwork,
    x: np.ndarray,
    mu_e: float,
    settings: Settings,
) -> Assessment:
    """Uncertainty, routing and reconstruction error for standardized rows.

    Rows whose uncertainty exceeds ``mu_e`` go to the dynamic detector in ``full``
    mode; ``static_only``/``dynamic_only`` pin the route. Shift norms are NaN for
    statically scored rows.
    """
    n = x.shape[0]
    if settings.use_iec:
        _, uncertainty, clamped = evidential_batch(iec, x)
    else:
        uncertainty, clamped = np.zeros(n), 0
    if settings.detector_mode == "static_only":
        dynamic = np.zeros(n, dtype=bool)
    elif settings.detector_mode == "dynamic_only":
        dynamic = np.ones(n, dtype=bool)
    else:
        dynamic = uncertainty > mu_e

    errors = np.empty(n)
    shift_norm = np.full(n, np.nan)
    static_rows = np.flatnonzero(~dynamic)
    dynamic_rows = np.flatnonzero(dynamic)
    if static_rows.size:
        errors[static_rows] = reconstruct_batch(scd, x[static_rows])[2]
    if dynamic_rows.size:
        _, _, dyn_errors, norms = dynamic_reconstruct_batch(scd, dsd, x[dynamic_rows])
        errors[dynamic_rows] = dyn_errors
        shift_norm[dynamic_rows] = norms
    return Assessment(
        uncertainty=uncertainty, recon_error=errors, dynamic=dynamic, shift_norm=shift_norm, clamped=clamped
    )
