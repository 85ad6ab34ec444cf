"""Two-stage training of the detector bundle.

Stage one fits the static autoencoder and bootstraps the evidential controller on
pseudo-labels derived from reconstruction error alone. Stage two re-labels with real
concept uncertainty (Unknowns dropped) and interleaves controller and hypernetwork
updates per minibatch.
"""
import math
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from ..analysis.detectors.dynamic_detector import DsdTrainer, Hypernetwork, build_hypernetwork
from ..analysis.detectors.evidence_controller import (
    NEGATIVE_CLASS,
    POSITIVE_CLASS,
    UNKNOWN_CLASS,
    EvidentialClassifier,
    IecTrainer,
    evidential_batch,
    pseudo_label_batch,
    resolve_mu_p,
    train_iec,
)
from ..analysis.detectors.standardizer import Standardizer
from ..analysis.detectors.static_detector import Autoencoder, iterate_minibatches, reconstruct_batch, train_scd
from ..analysis.thresholds import EXPONENT_CLAMP
from ..config.settings import Settings
from ..exceptions import TrainingError
from .bundle import ModelBundle, assess_batch


def component_rngs(seed: int, version: int) -> Tuple[np.random.Generator, ...]:
    """Independent generators for data handling, SCD, IEC and DSD."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence([seed, version]).spawn(4))


def apply_prior_labels(
    labels: np.ndarray, truth: Optional[np.ndarray], fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Force a fraction of the known true anomalies to Positive."""
    if truth is None or fraction <= 0.0:
        return labels
    anomalies = np.flatnonzero(truth == 1)
    count = int(round(fraction * anomalies.size))
    if count == 0:
        return labels
    labels = labels.copy()
    labels[rng.choice(anomalies, size=count, replace=False)] = POSITIVE_CLASS
    return labels


def _both_classes(labels: np.ndarray) -> bool:
    known = labels[labels != UNKNOWN_CLASS]
    return bool(np.any(known == NEGATIVE_CLASS) and np.any(known == POSITIVE_CLASS))


def train_stage_two(
    scd: Autoencoder,
    iec: EvidentialClassifier,
    dsd: Optional[Hypernetwork],
    x: np.ndarray,
    labels: Optional[np.ndarray],
    settings: Settings,
    rng_iec: np.random.Generator,
    rng_dsd: np.random.Generator,
    iec_epochs: int,
    dsd_epochs: int,
) -> Tuple[EvidentialClassifier, Hypernetwork, Autoencoder]:
    """Interleave controller and hypernetwork steps on each minibatch.

    ``labels`` may contain Unknowns, which are skipped by the controller. With
    ``labels=None`` only the hypernetwork is trained.
    """
    dsd = dsd if dsd is not None else build_hypernetwork(scd, settings, rng_dsd)
    dsd_trainer = DsdTrainer(scd, dsd, settings)
    iec_trainer = IecTrainer(iec, settings, rng_iec) if labels is not None else None
    log = logger.bind(component="pipeline")
    for epoch in range(max(iec_epochs if iec_trainer else 0, dsd_epochs)):
        dsd_loss = 0.0
        for idx in iterate_minibatches(x.shape[0], settings.batch_size, rng_dsd):
            if iec_trainer is not None and epoch < iec_epochs:
                rows = idx[labels[idx] != UNKNOWN_CLASS]
                if rows.size:
                    iec_trainer.step(x[rows], labels[rows])
            if epoch < dsd_epochs:
                dsd_loss += dsd_trainer.step(x[idx]) * len(idx)
        if iec_trainer is not None:
            iec_trainer.end_epoch()
        dsd_trainer.end_epoch()
        log.debug("stage two epoch {} mean dynamic loss {:.6g}", epoch, dsd_loss / x.shape[0])
    return (iec_trainer.clf if iec_trainer else iec), dsd_trainer.h, dsd_trainer.static


def calibrate(
    scd: Autoencoder, iec: EvidentialClassifier, dsd: Hypernetwork, x: np.ndarray, settings: Settings
) -> Tuple[float, float, float]:
    """``mu_t`` (max training uncertainty), pivot (max training error) and bootstrap threshold."""
    assessment = assess_batch(scd, iec, dsd, x, settings.mu_e, settings)
    mu_t = float(assessment.uncertainty.max())
    pivot = float(reconstruct_batch(scd, x)[2].max())
    lam = settings.calibration_lambda if settings.score_mode == "calibrated" else 0.0
    errors = assessment.recon_error
    exponent = np.clip(lam * assessment.uncertainty * (pivot - errors), -EXPONENT_CLAMP, EXPONENT_CLAMP)
    bootstrap = float(np.max(errors * np.exp(exponent)))
    return mu_t, pivot, bootstrap


def fit_bundle(
    x_raw: np.ndarray,
    settings: Settings,
    truth: Optional[np.ndarray] = None,
    base: Optional[ModelBundle] = None,
    version: int = 1,
    historical_count: int = 0,
) -> ModelBundle:
    """Train a bundle from raw instances, or fine-tune ``base`` on them.

    Fine-tuning keeps the base standardizer, starts every component from the base
    parameters and uses ``settings.update_epochs`` for each stage.
    """
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.ndim != 2 or x_raw.shape[0] == 0:
        raise TrainingError(f"Training needs a non-empty 2-D matrix, got shape {x_raw.shape}")
    rng_data, rng_scd, rng_iec, rng_dsd = component_rngs(settings.seed, version)
    log = logger.bind(component="pipeline", model_version=version)

    if base is None and settings.coverage < 1.0:
        keep = max(1, int(math.ceil(settings.coverage * x_raw.shape[0])))
        rows = np.sort(rng_data.choice(x_raw.shape[0], size=keep, replace=False))
        x_raw = x_raw[rows]
        truth = None if truth is None else np.asarray(truth)[rows]

    standardizer = base.standardizer if base is not None else Standardizer.fit(x_raw)
    x = standardizer.transform(x_raw)
    if base is None and settings.noise_std > 0:
        x = x + settings.noise_std * rng_data.standard_normal(x.shape)

    epochs = settings.update_epochs if base is not None else None
    scd = train_scd(x, settings, rng_scd, model=base.scd if base else None, epochs=epochs)
    errors = reconstruct_batch(scd, x)[2]
    mu_p = resolve_mu_p(errors, settings.mu_p_proportion)
    mu_e = settings.mu_e

    iec_epochs = settings.iec_epochs if base is None else settings.update_epochs
    dsd_epochs = settings.dsd_epochs if base is None else settings.update_epochs
    if base is None:
        bootstrap_labels = apply_prior_labels(
            pseudo_label_batch(errors, np.zeros_like(errors), mu_p, mu_e),
            truth,
            settings.prior_label_fraction,
            rng_data,
        )
        iec = train_iec(None, x, bootstrap_labels, settings, rng_iec)
        dsd = None
        relabel_passes = settings.iec_passes - 1
    else:
        iec, dsd = base.iec, base.dsd
        relabel_passes = 1

    stage_two_labels = None
    for p in range(relabel_passes):
        _, uncertainty, _ = evidential_batch(iec, x)
        labels = apply_prior_labels(
            pseudo_label_batch(errors, uncertainty, mu_p, mu_e), truth, settings.prior_label_fraction, rng_data
        )
        if not _both_classes(labels):
            log.warning("relabel pass {} left a single class; keeping the previous controller", p + 2)
            break
        log.debug("relabel pass {}: {} unknown of {}", p + 2, int(np.sum(labels == UNKNOWN_CLASS)), labels.size)
        if p < relabel_passes - 1:
            known = labels != UNKNOWN_CLASS
            iec = train_iec(iec, x[known], labels[known], settings, rng_iec, epochs=iec_epochs)
        else:
            stage_two_labels = labels

    iec, dsd, scd = train_stage_two(
        scd, iec, dsd, x, stage_two_labels, settings, rng_iec, rng_dsd, iec_epochs, dsd_epochs
    )
    mu_t, pivot, bootstrap = calibrate(scd, iec, dsd, x, settings)
    log.info(
        "bundle v{} trained on {} instances: latent={} mu_p={:.4g} mu_t={:.4g} bootstrap={:.4g}",
        version,
        x.shape[0],
        scd.latent_dim,
        mu_p,
        mu_t,
        bootstrap,
    )
    return ModelBundle(
        scd=scd,
        iec=iec,
        dsd=dsd,
        standardizer=standardizer,
        mu_p=mu_p,
        mu_e=mu_e,
        mu_t=mu_t,
        pivot_init=pivot,
        bootstrap_threshold=bootstrap,
        version=version,
        historical_count=historical_count if base is None else base.historical_count,
        extras={"training_instances": int(x.shape[0])},
    )


def train(historical: np.ndarray, settings: Settings, labels: Optional[np.ndarray] = None) -> ModelBundle:
    """Train a fresh bundle on the historical split.

    Args:
        historical: Raw historical instances ``(n, d)``
        settings: Hyperparameters
        labels: Optional ground truth, used only for ``prior_label_fraction``

    Returns:
        Bundle at version 1

    Raises:
        TrainingError: On empty data, divergence or single-class pseudo-labels
    """
    historical = np.asarray(historical, dtype=np.float64)
    count = historical.shape[0] if historical.ndim else 0
    return fit_bundle(historical, settings, truth=labels, historical_count=count)
