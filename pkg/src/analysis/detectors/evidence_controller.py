"""Evolution controller: an evidential classifier that measures concept uncertainty.

The classifier emits non-negative evidence per class through an exponential head.
Dirichlet concentrations are ``alpha = evidence + 1``. Class 0 is normal
(pseudo-label Negative) and class 1 is anomalous (pseudo-label Positive).
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import special

from ...config.settings import Settings
from ...exceptions import InvalidInputError, NonFiniteError, TrainingError
from ...nn.mlp import Activation, MlpParams, backward, forward, init_mlp
from ...nn.optim import AdamState, adam_update
from .static_detector import iterate_minibatches

NUM_CLASSES = 2
NEGATIVE_CLASS = 0
POSITIVE_CLASS = 1
UNKNOWN_CLASS = -1

# Clip applied to the mutual-information estimate.
UNCERTAINTY_TOLERANCE = 1e-12


class PseudoLabel(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNKNOWN = "unknown"

    @property
    def class_index(self) -> int:
        return {PseudoLabel.POSITIVE: POSITIVE_CLASS, PseudoLabel.NEGATIVE: NEGATIVE_CLASS}.get(self, UNKNOWN_CLASS)


@dataclass(frozen=True)
class DirichletOpinion:
    """Dirichlet opinion about one instance."""

    alpha: np.ndarray
    strength: float
    prob: np.ndarray
    uncertainty: float
    clamped: int = 0


@dataclass(frozen=True)
class EvidentialClassifier:
    net: MlpParams

    def __post_init__(self):
        if self.net.output_dim != NUM_CLASSES:
            raise InvalidInputError(f"Evidential classifier needs {NUM_CLASSES} outputs, got {self.net.output_dim}")
        if self.net.layers[-1].activation is not Activation.EXPONENTIAL:
            raise InvalidInputError("Evidential classifier needs an exponential output layer")

    @property
    def input_dim(self) -> int:
        return self.net.input_dim


def build_classifier(input_dim: int, hidden: int, rng: np.random.Generator) -> EvidentialClassifier:
    """Two ReLU hidden layers of width ``hidden`` and an exponential evidence head."""
    net = init_mlp(
        [input_dim, hidden, hidden, NUM_CLASSES],
        [Activation.RELU, Activation.RELU, Activation.EXPONENTIAL],
        rng,
    )
    return EvidentialClassifier(net)


def digamma(x: float) -> float:
    """Digamma function on the positive reals.

    Raises:
        InvalidInputError: If ``x`` is not a finite positive number
    """
    if not (math.isfinite(x) and x > 0):
        raise InvalidInputError(f"digamma is only defined here for x > 0, got {x}")
    return float(special.digamma(x))


def _check_alpha(alpha) -> np.ndarray:
    arr = np.asarray(alpha, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise InvalidInputError(f"alpha needs at least two components, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidInputError("Dirichlet concentrations must be finite and positive")
    return arr


def predictive_prob(alpha) -> np.ndarray:
    """Expected class probabilities ``alpha / sum(alpha)``."""
    arr = _check_alpha(alpha)
    return arr / arr.sum(axis=-1, keepdims=True)


def concept_uncertainties(alpha: np.ndarray) -> np.ndarray:
    """Row-wise mutual information between label and class probabilities for ``(B, K)`` alphas."""
    strength = alpha.sum(axis=1, keepdims=True)
    prob = alpha / strength
    expected = np.sum(prob * (special.digamma(alpha + 1.0) - special.digamma(strength + 1.0)), axis=1)
    entropy = -np.sum(prob * np.log(prob), axis=1)
    values = expected + entropy
    return np.where(values < 0.0, np.where(values >= -UNCERTAINTY_TOLERANCE, 0.0, values), values)


def concept_uncertainty(alpha) -> float:
    """Mutual-information concept uncertainty of one Dirichlet opinion.

    Args:
        alpha: Concentration vector, every entry > 0

    Returns:
        Non-negative uncertainty; ``(1, 1)`` gives ``ln 2 - 0.5``
    """
    arr = _check_alpha(alpha)
    return float(concept_uncertainties(arr.reshape(1, -1))[0])


def evidential_batch(clf: EvidentialClassifier, x) -> Tuple[np.ndarray, np.ndarray, int]:
    """Alphas ``(B, 2)``, uncertainties ``(B,)`` and the number of clamped logits."""
    evidence, tape = forward(clf.net, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    alpha = evidence + 1.0
    return alpha, concept_uncertainties(alpha), tape.clamped


def evidential_forward(clf: EvidentialClassifier, x) -> DirichletOpinion:
    """Dirichlet opinion for a single instance."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"evidential_forward takes one instance, got shape {x.shape}")
    alpha, uncertainty, clamped = evidential_batch(clf, x)
    alpha = alpha[0]
    strength = float(alpha.sum())
    return DirichletOpinion(
        alpha=alpha, strength=strength, prob=alpha / strength, uncertainty=float(uncertainty[0]), clamped=clamped
    )


def _check_labels(labels, n: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.shape != (n,) or not np.all((arr == NEGATIVE_CLASS) | (arr == POSITIVE_CLASS)):
        raise InvalidInputError(f"labels must be {n} class indices in {{0, 1}}")
    return arr.astype(np.int64)


def focal_edl_losses(alpha: np.ndarray, labels: np.ndarray, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Focal evidential loss per row and its gradient w.r.t. alpha.

    ``L = (1 - p_y) ** gamma * (log S - log alpha_y)``
    """
    rows = np.arange(alpha.shape[0])
    onehot = np.zeros_like(alpha)
    onehot[rows, labels] = 1.0
    strength = alpha.sum(axis=1)
    alpha_y = alpha[rows, labels]
    p_y = alpha_y / strength
    u = 1.0 - p_y
    nll = np.log(strength) - np.log(alpha_y)
    d_nll = 1.0 / strength[:, None] - onehot / alpha_y[:, None]
    if gamma == 0.0:
        return nll, d_nll
    d_py = onehot / strength[:, None] - (alpha_y / strength**2)[:, None]
    weight = u**gamma
    grad = (gamma * u ** (gamma - 1.0) * nll)[:, None] * (-d_py) + weight[:, None] * d_nll
    return weight * nll, grad


def focal_edl_loss(alpha, label: int, gamma: float) -> float:
    """Focal evidential loss of one opinion.

    Raises:
        InvalidInputError: On an invalid label, alpha or negative gamma
    """
    if label not in (NEGATIVE_CLASS, POSITIVE_CLASS):
        raise InvalidInputError(f"label must be 0 or 1, got {label}")
    if gamma < 0:
        raise InvalidInputError(f"gamma must be >= 0, got {gamma}")
    arr = _check_alpha(alpha).reshape(1, -1)
    losses, _ = focal_edl_losses(arr, np.array([label]), gamma)
    return float(losses[0])


def evidential_ce_losses(alpha: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Expected cross-entropy ``digamma(S) - digamma(alpha_y)`` and its gradient."""
    rows = np.arange(alpha.shape[0])
    strength = alpha.sum(axis=1)
    losses = special.digamma(strength) - special.digamma(alpha[rows, labels])
    grad = np.repeat(special.polygamma(1, strength)[:, None], alpha.shape[1], axis=1)
    grad[rows, labels] -= special.polygamma(1, alpha[rows, labels])
    return losses, grad


def uniform_kl_losses(alpha: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """KL divergence from ``Dir(alpha)`` to the uniform Dirichlet, with gradient."""
    k = alpha.shape[1]
    strength = alpha.sum(axis=1)
    losses = (
        special.gammaln(strength)
        - special.gammaln(k)
        - special.gammaln(alpha).sum(axis=1)
        + np.sum((alpha - 1.0) * (special.digamma(alpha) - special.digamma(strength)[:, None]), axis=1)
    )
    grad = (alpha - 1.0) * special.polygamma(1, alpha) - ((strength - k) * special.polygamma(1, strength))[:, None]
    return losses, grad


def pseudo_label(recon_err: float, uncertainty: float, mu_p: float, mu_e: float) -> PseudoLabel:
    """Three-way pseudo-label from reconstruction error and concept uncertainty."""
    if uncertainty > mu_e:
        return PseudoLabel.UNKNOWN
    return PseudoLabel.POSITIVE if recon_err > mu_p else PseudoLabel.NEGATIVE


def pseudo_label_batch(errors: np.ndarray, uncertainties: np.ndarray, mu_p: float, mu_e: float) -> np.ndarray:
    """Vectorised :func:`pseudo_label` returning class indices, ``-1`` for Unknown."""
    labels = np.where(errors > mu_p, POSITIVE_CLASS, NEGATIVE_CLASS)
    return np.where(uncertainties > mu_e, UNKNOWN_CLASS, labels)


def resolve_mu_p(train_errors: Sequence[float], proportion: float) -> float:
    """Error level above which a ``proportion`` of training instances lie.

    Uses the lower nearest rank ``sorted[ceil((1 - p) * n) - 1]``.
    """
    if not 0.0 < proportion < 1.0:
        raise InvalidInputError(f"proportion must be in (0, 1), got {proportion}")
    errors = np.sort(np.asarray(train_errors, dtype=np.float64))
    if errors.size == 0:
        raise InvalidInputError("resolve_mu_p needs at least one error")
    rank = math.ceil((1.0 - proportion) * errors.size - 1e-9)
    return float(errors[max(rank, 1) - 1])


class IecTrainer:
    """Adam training loop for the evidential classifier.

    The objective is the labelled loss selected by ``iec_loss``. With
    ``iec_ood_weight > 0`` each step also pulls the opinion on random points
    2 to 4 radii away from the batch towards the vacuous Dirichlet (KL to uniform).
    """

    def __init__(self, clf: EvidentialClassifier, settings: Settings, rng: np.random.Generator):
        self.clf = clf
        self.settings = settings
        self.rng = rng
        self.state = AdamState(lr=settings.learning_rate, decay=settings.lr_decay)
        self.names = clf.net.parameter_names("iec.")

    def _loss_grad(self, x: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
        evidence, tape = forward(self.clf.net, x)
        alpha = evidence + 1.0
        if self.settings.iec_loss == "cross_entropy":
            losses, grad = evidential_ce_losses(alpha, labels)
        else:
            losses, grad = focal_edl_losses(alpha, labels, self.settings.gamma)
        grads, _ = backward(self.clf.net, tape, grad / x.shape[0])
        return float(losses.mean()), grads.parameters()

    def _ood_loss_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        n, d = x.shape
        direction = self.rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = self.rng.uniform(2.0, 4.0, size=(n, 1)) * math.sqrt(d)
        far_points = x + radius * direction
        evidence, tape = forward(self.clf.net, far_points)
        losses, grad = uniform_kl_losses(evidence + 1.0)
        weight = self.settings.iec_ood_weight
        grads, _ = backward(self.clf.net, tape, weight * grad / n)
        return weight * float(losses.mean()), grads.parameters()

    def step(self, x: np.ndarray, labels: np.ndarray) -> float:
        """One optimizer step on a labelled minibatch; returns the batch loss."""
        loss, grads = self._loss_grad(x, labels)
        if self.settings.iec_ood_weight > 0:
            ood_loss, ood_grads = self._ood_loss_grad(x)
            loss += ood_loss
            grads = [g + h for g, h in zip(grads, ood_grads)]
        if not math.isfinite(loss):
            raise TrainingError("IEC loss became non-finite")
        try:
            arrays = adam_update(self.clf.net.parameters(), grads, self.state, self.names)
        except NonFiniteError as e:
            raise TrainingError(f"IEC training aborted: {e}") from e
        self.clf = EvidentialClassifier(self.clf.net.with_parameters(arrays))
        return loss

    def end_epoch(self) -> None:
        self.state.end_epoch()


def mean_evidential_loss(clf: EvidentialClassifier, x: np.ndarray, labels, settings: Settings) -> float:
    """Mean labelled loss (no regulariser) of ``clf`` on a dataset."""
    labels = _check_labels(labels, np.atleast_2d(x).shape[0])
    alpha, _, _ = evidential_batch(clf, x)
    if settings.iec_loss == "cross_entropy":
        losses, _ = evidential_ce_losses(alpha, labels)
    else:
        losses, _ = focal_edl_losses(alpha, labels, settings.gamma)
    return float(losses.mean())


def train_iec(
    clf: Optional[EvidentialClassifier],
    x: np.ndarray,
    labels,
    settings: Settings,
    rng: np.random.Generator,
    epochs: Optional[int] = None,
) -> EvidentialClassifier:
    """Train the classifier on pseudo-labelled instances.

    Args:
        clf: Classifier to train; a fresh one is built when ``None``
        x: Standardized instances ``(n, d)``
        labels: Class indices (0 normal, 1 anomalous); Unknowns must be filtered out
        settings: Hyperparameters
        rng: Seeded generator
        epochs: Override ``settings.iec_epochs``

    Returns:
        Trained classifier

    Raises:
        TrainingError: If only one class is present or the loss diverges
    """
    x = np.asarray(x, dtype=np.float64)
    labels = _check_labels(labels, x.shape[0])
    present = set(np.unique(labels).tolist())
    if present != {NEGATIVE_CLASS, POSITIVE_CLASS}:
        raise TrainingError(
            f"IEC needs both pseudo-label classes, got only {sorted(present)}; adjust mu_p_proportion or mu_e"
        )
    if clf is None:
        clf = build_classifier(x.shape[1], settings.iec_hidden, rng)
    epochs = settings.iec_epochs if epochs is None else epochs
    trainer = IecTrainer(clf, settings, rng)
    log = logger.bind(component="iec")
    for epoch in range(epochs):
        total = 0.0
        for idx in iterate_minibatches(x.shape[0], settings.batch_size, rng):
            total += trainer.step(x[idx], labels[idx]) * len(idx)
        trainer.end_epoch()
        log.debug("epoch {} mean loss {:.6g}", epoch, total / x.shape[0])
    if epochs:
        log.info("IEC trained on {} instances ({} positive) for {} epochs", x.shape[0], int(labels.sum()), epochs)
    return trainer.clf
