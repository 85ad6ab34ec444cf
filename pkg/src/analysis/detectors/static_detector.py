"""Static concept-aware detector: an autoencoder over standardized instances.

Layers are indexed across the encoder first and then the decoder, so an
autoencoder with 3 + 3 layers has layer indices 0..5. Weight shifts produced by the
dynamic detector use the same indexing.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from sklearn.decomposition import PCA

from ...config.settings import Settings
from ...exceptions import DimensionMismatchError, InvalidInputError, NonFiniteError, TrainingError
from ...nn.mlp import Activation, DenseLayer, Gradients, MlpParams, Tape, backward, forward, init_mlp
from ...nn.optim import AdamState, adam_update

# Relative slack when comparing cumulative explained variance to the target.
VARIANCE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Autoencoder:
    """Encoder/decoder pair with a bottleneck of ``latent_dim`` units."""

    encoder: MlpParams
    decoder: MlpParams

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise DimensionMismatchError(self.encoder.output_dim, self.decoder.input_dim, what="decoder input")
        if self.decoder.output_dim != self.encoder.input_dim:
            raise DimensionMismatchError(self.encoder.input_dim, self.decoder.output_dim, what="decoder output")

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    @property
    def layers(self) -> List[DenseLayer]:
        return list(self.encoder.layers) + list(self.decoder.layers)

    @property
    def n_encoder_layers(self) -> int:
        return len(self.encoder.layers)

    def weight_shapes(self) -> List[Tuple[int, int]]:
        return [layer.weight.shape for layer in self.layers]

    def parameters(self) -> List[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()

    def parameter_names(self) -> List[str]:
        return self.encoder.parameter_names("encoder.") + self.decoder.parameter_names("decoder.")

    def with_parameters(self, arrays: Sequence[np.ndarray]) -> "Autoencoder":
        split = 2 * len(self.encoder.layers)
        return Autoencoder(self.encoder.with_parameters(arrays[:split]), self.decoder.with_parameters(arrays[split:]))

    def copy(self) -> "Autoencoder":
        return Autoencoder(self.encoder.copy(), self.decoder.copy())


@dataclass(frozen=True)
class ReconResult:
    latent: np.ndarray
    reconstruction: np.ndarray
    error: float


@dataclass
class AutoencoderTape:
    """Tapes of one encoder/decoder pass."""

    encoder: Tape
    decoder: Tape


def layer_schedule(input_dim: int, latent_dim: int, n_layers: int) -> List[int]:
    """Encoder widths interpolated geometrically from ``input_dim`` down to ``latent_dim``.

    Hidden widths never drop to the bottleneck width itself.
    """
    if n_layers < 1:
        raise InvalidInputError(f"n_layers must be >= 1, got {n_layers}")
    widths = [input_dim]
    ratio = latent_dim / input_dim
    for k in range(1, n_layers):
        widths.append(max(int(round(input_dim * ratio ** (k / n_layers))), latent_dim + 1))
    widths.append(latent_dim)
    return widths


def build_autoencoder(input_dim: int, latent_dim: int, n_layers: int, rng: np.random.Generator) -> Autoencoder:
    """Fresh autoencoder with ReLU hidden layers and linear latent/output layers.

    Args:
        input_dim: Feature dimension d (must be at least 2)
        latent_dim: Bottleneck width, in [1, d - 1]
        n_layers: Layers per side
        rng: Seeded generator

    Returns:
        Untrained autoencoder

    Raises:
        InvalidInputError: For d = 1 streams or an out-of-range bottleneck
    """
    if input_dim < 2:
        raise InvalidInputError("One-dimensional streams must be shingled before training (shingle_width >= 2)")
    if not 1 <= latent_dim <= input_dim - 1:
        raise InvalidInputError(f"latent_dim must be in [1, {input_dim - 1}], got {latent_dim}")
    widths = layer_schedule(input_dim, latent_dim, n_layers)
    hidden = [Activation.RELU] * (n_layers - 1)
    encoder = init_mlp(widths, hidden + [Activation.IDENTITY], rng)
    decoder = init_mlp(widths[::-1], hidden + [Activation.IDENTITY], rng)
    return Autoencoder(encoder, decoder)


def recon_error(x, y) -> float:
    """Mean squared deviation between an instance and its reconstruction.

    Raises:
        DimensionMismatchError: If the vectors differ in length
        InvalidInputError: If they are empty
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionMismatchError(x.shape[0], y.shape[0], what="reconstruction")
    if x.size == 0:
        raise InvalidInputError("recon_error needs at least one component")
    diff = x - y
    return float(np.dot(diff, diff) / x.size)


def recon_errors(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise :func:`recon_error` for two ``(B, d)`` batches."""
    if x.shape != y.shape:
        raise DimensionMismatchError(x.shape, y.shape, what="reconstruction batch")
    diff = x - y
    return np.einsum("bi,bi->b", diff, diff) / x.shape[1]


def autoencoder_forward(
    model: Autoencoder, x, shifts: Optional[Sequence[Optional[np.ndarray]]] = None
) -> Tuple[np.ndarray, np.ndarray, AutoencoderTape]:
    """Encode and decode, optionally adding a weight shift per layer.

    Returns:
        Latent code, reconstruction and the tapes needed for backpropagation
    """
    split = model.n_encoder_layers
    enc_shifts = dec_shifts = None
    if shifts is not None:
        if len(shifts) != len(model.layers):
            raise DimensionMismatchError(len(model.layers), len(shifts), what="shift list")
        enc_shifts, dec_shifts = list(shifts[:split]), list(shifts[split:])
    latent, enc_tape = forward(model.encoder, x, enc_shifts)
    recon, dec_tape = forward(model.decoder, latent, dec_shifts)
    return latent, recon, AutoencoderTape(enc_tape, dec_tape)


def autoencoder_backward(
    model: Autoencoder, tape: AutoencoderTape, recon_grad: np.ndarray
) -> Tuple[Gradients, Gradients, np.ndarray]:
    """Backpropagate dLoss/dReconstruction through decoder then encoder."""
    dec_grads, latent_grad = backward(model.decoder, tape.decoder, recon_grad)
    enc_grads, input_grad = backward(model.encoder, tape.encoder, latent_grad)
    return enc_grads, dec_grads, input_grad


def reconstruct(model: Autoencoder, x) -> ReconResult:
    """Reconstruct a single standardized instance."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise DimensionMismatchError(model.input_dim, x.shape[-1] if x.ndim else x.shape, what="instance")
    latent, recon, _ = autoencoder_forward(model, x)
    return ReconResult(latent=latent, reconstruction=recon, error=recon_error(x, recon))


def reconstruct_batch(model: Autoencoder, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch reconstruction.

    Returns:
        Latent codes ``(B, d_h)``, reconstructions ``(B, d)`` and errors ``(B,)``
    """
    latent, recon, _ = autoencoder_forward(model, x)
    return latent, recon, recon_errors(np.asarray(x, dtype=np.float64), recon)


def explained_variances(data: np.ndarray) -> np.ndarray:
    """Principal-component variances in descending order."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidInputError(f"Need at least 2 instances to estimate variances, got shape {data.shape}")
    pca = PCA(n_components=min(data.shape), svd_solver="full").fit(data)
    return np.asarray(pca.explained_variance_, dtype=np.float64)


def choose_latent_dim(data: np.ndarray, variance_threshold: float) -> int:
    """Smallest number of components explaining ``variance_threshold`` of the variance.

    The result is clamped to [1, d - 1]. Degenerate data (no variance) yields 1.

    Args:
        data: Historical instances ``(n, d)``, n >= 2
        variance_threshold: Fraction in (0, 1]

    Returns:
        Bottleneck width
    """
    if not 0.0 < variance_threshold <= 1.0:
        raise InvalidInputError(f"variance_threshold must be in (0, 1], got {variance_threshold}")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidInputError(f"choose_latent_dim needs at least 2 instances, got shape {data.shape}")
    d = data.shape[1]
    if np.all(data == data[0]):
        return 1
    variances = np.clip(explained_variances(data), 0.0, None)
    total = float(variances.sum())
    if total <= 0.0:
        return 1
    cumulative = np.cumsum(variances)
    k = int(np.searchsorted(cumulative, variance_threshold * total * (1.0 - VARIANCE_TOLERANCE))) + 1
    return max(1, min(k, d - 1))


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def reconstruction_loss_grad(x: np.ndarray, recon: np.ndarray) -> Tuple[float, np.ndarray]:
    """Batch-mean reconstruction error and its gradient w.r.t. the reconstruction."""
    errors = recon_errors(x, recon)
    grad = 2.0 * (recon - x) / (x.shape[0] * x.shape[1])
    return float(errors.mean()), grad


def train_scd(
    data: np.ndarray,
    settings: Settings,
    rng: np.random.Generator,
    model: Optional[Autoencoder] = None,
    epochs: Optional[int] = None,
) -> Autoencoder:
    """Fit the autoencoder to historical (standardized) instances.

    Args:
        data: Training matrix ``(n, d)``
        settings: Hyperparameters (epochs, batch size, learning rate, layer count)
        rng: Seeded generator for initialisation and shuffling
        model: Start from this model instead of a fresh one (fine-tuning)
        epochs: Override ``settings.scd_epochs``

    Returns:
        Trained autoencoder

    Raises:
        TrainingError: On empty data or a non-finite loss
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise TrainingError(f"train_scd needs at least one instance, got shape {data.shape}")
    if model is None:
        latent_dim = choose_latent_dim(data, settings.latent_variance) if data.shape[0] >= 2 else 1
        model = build_autoencoder(data.shape[1], latent_dim, settings.scd_layers, rng)
    elif model.input_dim != data.shape[1]:
        raise DimensionMismatchError(model.input_dim, data.shape[1], what="training data")

    epochs = settings.scd_epochs if epochs is None else epochs
    log = logger.bind(component="scd")
    state = AdamState(lr=settings.learning_rate, decay=settings.lr_decay)
    names = model.parameter_names()
    for epoch in range(epochs):
        total = 0.0
        for idx in iterate_minibatches(data.shape[0], settings.batch_size, rng):
            batch = data[idx]
            _, recon, tape = autoencoder_forward(model, batch)
            loss, grad = reconstruction_loss_grad(batch, recon)
            if not math.isfinite(loss):
                raise TrainingError(f"SCD loss became non-finite at epoch {epoch}")
            enc_grads, dec_grads, _ = autoencoder_backward(model, tape, grad)
            try:
                arrays = adam_update(model.parameters(), enc_grads.parameters() + dec_grads.parameters(), state, names)
            except NonFiniteError as e:
                raise TrainingError(f"SCD training aborted at epoch {epoch}: {e}") from e
            model = model.with_parameters(arrays)
            total += loss * len(idx)
        state.end_epoch()
        log.debug("epoch {} mean reconstruction loss {:.6g}", epoch, total / data.shape[0])
    if epochs:
        log.info("SCD trained: d={} latent={} epochs={}", model.input_dim, model.latent_dim, epochs)
    return model
