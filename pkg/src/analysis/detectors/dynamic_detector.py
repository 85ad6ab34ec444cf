"""Dynamic shift-aware detector.

A hypernetwork maps each instance to additive weight shifts for the static
autoencoder. For every shifted layer ``n`` with weight shape ``(N_in, N_out)``:

    e   = head_n(shared(x))                    embedding, length d_e
    col = W1 @ e + b1                          length N_in
    K   = outer(col, w2) + b2 + b_bar          shape (N_in, N_out)

``w2``, ``b2`` and ``b_bar`` start at zero so a fresh hypernetwork reproduces the
static detector exactly. Shifted layers are numbered with the autoencoder's layer
indices (encoder first, 0-based). Biases are never shifted.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ...config.settings import Settings
from ...exceptions import DimensionMismatchError, InvalidInputError, NonFiniteError, StaleTapeError, TrainingError
from ...nn.mlp import Activation, MlpParams, Tape, backward, forward, init_mlp
from ...nn.optim import AdamState, adam_update
from .static_detector import (
    Autoencoder,
    ReconResult,
    autoencoder_backward,
    autoencoder_forward,
    iterate_minibatches,
    recon_error,
    recon_errors,
    reconstruction_loss_grad,
)

EMBEDDING_MODES = ("instance", "random")


@dataclass(frozen=True)
class ShiftGenerator:
    """Generator weights for one shifted layer."""

    w1: np.ndarray  # (N_in, d_e)
    b1: np.ndarray  # (N_in,)
    w2: np.ndarray  # (N_out,)
    b2: np.ndarray  # (N_in, N_out)
    b_bar: np.ndarray  # (N_in, N_out)

    def __post_init__(self):
        n_in, n_out = self.b_bar.shape
        expected = {"w1": (n_in, self.w1.shape[1]), "b1": (n_in,), "w2": (n_out,), "b2": (n_in, n_out)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatchError(shape, getattr(self, name).shape, what=f"generator {name}")

    @property
    def target_shape(self) -> Tuple[int, int]:
        return self.b_bar.shape

    def arrays(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.b_bar]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "ShiftGenerator":
        return cls(*[np.array(a, dtype=np.float64) for a in arrays])


@dataclass(frozen=True)
class Hypernetwork:
    """Shared encoder, per-layer embedding heads and per-layer shift generators.

    In ``random`` embedding mode the per-layer embeddings are fixed random vectors,
    so the generated shift no longer depends on the instance.
    """

    shared: MlpParams
    heads: Tuple[MlpParams, ...]
    generators: Tuple[ShiftGenerator, ...]
    target_layers: Tuple[int, ...]
    n_layers: int
    embedding_mode: str = "instance"
    embeddings: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (len(self.heads) == len(self.generators) == len(self.target_layers)):
            raise DimensionMismatchError(len(self.target_layers), len(self.generators), what="hypernetwork heads")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise InvalidInputError(f"embedding_mode must be one of {EMBEDDING_MODES}")
        if self.embedding_mode == "random" and (
            self.embeddings is None or self.embeddings.shape != (len(self.target_layers), self.embedding_dim)
        ):
            raise DimensionMismatchError((len(self.target_layers), self.embedding_dim), None, what="random embeddings")

    @property
    def input_dim(self) -> int:
        return self.shared.input_dim

    @property
    def embedding_dim(self) -> int:
        return self.heads[0].output_dim

    @property
    def n_shifted(self) -> int:
        return len(self.target_layers)

    def parameters(self) -> List[np.ndarray]:
        """Trainable arrays; the shared encoder and heads are excluded in random mode."""
        arrays: List[np.ndarray] = []
        if self.embedding_mode == "instance":
            arrays.extend(self.shared.parameters())
            for head in self.heads:
                arrays.extend(head.parameters())
        for gen in self.generators:
            arrays.extend(gen.arrays())
        return arrays

    def parameter_names(self) -> List[str]:
        names: List[str] = []
        if self.embedding_mode == "instance":
            names.extend(self.shared.parameter_names("shared."))
            for n, head in enumerate(self.heads):
                names.extend(head.parameter_names(f"head{n}."))
        for n in range(self.n_shifted):
            names.extend(f"gen{n}.{part}" for part in ("w1", "b1", "w2", "b2", "b_bar"))
        return names

    def with_parameters(self, arrays: Sequence[np.ndarray]) -> "Hypernetwork":
        arrays = list(arrays)
        shared, heads = self.shared, self.heads
        if self.embedding_mode == "instance":
            size = len(self.shared.parameters())
            shared, arrays = self.shared.with_parameters(arrays[:size]), arrays[size:]
            new_heads = []
            for head in self.heads:
                size = len(head.parameters())
                new_heads.append(head.with_parameters(arrays[:size]))
                arrays = arrays[size:]
            heads = tuple(new_heads)
        generators = tuple(ShiftGenerator.from_arrays(arrays[5 * n : 5 * n + 5]) for n in range(self.n_shifted))
        return Hypernetwork(
            shared, heads, generators, self.target_layers, self.n_layers, self.embedding_mode, self.embeddings
        )


@dataclass(frozen=True)
class ParamShift:
    """Weight deltas aligned with the autoencoder's layers (``None`` = unshifted).

    Each delta is ``(N_in, N_out)`` for a single instance or ``(B, N_in, N_out)`` for a batch.
    """

    deltas: Tuple[Optional[np.ndarray], ...]

    def norms(self) -> np.ndarray:
        """Frobenius norm of the whole shift, per instance for batched shifts."""
        total = None
        for delta in self.deltas:
            if delta is None:
                continue
            sq = np.einsum("...io,...io->...", delta, delta)
            total = sq if total is None else total + sq
        return np.sqrt(total) if total is not None else np.zeros(())


@dataclass(frozen=True)
class DynamicView:
    """Static detector paired with an instance's shift. The static weights are never written."""

    static: Autoencoder
    shift: ParamShift

    def weights(self) -> List[np.ndarray]:
        """Effective weights ``W + dW`` of every layer (single-instance shifts only)."""
        effective = []
        for layer, delta in zip(self.static.layers, self.shift.deltas):
            effective.append(layer.weight if delta is None else layer.weight + delta)
        return effective


@dataclass
class ShiftTape:
    """Intermediates of a batched shift generation, consumed by :func:`generate_shift_backward`."""

    shared: Optional[Tape]
    heads: List[Optional[Tape]]
    embeddings: List[np.ndarray]
    columns: List[np.ndarray]
    consumed: bool = field(default=False)


def select_target_layers(static: Autoencoder, shift_layers: str) -> Tuple[int, ...]:
    split, total = static.n_encoder_layers, len(static.layers)
    if shift_layers == "all":
        return tuple(range(total))
    if shift_layers == "encoder":
        return tuple(range(split))
    if shift_layers == "decoder":
        return tuple(range(split, total))
    raise InvalidInputError(f"shift_layers must be all, encoder or decoder, got '{shift_layers}'")


def build_hypernetwork(static: Autoencoder, settings: Settings, rng: np.random.Generator) -> Hypernetwork:
    """Fresh hypernetwork whose generated shifts are exactly zero."""
    targets = select_target_layers(static, settings.shift_layers)
    hidden, d_e = settings.hyper_hidden, settings.embedding_dim
    shared = init_mlp([static.input_dim, hidden, hidden], [Activation.RELU, Activation.RELU], rng)
    heads, generators = [], []
    for index in targets:
        n_in, n_out = static.layers[index].weight.shape
        heads.append(init_mlp([hidden, d_e], [Activation.IDENTITY], rng))
        limit = math.sqrt(6.0 / (n_in + d_e))
        generators.append(
            ShiftGenerator(
                w1=rng.uniform(-limit, limit, size=(n_in, d_e)),
                b1=np.zeros(n_in),
                w2=np.zeros(n_out),
                b2=np.zeros((n_in, n_out)),
                b_bar=np.zeros((n_in, n_out)),
            )
        )
    embeddings = rng.standard_normal((len(targets), d_e)) if settings.embedding_mode == "random" else None
    return Hypernetwork(
        shared=shared,
        heads=tuple(heads),
        generators=tuple(generators),
        target_layers=targets,
        n_layers=len(static.layers),
        embedding_mode=settings.embedding_mode,
        embeddings=embeddings,
    )


def _embed_all(h: Hypernetwork, x: np.ndarray) -> Tuple[List[np.ndarray], Optional[Tape], List[Optional[Tape]]]:
    if h.embedding_mode == "random":
        return [np.broadcast_to(e, (x.shape[0], e.shape[0])) for e in h.embeddings], None, [None] * h.n_shifted
    code, shared_tape = forward(h.shared, x)
    embeddings, head_tapes = [], []
    for head in h.heads:
        e, tape = forward(head, code)
        embeddings.append(e)
        head_tapes.append(tape)
    return embeddings, shared_tape, head_tapes


def _as_instances(h: Hypernetwork, x) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != h.input_dim:
        raise DimensionMismatchError(h.input_dim, arr.shape[-1], layer_index=0, what="hypernetwork input")
    return arr, single


def embed_layer(h: Hypernetwork, x, n: int) -> np.ndarray:
    """Embedding of instance ``x`` for the ``n``-th shifted layer, counting from 1.

    Position ``n`` refers to ``h.target_layers[n - 1]``.

    Raises:
        InvalidInputError: If ``n`` is outside ``[1, h.n_shifted]``
    """
    if not 1 <= n <= h.n_shifted:
        raise InvalidInputError(f"layer position must be in [1, {h.n_shifted}], got {n}")
    arr, single = _as_instances(h, x)
    if h.embedding_mode == "random":
        e = np.broadcast_to(h.embeddings[n - 1], (arr.shape[0], h.embedding_dim)).copy()
    else:
        code, _ = forward(h.shared, arr)
        e, _ = forward(h.heads[n - 1], code)
    return e[0] if single else e


def generate_shift_batch(h: Hypernetwork, x: np.ndarray) -> Tuple[ParamShift, ShiftTape]:
    """Per-instance shifts ``(B, N_in, N_out)`` for a batch, plus the generation tape."""
    arr, _ = _as_instances(h, x)
    embeddings, shared_tape, head_tapes = _embed_all(h, arr)
    deltas: List[Optional[np.ndarray]] = [None] * h.n_layers
    columns = []
    for position, (gen, e) in enumerate(zip(h.generators, embeddings)):
        col = e @ gen.w1.T + gen.b1
        k = np.einsum("bi,o->bio", col, gen.w2) + (gen.b2 + gen.b_bar)
        if not np.all(np.isfinite(k)):
            raise NonFiniteError("generated weight shift", layer_index=h.target_layers[position])
        deltas[h.target_layers[position]] = k
        columns.append(col)
    return ParamShift(tuple(deltas)), ShiftTape(shared_tape, head_tapes, list(embeddings), columns)


def generate_shift(h: Hypernetwork, x) -> ParamShift:
    """Shift for one instance (``(N_in, N_out)`` per layer) or a batch (``(B, N_in, N_out)``).

    Raises:
        NonFiniteError: If any generated value is NaN/Inf (names the layer)
    """
    arr, single = _as_instances(h, x)
    shift, _ = generate_shift_batch(h, arr)
    if single:
        return ParamShift(tuple(None if d is None else d[0] for d in shift.deltas))
    return shift


def generate_shift_backward(
    h: Hypernetwork, tape: ShiftTape, shift_grads: Sequence[Optional[np.ndarray]]
) -> List[np.ndarray]:
    """Gradients of all trainable hypernetwork arrays from per-layer shift gradients.

    Args:
        h: Hypernetwork that produced ``tape``
        tape: Tape from :func:`generate_shift_batch`
        shift_grads: dLoss/dK per autoencoder layer, ``(B, N_in, N_out)``

    Returns:
        Gradients aligned with :meth:`Hypernetwork.parameters`
    """
    if tape.consumed:
        raise StaleTapeError("Shift tape was already replayed")
    tape.consumed = True
    gen_grads: List[np.ndarray] = []
    embed_grads = []
    for position, gen in enumerate(h.generators):
        g_k = shift_grads[h.target_layers[position]]
        col, e = tape.columns[position], tape.embeddings[position]
        g_bias = g_k.sum(axis=0)
        g_w2 = np.einsum("bi,bio->o", col, g_k)
        g_col = np.einsum("bio,o->bi", g_k, gen.w2)
        gen_grads.extend([g_col.T @ e, g_col.sum(axis=0), g_w2, g_bias, g_bias.copy()])
        embed_grads.append(g_col @ gen.w1)

    if h.embedding_mode == "random":
        return gen_grads
    head_grads: List[np.ndarray] = []
    g_code = None
    for head, head_tape, g_e in zip(h.heads, tape.heads, embed_grads):
        grads, g_in = backward(head, head_tape, g_e)
        head_grads.extend(grads.parameters())
        g_code = g_in if g_code is None else g_code + g_in
    shared_grads, _ = backward(h.shared, tape.shared, g_code)
    return shared_grads.parameters() + head_grads + gen_grads


def apply_shift(static: Autoencoder, shift: ParamShift) -> DynamicView:
    """Pair the static detector with a shift after validating shapes.

    Raises:
        DimensionMismatchError: If a delta does not match its layer's weight shape
    """
    if len(shift.deltas) != len(static.layers):
        raise DimensionMismatchError(len(static.layers), len(shift.deltas), what="shift list")
    for index, (layer, delta) in enumerate(zip(static.layers, shift.deltas)):
        if delta is not None and delta.shape[-2:] != layer.weight.shape:
            raise DimensionMismatchError(layer.weight.shape, delta.shape, layer_index=index, what="weight shift")
    return DynamicView(static, shift)


def dynamic_reconstruct(static: Autoencoder, h: Hypernetwork, x) -> ReconResult:
    """Reconstruct one instance with instance-conditioned weights."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"dynamic_reconstruct takes one instance, got shape {x.shape}")
    view = apply_shift(static, generate_shift(h, x))
    latent, recon, _ = autoencoder_forward(view.static, x, view.shift.deltas)
    return ReconResult(latent=latent, reconstruction=recon, error=recon_error(x, recon))


def dynamic_reconstruct_batch(
    static: Autoencoder, h: Hypernetwork, x: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batch dynamic reconstruction.

    Returns:
        Latent codes, reconstructions, errors ``(B,)`` and shift norms ``(B,)``
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    shift, _ = generate_shift_batch(h, x)
    latent, recon, _ = autoencoder_forward(static, x, shift.deltas)
    return latent, recon, recon_errors(x, recon), shift.norms()


class DsdTrainer:
    """Adam loop minimising the dynamic reconstruction error.

    With ``freeze_static`` off, the static detector is updated jointly at a reduced
    learning rate.
    """

    def __init__(self, static: Autoencoder, h: Hypernetwork, settings: Settings):
        self.static = static
        self.h = h
        self.freeze_static = settings.freeze_static
        self.state = AdamState(lr=settings.learning_rate, decay=settings.lr_decay)
        static_lr = settings.learning_rate * settings.joint_static_lr_scale
        self.static_state = AdamState(lr=static_lr, decay=settings.lr_decay)
        self.names = h.parameter_names()

    def step(self, x: np.ndarray) -> float:
        shift, shift_tape = generate_shift_batch(self.h, x)
        _, recon, tape = autoencoder_forward(self.static, x, shift.deltas)
        loss, grad = reconstruction_loss_grad(x, recon)
        if not math.isfinite(loss):
            raise TrainingError("DSD loss became non-finite")
        enc_grads, dec_grads, _ = autoencoder_backward(self.static, tape, grad)
        hyper_grads = generate_shift_backward(self.h, shift_tape, enc_grads.shifts + dec_grads.shifts)
        try:
            arrays = adam_update(self.h.parameters(), hyper_grads, self.state, self.names)
            if not self.freeze_static:
                static_arrays = adam_update(
                    self.static.parameters(),
                    enc_grads.parameters() + dec_grads.parameters(),
                    self.static_state,
                    self.static.parameter_names(),
                )
                self.static = self.static.with_parameters(static_arrays)
        except NonFiniteError as e:
            raise TrainingError(f"DSD training aborted: {e}") from e
        self.h = self.h.with_parameters(arrays)
        return loss

    def end_epoch(self) -> None:
        self.state.end_epoch()
        self.static_state.end_epoch()


def train_dsd(
    static: Autoencoder,
    h: Optional[Hypernetwork],
    data: np.ndarray,
    settings: Settings,
    rng: np.random.Generator,
    epochs: Optional[int] = None,
) -> Tuple[Hypernetwork, Autoencoder]:
    """Train the hypernetwork on standardized instances.

    Args:
        static: Static detector being shifted
        h: Hypernetwork to train; a fresh zero-shift one is built when ``None``
        data: Training matrix ``(n, d)``
        settings: Hyperparameters (``freeze_static`` selects joint training)
        rng: Seeded generator
        epochs: Override ``settings.dsd_epochs``

    Returns:
        Trained hypernetwork and the (possibly updated) static detector

    Raises:
        TrainingError: On empty data or a non-finite loss
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise TrainingError(f"train_dsd needs at least one instance, got shape {data.shape}")
    if h is None:
        h = build_hypernetwork(static, settings, rng)
    epochs = settings.dsd_epochs if epochs is None else epochs
    trainer = DsdTrainer(static, h, settings)
    log = logger.bind(component="dsd")
    for epoch in range(epochs):
        total = 0.0
        for idx in iterate_minibatches(data.shape[0], settings.batch_size, rng):
            total += trainer.step(data[idx]) * len(idx)
        trainer.end_epoch()
        log.debug("epoch {} mean dynamic loss {:.6g}", epoch, total / data.shape[0])
    if epochs:
        log.info("DSD trained: {} shifted layers, {} epochs", h.n_shifted, epochs)
    return trainer.h, trainer.static
