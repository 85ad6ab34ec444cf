"""Dense network substrate: layer parameters, forward and reverse passes.

A forward pass records a :class:`Tape`; :func:`backward` replays it once to produce
one gradient per weight and bias, plus gradients for any additive weight shift that
was applied during the forward pass (the shift-application node).

Shapes: a single instance is a 1-D array ``(d,)``; a batch is ``(B, d)``. A weight
shift is either shared ``(N_in, N_out)`` or per instance ``(B, N_in, N_out)``.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import DimensionMismatchError, InvalidInputError, NonFiniteError, StaleTapeError

# Logits above this are clamped before exponentiation.
EXP_LOGIT_CAP = 30.0


class Activation(str, Enum):
    """Supported element-wise activations."""

    RELU = "relu"
    IDENTITY = "identity"
    EXPONENTIAL = "exponential"


@dataclass
class DenseLayer:
    """One affine layer ``h @ weight + bias`` followed by an activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, order="C")
        self.bias = np.array(self.bias, dtype=np.float64)
        self.activation = Activation(self.activation)
        if self.weight.ndim != 2:
            raise DimensionMismatchError("2-D weight", self.weight.shape, what="weight")
        if self.bias.shape != (self.weight.shape[1],):
            raise DimensionMismatchError((self.weight.shape[1],), self.bias.shape, what="bias")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise NonFiniteError("layer parameters")

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpParams:
    """Ordered stack of dense layers with chained dimensions.

    Each instance carries an identity ``token``; tapes recorded on it are only
    accepted by :func:`backward` for the same instance, never for a copy.
    """

    layers: List[DenseLayer]
    token: object = field(default_factory=object, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("An MLP needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].n_out != self.layers[i].n_in:
                raise DimensionMismatchError(
                    self.layers[i - 1].n_out, self.layers[i].n_in, layer_index=i, what="layer input"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def signature(self) -> Tuple[Tuple[int, int, str], ...]:
        return tuple((layer.n_in, layer.n_out, layer.activation.value) for layer in self.layers)

    def parameters(self) -> List[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        arrays = []
        for layer in self.layers:
            arrays.extend([layer.weight, layer.bias])
        return arrays

    def parameter_names(self, prefix: str = "") -> List[str]:
        names = []
        for i in range(len(self.layers)):
            names.extend([f"{prefix}layer{i}.weight", f"{prefix}layer{i}.bias"])
        return names

    def with_parameters(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        """Same architecture with new parameter values."""
        if len(arrays) != 2 * len(self.layers):
            raise DimensionMismatchError(2 * len(self.layers), len(arrays), what="parameter list")
        layers = []
        for i, layer in enumerate(self.layers):
            weight, bias = arrays[2 * i], arrays[2 * i + 1]
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise DimensionMismatchError(layer.weight.shape, weight.shape, layer_index=i, what="weight")
            layers.append(DenseLayer(weight, bias, layer.activation))
        return MlpParams(layers)

    def copy(self) -> "MlpParams":
        return MlpParams(
            [DenseLayer(layer.weight.copy(), layer.bias.copy(), layer.activation) for layer in self.layers]
        )


@dataclass
class Gradients:
    """Gradients produced by one backward pass."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    shifts: List[Optional[np.ndarray]]

    def parameters(self) -> List[np.ndarray]:
        """Flat list aligned with :meth:`MlpParams.parameters`."""
        arrays = []
        for weight, bias in zip(self.weights, self.biases):
            arrays.extend([weight, bias])
        return arrays


@dataclass
class Tape:
    """Primal values recorded by :func:`forward` for one backward replay."""

    owner: object
    signature: tuple
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    outputs: List[np.ndarray]
    shifts: List[Optional[np.ndarray]]
    single: bool
    clamped: int = 0
    consumed: bool = field(default=False)


def init_mlp(dims: Sequence[int], activations: Sequence[Activation], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    Args:
        dims: Layer widths ``[N_in, h1, ..., N_out]``
        activations: One activation per layer (``len(dims) - 1`` entries)
        rng: Seeded generator

    Returns:
        Freshly initialised network
    """
    if len(dims) < 2 or len(activations) != len(dims) - 1:
        raise InvalidInputError(f"Need len(activations) == len(dims) - 1, got dims={list(dims)}")
    layers = []
    for n_in, n_out, activation in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weight = rng.uniform(-limit, limit, size=(n_in, n_out))
        layers.append(DenseLayer(weight, np.zeros(n_out), activation))
    return MlpParams(layers)


def zeros_like_mlp(net: MlpParams) -> MlpParams:
    return MlpParams(
        [DenseLayer(np.zeros_like(layer.weight), np.zeros_like(layer.bias), layer.activation) for layer in net.layers]
    )


def _as_batch(x, expected: int, layer_index: int = 0) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != expected:
        actual = arr.shape[-1] if arr.ndim >= 1 else arr.shape
        raise DimensionMismatchError(expected, actual, layer_index=layer_index)
    return arr, single


def _check_shifts(net: MlpParams, shifts, batch: int) -> List[Optional[np.ndarray]]:
    if shifts is None:
        return [None] * len(net.layers)
    if len(shifts) != len(net.layers):
        raise DimensionMismatchError(len(net.layers), len(shifts), what="shift list")
    checked: List[Optional[np.ndarray]] = []
    for i, (layer, shift) in enumerate(zip(net.layers, shifts)):
        if shift is None:
            checked.append(None)
            continue
        shift = np.asarray(shift, dtype=np.float64)
        if shift.ndim == 2 and shift.shape == layer.weight.shape:
            checked.append(shift)
        elif shift.ndim == 3 and shift.shape == (batch,) + layer.weight.shape:
            checked.append(shift)
        else:
            raise DimensionMismatchError(layer.weight.shape, shift.shape, layer_index=i, what="weight shift")
    return checked


def forward(net: MlpParams, x, shifts: Optional[Sequence[Optional[np.ndarray]]] = None) -> Tuple[np.ndarray, Tape]:
    """Run the network and record a tape.

    Args:
        net: Network parameters
        x: Instance ``(d,)`` or batch ``(B, d)``
        shifts: Optional additive weight shift per layer (``None`` entries leave a layer unshifted)

    Returns:
        Output with the same leading shape as ``x`` and the tape for :func:`backward`

    Raises:
        DimensionMismatchError: If ``x`` or a shift does not fit the named layer
    """
    h, single = _as_batch(x, net.input_dim)
    checked = _check_shifts(net, shifts, h.shape[0])
    inputs, pre_activations, outputs = [], [], []
    clamped = 0
    for layer, shift in zip(net.layers, checked):
        inputs.append(h)
        if shift is None:
            z = h @ layer.weight + layer.bias
        elif shift.ndim == 2:
            z = h @ (layer.weight + shift) + layer.bias
        else:
            z = h @ layer.weight + np.einsum("bi,bio->bo", h, shift) + layer.bias
        pre_activations.append(z)
        if layer.activation is Activation.RELU:
            h = np.maximum(z, 0.0)
        elif layer.activation is Activation.EXPONENTIAL:
            over = z > EXP_LOGIT_CAP
            clamped += int(over.sum())
            h = np.exp(np.minimum(z, EXP_LOGIT_CAP))
        else:
            h = z
        outputs.append(h)
    tape = Tape(
        owner=net.token,
        signature=net.signature,
        inputs=inputs,
        pre_activations=pre_activations,
        outputs=outputs,
        shifts=checked,
        single=single,
        clamped=clamped,
    )
    return (h[0] if single else h), tape


def backward(net: MlpParams, tape: Tape, out_grad) -> Tuple[Gradients, np.ndarray]:
    """Replay a tape in reverse.

    Args:
        net: The network the tape was recorded on
        tape: Tape from :func:`forward`; consumed by this call
        out_grad: dLoss/dOutput, same shape as the forward output

    Returns:
        Parameter (and shift) gradients, and dLoss/dInput

    Raises:
        StaleTapeError: If the tape belongs to another network or was already replayed
    """
    if tape.consumed:
        raise StaleTapeError("Tape was already replayed")
    if tape.owner is not net.token or tape.signature != net.signature:
        raise StaleTapeError("Tape was recorded on a different network")
    g, _ = _as_batch(out_grad, net.output_dim, layer_index=len(net.layers) - 1)
    if g.shape[0] != tape.inputs[0].shape[0]:
        raise DimensionMismatchError(tape.inputs[0].shape[0], g.shape[0], what="gradient batch")
    tape.consumed = True

    n = len(net.layers)
    weight_grads: List[np.ndarray] = [None] * n  # type: ignore[list-item]
    bias_grads: List[np.ndarray] = [None] * n  # type: ignore[list-item]
    shift_grads: List[Optional[np.ndarray]] = [None] * n
    for i in range(n - 1, -1, -1):
        layer = net.layers[i]
        z = tape.pre_activations[i]
        if layer.activation is Activation.RELU:
            dz = g * (z > 0.0)
        elif layer.activation is Activation.EXPONENTIAL:
            dz = g * tape.outputs[i] * (z <= EXP_LOGIT_CAP)
        else:
            dz = g
        h = tape.inputs[i]
        weight_grads[i] = h.T @ dz
        bias_grads[i] = dz.sum(axis=0)
        shift = tape.shifts[i]
        if shift is None:
            g = dz @ layer.weight.T
        elif shift.ndim == 2:
            shift_grads[i] = weight_grads[i].copy()
            g = dz @ (layer.weight + shift).T
        else:
            shift_grads[i] = np.einsum("bi,bo->bio", h, dz)
            g = dz @ layer.weight.T + np.einsum("bo,bio->bi", dz, shift)
    input_grad = g[0] if tape.single else g
    return Gradients(weight_grads, bias_grads, shift_grads), input_grad
