"""Versioned JSON container for network parameters.

Layout is documented in documentation/MODEL_FORMAT.md. Floats are written with
Python's shortest round-trip representation, so float64 values survive exactly.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from ..exceptions import ModelFormatError
from .mlp import Activation, DenseLayer, MlpParams

FORMAT_NAME = "driftwatch-model"
FORMAT_VERSION = 1

Role = Literal["scd", "iec", "dsd"]


class ArrayRecord(BaseModel):
    """Row-major float64 array."""

    shape: List[int]
    data: List[float]

    @model_validator(mode="after")
    def _check_size(self) -> "ArrayRecord":
        if int(np.prod(self.shape, dtype=np.int64)) != len(self.data):
            raise ValueError(f"array of shape {self.shape} cannot hold {len(self.data)} values")
        return self


class LayerRecord(BaseModel):
    n_in: int = Field(ge=1)
    n_out: int = Field(ge=1)
    activation: Activation
    weight: List[float]
    bias: List[float]

    @model_validator(mode="after")
    def _check_size(self) -> "LayerRecord":
        if len(self.weight) != self.n_in * self.n_out or len(self.bias) != self.n_out:
            raise ValueError(
                f"layer {self.n_in}x{self.n_out} has {len(self.weight)} weights and {len(self.bias)} biases"
            )
        return self


class NetworkRecord(BaseModel):
    layers: List[LayerRecord]


class ModelContainer(BaseModel):
    format: Literal["driftwatch-model"] = FORMAT_NAME
    format_version: int = FORMAT_VERSION
    role: Role
    networks: Dict[str, NetworkRecord] = Field(default_factory=dict)
    arrays: Dict[str, ArrayRecord] = Field(default_factory=dict)
    extras: Dict[str, Any] = Field(default_factory=dict)


def array_to_record(array: np.ndarray) -> ArrayRecord:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    return ArrayRecord(shape=list(arr.shape), data=arr.ravel().tolist())


def array_from_record(record: ArrayRecord) -> np.ndarray:
    return np.array(record.data, dtype=np.float64).reshape(record.shape)


def mlp_to_record(net: MlpParams) -> NetworkRecord:
    return NetworkRecord(
        layers=[
            LayerRecord(
                n_in=layer.n_in,
                n_out=layer.n_out,
                activation=layer.activation,
                weight=layer.weight.ravel().tolist(),
                bias=layer.bias.tolist(),
            )
            for layer in net.layers
        ]
    )


def mlp_from_record(record: NetworkRecord) -> MlpParams:
    layers = [
        DenseLayer(
            np.array(layer.weight, dtype=np.float64).reshape(layer.n_in, layer.n_out),
            np.array(layer.bias, dtype=np.float64),
            layer.activation,
        )
        for layer in record.layers
    ]
    return MlpParams(layers)


def write_container(path: Path, container: ModelContainer) -> None:
    """Write a container as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(container.model_dump(mode="json"), allow_nan=False), encoding="utf-8")


def read_container(path: Path, role: Role) -> ModelContainer:
    """Read and validate a container.

    Args:
        path: JSON file written by :func:`write_container`
        role: Expected role tag

    Returns:
        Parsed container

    Raises:
        ModelFormatError: On unreadable files, version or role mismatch
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"Cannot read model file {path}: {e}") from e
    if payload.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"{path} is not a {FORMAT_NAME} container")
    if payload.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path} has format_version {payload.get('format_version')}, expected {FORMAT_VERSION}")
    try:
        container = ModelContainer.model_validate(payload)
    except ValidationError as e:
        raise ModelFormatError(f"Malformed model file {path}: {e}") from e
    if container.role != role:
        raise ModelFormatError(f"{path} holds role '{container.role}', expected '{role}'")
    return container
