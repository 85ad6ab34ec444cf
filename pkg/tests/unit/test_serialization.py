import json

import numpy as np
import pytest

from src.exceptions import ModelFormatError
from src.nn.mlp import Activation, forward, init_mlp
from src.nn.serialization import (
    ModelContainer,
    array_from_record,
    array_to_record,
    mlp_from_record,
    mlp_to_record,
    read_container,
    write_container,
)


def test_network_survives_file_exactly(tmp_path, rng):
    net = init_mlp([4, 3, 2], [Activation.RELU, Activation.EXPONENTIAL], rng)
    path = tmp_path / "iec.json"
    write_container(path, ModelContainer(role="iec", networks={"classifier": mlp_to_record(net)}))
    restored = mlp_from_record(read_container(path, "iec").networks["classifier"])
    for a, b in zip(net.parameters(), restored.parameters()):
        assert np.array_equal(a, b)
    assert restored.signature == net.signature
    x = rng.standard_normal((3, 4))
    assert np.array_equal(forward(net, x)[0], forward(restored, x)[0])


def test_array_record_keeps_shape(rng):
    array = rng.standard_normal((2, 3, 4))
    assert np.array_equal(array_from_record(array_to_record(array)), array)


def test_role_mismatch_rejected(tmp_path):
    path = tmp_path / "m.json"
    write_container(path, ModelContainer(role="scd"))
    with pytest.raises(ModelFormatError, match="role"):
        read_container(path, "dsd")


def test_unknown_format_version_rejected(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"format": "driftwatch-model", "format_version": 99, "role": "scd"}))
    with pytest.raises(ModelFormatError, match="format_version"):
        read_container(path, "scd")


def test_layer_size_mismatch_rejected(tmp_path):
    path = tmp_path / "m.json"
    layer = {"n_in": 2, "n_out": 2, "activation": "relu", "weight": [1.0, 2.0, 3.0], "bias": [0.0, 0.0]}
    networks = {"encoder": {"layers": [layer]}}
    payload = {"format": "driftwatch-model", "format_version": 1, "role": "scd", "networks": networks}
    path.write_text(json.dumps(payload))
    with pytest.raises(ModelFormatError):
        read_container(path, "scd")


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ModelFormatError):
        read_container(tmp_path / "absent.json", "scd")
