import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.analysis.detectors.standardizer import Standardizer
from src.analysis.detectors.static_detector import (
    autoencoder_backward,
    autoencoder_forward,
    build_autoencoder,
    choose_latent_dim,
    layer_schedule,
    recon_error,
    reconstruct,
    reconstruct_batch,
    reconstruction_loss_grad,
    train_scd,
)
from src.config.settings import Settings
from src.exceptions import DimensionMismatchError, InvalidInputError

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


def test_recon_error_examples():
    assert recon_error([1, 2], [1, 2]) == 0.0
    assert recon_error([0, 0], [1, 1]) == 1.0
    with pytest.raises(DimensionMismatchError):
        recon_error([1, 2, 3], [1, 2])


@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
def test_recon_error_is_symmetric_and_non_negative(x, y):
    assert recon_error(x, y) == pytest.approx(recon_error(y, x))
    assert recon_error(x, y) >= 0.0


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite), st.floats(0.1, 10.0))
def test_recon_error_scales_quadratically(x, y, c):
    assert recon_error(c * x, c * y) == pytest.approx(c * c * recon_error(x, y), rel=1e-9, abs=1e-9)


def test_layer_schedule_is_geometric_and_keeps_bottleneck_narrowest():
    assert layer_schedule(32, 4, 3) == [32, 16, 8, 4]
    widths = layer_schedule(3, 2, 3)
    assert widths[0] == 3 and widths[-1] == 2
    assert all(w > 2 for w in widths[1:-1])


def test_build_autoencoder_rejects_one_dimensional_input(rng):
    with pytest.raises(InvalidInputError, match="shingle"):
        build_autoencoder(1, 1, 3, rng)


def test_choose_latent_dim_on_rank_two_data(rng):
    basis = rng.standard_normal((2, 6))
    data = rng.standard_normal((300, 2)) @ basis
    assert choose_latent_dim(data, 1.0) == 2


def test_choose_latent_dim_clamps_and_handles_constant_data(rng):
    assert choose_latent_dim(rng.standard_normal((200, 3)), 1.0) == 2
    assert choose_latent_dim(np.ones((10, 4)), 0.7) == 1
    with pytest.raises(InvalidInputError):
        choose_latent_dim(np.ones((1, 4)), 0.7)


def test_single_reconstruct_matches_batch(rng):
    model = build_autoencoder(5, 2, 3, rng)
    x = rng.standard_normal((4, 5))
    _, recon, errors = reconstruct_batch(model, x)
    for i in range(4):
        result = reconstruct(model, x[i])
        np.testing.assert_allclose(result.reconstruction, recon[i], rtol=1e-12, atol=1e-12)
        assert result.error == pytest.approx(errors[i], rel=1e-12)


def test_reconstruction_gradient_matches_finite_differences(rng):
    model = build_autoencoder(4, 2, 2, rng)
    x = rng.standard_normal((3, 4))
    _, recon, tape = autoencoder_forward(model, x)
    _, grad = reconstruction_loss_grad(x, recon)
    enc_grads, _, _ = autoencoder_backward(model, tape, grad)
    weight = model.encoder.layers[0].weight
    eps = 1e-6
    for idx in [(0, 0), (1, 2), (3, 1)]:
        old = weight[idx]
        weight[idx] = old + eps
        plus = reconstruction_loss_grad(x, autoencoder_forward(model, x)[1])[0]
        weight[idx] = old - eps
        minus = reconstruction_loss_grad(x, autoencoder_forward(model, x)[1])[0]
        weight[idx] = old
        numeric = (plus - minus) / (2 * eps)
        assert enc_grads.weights[0][idx] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


@hyp_settings(deadline=None, max_examples=10)
@given(st.integers(0, 2**16))
def test_training_lowers_reconstruction_error(seed):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((200, 2)) @ rng.standard_normal((2, 5)) + 0.05 * rng.standard_normal((200, 5))
    data = Standardizer.fit(raw).transform(raw)
    settings = Settings(scd_epochs=40, lr_decay=1.0, batch_size=32)
    untrained = build_autoencoder(5, choose_latent_dim(data, 0.7), 3, np.random.default_rng(seed))
    before = reconstruct_batch(untrained, data)[2].mean()
    model = train_scd(data, settings, np.random.default_rng(seed))
    assert reconstruct_batch(model, data)[2].mean() < before


def test_training_is_deterministic_under_seed(rng):
    data = rng.standard_normal((100, 4))
    settings = Settings(scd_epochs=5)
    a = train_scd(data, settings, np.random.default_rng(3))
    b = train_scd(data, settings, np.random.default_rng(3))
    for x, y in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x, y)


def test_standardizer_handles_constant_columns(rng):
    data = np.column_stack([rng.standard_normal(50), np.full(50, 3.0)])
    std = Standardizer.fit(data)
    out = std.transform(data)
    assert np.all(np.isfinite(out))
    assert np.allclose(out[:, 1], 0.0)
    restored = Standardizer.from_dict(std.to_dict())
    assert np.array_equal(restored.transform(data), out)
