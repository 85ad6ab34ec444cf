import numpy as np
import pytest

from src.analysis.detectors.dynamic_detector import (
    ParamShift,
    apply_shift,
    build_hypernetwork,
    dynamic_reconstruct,
    dynamic_reconstruct_batch,
    embed_layer,
    generate_shift,
    generate_shift_backward,
    generate_shift_batch,
    select_target_layers,
    train_dsd,
)
from src.analysis.detectors.static_detector import (
    autoencoder_backward,
    autoencoder_forward,
    build_autoencoder,
    reconstruct,
    reconstruct_batch,
    reconstruction_loss_grad,
)
from src.config.settings import Settings
from src.exceptions import DimensionMismatchError, InvalidInputError, StaleTapeError


def _setup(rng, **overrides):
    settings = Settings(hyper_hidden=6, embedding_dim=3, **overrides)
    static = build_autoencoder(5, 2, 3, rng)
    return static, build_hypernetwork(static, settings, rng), settings


def _perturbed(h, rng, scale=0.3):
    return h.with_parameters([a + scale * rng.standard_normal(a.shape) for a in h.parameters()])


@pytest.mark.parametrize("mode", ["instance", "random"])
def test_fresh_hypernetwork_reproduces_static_detector(rng, mode):
    static, h, _ = _setup(rng, embedding_mode=mode)
    x = rng.standard_normal((7, 5))
    _, recon, errors, norms = dynamic_reconstruct_batch(static, h, x)
    _, static_recon, static_errors = reconstruct_batch(static, x)
    assert np.array_equal(recon, static_recon)
    assert np.array_equal(errors, static_errors)
    assert np.all(norms == 0.0)
    assert dynamic_reconstruct(static, h, x[0]).error == reconstruct(static, x[0]).error


def test_target_layer_selection(rng):
    static, _, _ = _setup(rng)
    assert select_target_layers(static, "all") == (0, 1, 2, 3, 4, 5)
    assert select_target_layers(static, "encoder") == (0, 1, 2)
    assert select_target_layers(static, "decoder") == (3, 4, 5)
    with pytest.raises(InvalidInputError):
        select_target_layers(static, "middle")


def test_shift_shapes_follow_weight_shapes(rng):
    static, h, _ = _setup(rng, shift_layers="encoder")
    shift = generate_shift(h, rng.standard_normal(5))
    for index, (layer, delta) in enumerate(zip(static.layers, shift.deltas)):
        if index < 3:
            assert delta.shape == layer.weight.shape
        else:
            assert delta is None
    batch = generate_shift(h, rng.standard_normal((4, 5)))
    assert batch.deltas[0].shape == (4,) + static.layers[0].weight.shape


def test_instance_shifts_differ_but_random_embeddings_do_not(rng):
    static, h, _ = _setup(rng)
    h = _perturbed(h, rng)
    x = rng.standard_normal((2, 5))
    shifts = generate_shift(h, x)
    assert not np.allclose(shifts.deltas[0][0], shifts.deltas[0][1])

    static, h, _ = _setup(rng, embedding_mode="random")
    h = _perturbed(h, rng)
    shifts = generate_shift(h, x)
    np.testing.assert_array_equal(shifts.deltas[0][0], shifts.deltas[0][1])
    np.testing.assert_array_equal(embed_layer(h, x[0], 1), embed_layer(h, x[1], 1))


def test_embed_layer_validates_position_and_dimension(rng):
    _, h, _ = _setup(rng)
    assert embed_layer(h, rng.standard_normal(5), 1).shape == (3,)
    assert embed_layer(h, rng.standard_normal(5), h.n_shifted).shape == (3,)
    for bad in (0, h.n_shifted + 1):
        with pytest.raises(InvalidInputError):
            embed_layer(h, rng.standard_normal(5), bad)
    with pytest.raises(DimensionMismatchError):
        embed_layer(h, rng.standard_normal(4), 1)


@pytest.mark.parametrize("embedding_mode", ["instance", "random"])
def test_embed_layer_counts_shifted_layers_from_one(rng, embedding_mode):
    _, h, _ = _setup(rng, embedding_mode=embedding_mode)
    h = _perturbed(h, rng)
    x = rng.standard_normal((4, 5))
    _, tape = generate_shift_batch(h, x)
    for n in range(1, h.n_shifted + 1):
        np.testing.assert_allclose(embed_layer(h, x, n), tape.embeddings[n - 1])


def test_apply_shift_rejects_wrong_shapes(rng):
    static, _, _ = _setup(rng)
    with pytest.raises(DimensionMismatchError):
        apply_shift(static, ParamShift((None,)))
    deltas = [None] * len(static.layers)
    deltas[1] = np.zeros((2, 2))
    with pytest.raises(DimensionMismatchError):
        apply_shift(static, ParamShift(tuple(deltas)))


def test_dynamic_view_adds_shift_without_touching_static(rng):
    static, h, _ = _setup(rng)
    h = _perturbed(h, rng)
    before = [w.copy() for w in static.parameters()]
    view = apply_shift(static, generate_shift(h, rng.standard_normal(5)))
    for layer, delta, effective in zip(static.layers, view.shift.deltas, view.weights()):
        np.testing.assert_allclose(effective, layer.weight + delta)
    for old, new in zip(before, static.parameters()):
        assert np.array_equal(old, new)


def _dynamic_loss(static, h, x):
    shift, _ = generate_shift_batch(h, x)
    _, recon, _ = autoencoder_forward(static, x, shift.deltas)
    return reconstruction_loss_grad(x, recon)[0]


@pytest.mark.parametrize("mode", ["instance", "random"])
def test_hypernetwork_gradients_match_finite_differences(rng, mode):
    static, h, _ = _setup(rng, embedding_mode=mode)
    h = _perturbed(h, rng)
    x = rng.standard_normal((4, 5))
    shift, shift_tape = generate_shift_batch(h, x)
    _, recon, tape = autoencoder_forward(static, x, shift.deltas)
    _, grad = reconstruction_loss_grad(x, recon)
    enc, dec, _ = autoencoder_backward(static, tape, grad)
    analytic = generate_shift_backward(h, shift_tape, enc.shifts + dec.shifts)

    params = h.parameters()
    assert len(analytic) == len(params)
    eps = 1e-6
    check = np.random.default_rng(0)
    for k in range(len(params)):
        idx = tuple(check.integers(0, s) for s in params[k].shape)
        plus = [p.copy() for p in params]
        minus = [p.copy() for p in params]
        plus[k][idx] += eps
        minus[k][idx] -= eps
        upper = _dynamic_loss(static, h.with_parameters(plus), x)
        lower = _dynamic_loss(static, h.with_parameters(minus), x)
        numeric = (upper - lower) / (2 * eps)
        assert analytic[k][idx] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_shift_tape_cannot_be_replayed(rng):
    static, h, _ = _setup(rng)
    x = rng.standard_normal((2, 5))
    shift, shift_tape = generate_shift_batch(h, x)
    zeros = [None if d is None else np.zeros_like(d) for d in shift.deltas]
    generate_shift_backward(h, shift_tape, zeros)
    with pytest.raises(StaleTapeError):
        generate_shift_backward(h, shift_tape, zeros)


@pytest.mark.parametrize("freeze", [True, False])
def test_training_does_not_increase_dynamic_error(rng, freeze):
    raw = rng.standard_normal((200, 2)) @ rng.standard_normal((2, 5))
    static = build_autoencoder(5, 2, 3, rng)
    settings = Settings(hyper_hidden=8, embedding_dim=3, dsd_epochs=30, lr_decay=1.0, freeze_static=freeze)
    h0 = build_hypernetwork(static, settings, np.random.default_rng(5))
    before = dynamic_reconstruct_batch(static, h0, raw)[2].mean()
    params_before = [p.copy() for p in static.parameters()]
    h, trained_static = train_dsd(static, None, raw, settings, np.random.default_rng(5))
    after = dynamic_reconstruct_batch(trained_static, h, raw)[2].mean()
    assert after < before
    unchanged = all(np.array_equal(a, b) for a, b in zip(params_before, trained_static.parameters()))
    assert unchanged == freeze
