import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from src.analysis.detectors.evidence_controller import (
    NEGATIVE_CLASS,
    POSITIVE_CLASS,
    UNKNOWN_CLASS,
    IecTrainer,
    PseudoLabel,
    build_classifier,
    concept_uncertainty,
    digamma,
    evidential_batch,
    evidential_ce_losses,
    evidential_forward,
    focal_edl_loss,
    focal_edl_losses,
    predictive_prob,
    pseudo_label,
    pseudo_label_batch,
    resolve_mu_p,
    train_iec,
    uniform_kl_losses,
)
from src.config.settings import Settings
from src.exceptions import InvalidInputError, TrainingError
from src.nn.mlp import backward, forward
from src.nn.optim import AdamState, adam_update

positive = st.floats(min_value=0.05, max_value=1e4, allow_nan=False, allow_infinity=False)


def test_digamma_known_values():
    assert digamma(1.0) == pytest.approx(-0.5772156649015329)
    assert digamma(2.0) == pytest.approx(1 - 0.5772156649015329)
    with pytest.raises(InvalidInputError):
        digamma(0.0)
    with pytest.raises(InvalidInputError):
        digamma(-1.5)


@given(st.lists(positive, min_size=2, max_size=6))
def test_predictive_prob_is_a_distribution(alpha):
    p = predictive_prob(alpha)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p > 0)


def test_predictive_prob_rejects_bad_alpha():
    with pytest.raises(InvalidInputError):
        predictive_prob([1.0])
    with pytest.raises(InvalidInputError):
        predictive_prob([1.0, 0.0])


def test_vacuous_uncertainty_value():
    assert concept_uncertainty([1.0, 1.0]) == pytest.approx(math.log(2) - 0.5)


def test_symmetric_uncertainty_strictly_decreases_with_evidence():
    values = [concept_uncertainty([a, a]) for a in (1, 2, 4, 8, 16, 32, 64)]
    assert all(later < earlier for earlier, later in zip(values, values[1:]))


@given(st.lists(positive, min_size=2, max_size=4))
def test_uncertainty_is_non_negative(alpha):
    assert concept_uncertainty(alpha) >= 0.0


@pytest.mark.parametrize("seed", range(10))
def test_uncertainty_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.8, 10.0, size=2)
    p = rng.dirichlet(alpha, size=400_000)
    mean_p = alpha / alpha.sum()
    entropy_of_mean = -np.sum(special.xlogy(mean_p, mean_p))
    mean_entropy = -np.mean(np.sum(special.xlogy(p, p), axis=1))
    assert concept_uncertainty(alpha) == pytest.approx(entropy_of_mean - mean_entropy, rel=0.05, abs=2e-3)
    assert predictive_prob(alpha) == pytest.approx(p.mean(axis=0), abs=1e-3)


def _numeric_alpha_grad(loss_fn, alpha, eps=1e-6):
    grad = np.zeros_like(alpha)
    for idx in np.ndindex(alpha.shape):
        plus, minus = alpha.copy(), alpha.copy()
        plus[idx] += eps
        minus[idx] -= eps
        grad[idx] = (loss_fn(plus).sum() - loss_fn(minus).sum()) / (2 * eps)
    return grad


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.0, 3.5])
def test_focal_loss_gradient(rng, gamma):
    alpha = rng.uniform(1.0, 20.0, size=(6, 2))
    labels = rng.integers(0, 2, size=6)
    _, grad = focal_edl_losses(alpha, labels, gamma)
    numeric = _numeric_alpha_grad(lambda a: focal_edl_losses(a, labels, gamma)[0], alpha)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)


def test_cross_entropy_and_kl_gradients(rng):
    alpha = rng.uniform(1.0, 20.0, size=(5, 2))
    labels = rng.integers(0, 2, size=5)
    _, ce_grad = evidential_ce_losses(alpha, labels)
    np.testing.assert_allclose(
        ce_grad, _numeric_alpha_grad(lambda a: evidential_ce_losses(a, labels)[0], alpha), rtol=1e-4, atol=1e-8
    )
    _, kl_grad = uniform_kl_losses(alpha)
    numeric = _numeric_alpha_grad(lambda a: uniform_kl_losses(a)[0], alpha)
    np.testing.assert_allclose(kl_grad, numeric, rtol=1e-4, atol=1e-8)


def test_kl_to_uniform_is_zero_at_uniform():
    losses, grad = uniform_kl_losses(np.ones((1, 2)))
    assert losses[0] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(grad, 0.0)


def test_focal_loss_rewards_evidence_for_true_class():
    assert focal_edl_loss([10.0, 1.0], 0, 2.0) < focal_edl_loss([1.0, 10.0], 0, 2.0)
    with pytest.raises(InvalidInputError):
        focal_edl_loss([1.0, 1.0], 2, 2.0)
    with pytest.raises(InvalidInputError):
        focal_edl_loss([1.0, 1.0], 0, -1.0)


def test_pseudo_label_rules():
    assert pseudo_label(0.1, 0.01, mu_p=0.5, mu_e=0.03) is PseudoLabel.NEGATIVE
    assert pseudo_label(0.9, 0.01, mu_p=0.5, mu_e=0.03) is PseudoLabel.POSITIVE
    assert pseudo_label(0.9, 0.05, mu_p=0.5, mu_e=0.03) is PseudoLabel.UNKNOWN
    assert pseudo_label(0.5, 0.03, mu_p=0.5, mu_e=0.03) is PseudoLabel.NEGATIVE
    labels = pseudo_label_batch(np.array([0.1, 0.9, 0.9]), np.array([0.0, 0.0, 0.1]), 0.5, 0.03)
    assert labels.tolist() == [NEGATIVE_CLASS, POSITIVE_CLASS, UNKNOWN_CLASS]
    assert PseudoLabel.UNKNOWN.class_index == UNKNOWN_CLASS


def test_resolve_mu_p_nearest_rank():
    assert resolve_mu_p(np.arange(1, 101), 0.10) == 90.0
    assert resolve_mu_p([3.0], 0.2) == 3.0
    with pytest.raises(InvalidInputError):
        resolve_mu_p([], 0.1)


def test_single_and_batch_opinions_agree(rng):
    clf = build_classifier(3, 8, rng)
    x = rng.standard_normal((4, 3))
    alpha, uncertainty, _ = evidential_batch(clf, x)
    opinion = evidential_forward(clf, x[2])
    np.testing.assert_allclose(opinion.alpha, alpha[2], rtol=1e-12)
    assert opinion.uncertainty == pytest.approx(uncertainty[2], rel=1e-12)
    assert opinion.prob.sum() == pytest.approx(1.0)
    assert np.all(opinion.alpha >= 1.0)


def test_train_iec_requires_both_classes(rng):
    with pytest.raises(TrainingError, match="mu_p_proportion"):
        train_iec(None, rng.standard_normal((20, 3)), np.zeros(20, dtype=int), Settings(iec_epochs=1), rng)


@pytest.mark.parametrize("loss", ["focal", "cross_entropy"])
def test_train_iec_separates_clusters(rng, loss):
    normal = rng.standard_normal((300, 3))
    direction = rng.standard_normal((40, 3))
    anomalies = 6.0 * direction / np.linalg.norm(direction, axis=1, keepdims=True)
    x = np.vstack([normal, anomalies])
    labels = np.r_[np.zeros(300, dtype=int), np.ones(40, dtype=int)]
    settings = Settings(iec_epochs=60, lr_decay=1.0, iec_hidden=16, iec_loss=loss)
    clf = train_iec(None, x, labels, settings, rng)
    alpha, _, _ = evidential_batch(clf, x)
    accuracy = np.mean(np.argmax(alpha, axis=1) == labels)
    assert accuracy > 0.9


def _labelled_batch(rng):
    x = np.vstack([rng.standard_normal((24, 3)), 5.0 + rng.standard_normal((8, 3))])
    return x, np.r_[np.zeros(24, dtype=int), np.ones(8, dtype=int)]


def test_trainer_step_without_ood_weight_follows_the_focal_gradient(rng):
    settings = Settings(gamma=2.0, iec_hidden=8)
    assert settings.iec_ood_weight == 0.0
    x, labels = _labelled_batch(rng)
    clf = build_classifier(3, settings.iec_hidden, rng)

    evidence, tape = forward(clf.net, x)
    losses, grad = focal_edl_losses(evidence + 1.0, labels, settings.gamma)
    grads, _ = backward(clf.net, tape, grad / x.shape[0])
    state = AdamState(lr=settings.learning_rate, decay=settings.lr_decay)
    expected = adam_update(clf.net.parameters(), grads.parameters(), state)

    step_rng = np.random.default_rng(3)
    before = step_rng.bit_generator.state
    trainer = IecTrainer(clf, settings, step_rng)
    loss = trainer.step(x, labels)

    assert loss == pytest.approx(float(losses.mean()), rel=1e-12)
    for got, want in zip(trainer.clf.net.parameters(), expected):
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)
    assert step_rng.bit_generator.state == before


def test_ood_weight_adds_a_separate_term(rng):
    x, labels = _labelled_batch(rng)
    clf = build_classifier(3, 8, rng)
    plain = IecTrainer(clf, Settings(iec_hidden=8), np.random.default_rng(3))
    regularised = IecTrainer(clf, Settings(iec_hidden=8, iec_ood_weight=0.5), np.random.default_rng(3))
    assert regularised.step(x, labels) > plain.step(x, labels)
    changed = [not np.array_equal(a, b) for a, b in zip(plain.clf.net.parameters(), regularised.clf.net.parameters())]
    assert any(changed)
