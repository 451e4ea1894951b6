import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mufia.losses import (
    DegenerateVectorError,
    adversarial_loss,
    cosine_similarity,
    cross_entropy_adversarial_loss,
    similarity_loss,
    total_loss,
)


def numeric_grad(f, x, h=1e-4):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_cosine_examples():
    assert cosine_similarity(np.array([3.0, 4.0]), np.array([3.0, 4.0]))[0] == 1.0
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0]))[0] == 0.0
    value, grad = cosine_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    assert value == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
    b = np.array([1.0, 0.0])
    num = numeric_grad(lambda a: cosine_similarity(a, b)[0], np.array([1.0, 1.0]))
    assert rel_err(grad, num) < 1e-6


def test_cosine_identical_is_exact():
    a = np.random.default_rng(0).normal(size=300).astype(np.float32)
    value, grad = cosine_similarity(a, a.copy())
    assert value == 1.0
    assert not grad.any()


def test_cosine_degenerate():
    with pytest.raises(DegenerateVectorError):
        cosine_similarity(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        cosine_similarity(np.ones(3), np.ones(4))


def test_adversarial_loss_examples():
    value, _ = adversarial_loss(np.array([5.0, 0, 0]), 0, 0.99)
    assert value == pytest.approx(1.99)
    value, grad = adversarial_loss(np.array([-1.0, 0, 0]), 0, 0.99)
    assert value == 0 and not grad.any()
    value, _ = adversarial_loss(np.array([0.0, 1, 0]), 0, 0.99)
    assert value == pytest.approx(0.99)


def test_adversarial_loss_validates():
    with pytest.raises(ValueError):
        adversarial_loss(np.ones(3), 3, 0.5)
    with pytest.raises(ValueError):
        adversarial_loss(np.ones(3), 0, 1.5)
    with pytest.raises(DegenerateVectorError):
        adversarial_loss(np.zeros(3), 0, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_hinge_zero_iff_margin_met(seed, kappa):
    logits = np.random.default_rng(seed).normal(size=4)
    value, _ = adversarial_loss(logits, 1, kappa)
    cos = cosine_similarity(logits, np.eye(4)[1])[0]
    if cos <= -kappa:
        assert value == 0.0
    else:
        assert value > 0.0


def test_similarity_examples():
    x = np.array([1.0, -2.0, 3.0])
    assert similarity_loss(x, x.copy())[0] == 0.0
    assert similarity_loss(x, -x)[0] == pytest.approx(2.0)
    assert similarity_loss(np.array([1.0, 0.0]), np.array([0.0, 5.0]))[0] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_similarity_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    orig, adv = rng.normal(size=(2, 16))
    assert similarity_loss(orig, scale * adv)[0] == pytest.approx(similarity_loss(orig, adv)[0], abs=1e-12)


def test_total_loss_examples():
    g = np.ones(2)
    breakdown, (ga, gs) = total_loss((0.5, g), (0.02, g), 20)
    assert breakdown.total == pytest.approx(0.9)
    np.testing.assert_array_equal(gs, 20 * g)
    breakdown, (_, gs) = total_loss((0.5, g), (0.3, g), 0)
    assert breakdown.total == 0.5 and not gs.any()
    breakdown, (ga, gs) = total_loss((0.0, 0 * g), (0.0, 0 * g), 20)
    assert breakdown.total == 0.0 and not ga.any() and not gs.any()
    with pytest.raises(ValueError):
        total_loss((0.0, g), (0.0, g), -1)


def test_cross_entropy_uniform():
    value, _ = cross_entropy_adversarial_loss(np.zeros(3), 1)
    assert value == pytest.approx(math.log(1 / 3), abs=1e-12)


def test_cross_entropy_confident_limit():
    value, _ = cross_entropy_adversarial_loss(np.array([0.0, 60.0, 0.0]), 1)
    assert -1e-20 < value <= 0.0
    value, _ = cross_entropy_adversarial_loss(np.array([1e4, 0.0]), 0)
    assert math.isfinite(value)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=5)
    label = int(rng.integers(5))
    kappa = 0.99
    _, g = cross_entropy_adversarial_loss(logits, label)
    assert rel_err(g, numeric_grad(lambda z: cross_entropy_adversarial_loss(z, label)[0], logits)) < 1e-5
    value, g = adversarial_loss(logits, label, kappa)
    if value > 0:
        num = numeric_grad(lambda z: adversarial_loss(z, label, kappa)[0], logits)
        assert rel_err(g, num) < 1e-4
    orig, adv = rng.normal(size=(2, 12))
    _, g = similarity_loss(orig, adv)
    assert rel_err(g, numeric_grad(lambda a: similarity_loss(orig, a)[0], adv)) < 1e-4
