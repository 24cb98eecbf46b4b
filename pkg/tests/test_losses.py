import itertools

import numpy as np
import pytest

import pointseg.autodiff as ad
from pointseg.errors import ConfigError, DomainError, EmptySupervisionError, ShapeError
from pointseg.losses import (LossWeights, consistency_loss, error_tensor, full_loss, jaccard_index,
                             kl_consistency_loss, lovasz_grad, lovasz_softmax, seg_loss)
from conftest import grad_check, random_prob


def test_seg_loss_examples():
    p = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert seg_loss(p, np.array([[1, 2]])).item() == 0.0
    p = np.full((1, 1, 2), 0.5)
    assert seg_loss(p, np.array([[1]])).item() == pytest.approx(np.log(2), abs=1e-12)
    p = np.array([[[0.5, 0.5], [0.25, 0.75]]])
    assert seg_loss(p, np.array([[2, 1]])).item() == pytest.approx((np.log(2) + np.log(4)) / 2)


def test_seg_loss_ignores_unlabeled_and_clamps():
    p = np.array([[[1.0, 0.0], [0.3, 0.7]]])
    assert np.isfinite(seg_loss(p, np.array([[2, 0]])).item())
    with pytest.raises(EmptySupervisionError):
        seg_loss(p, np.zeros((1, 2), dtype=int))


def test_jaccard_index_examples():
    a = np.array([1, 1, 2, 2])
    assert jaccard_index(a, a, 1) == 1.0
    assert jaccard_index(np.array([1, 1, 2, 2]), np.array([2, 2, 1, 1]), 1) == 0.0
    pred = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    target = np.array([0, 0, 1, 1, 1, 1, 0, 0])
    assert jaccard_index(pred, target, 1) == pytest.approx(2 / 6)
    assert jaccard_index(pred, target, 3) == 1.0


def test_error_tensor_examples():
    E = np.array([[1, 2, 0]])
    onehot = np.array([[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]])
    M = error_tensor(onehot, E).value
    assert (M == 0).all()
    M = error_tensor(np.array([[[0.7, 0.3]]]), np.array([[1]])).value
    assert np.allclose(M, [0.3, 0.3])
    k = 4
    M = error_tensor(np.full((2, 2, k), 1 / k), np.array([[1, 2], [3, 4]])).value
    for r, c in itertools.product(range(2), range(2)):
        lab = r * 2 + c
        assert M[r, c, lab] == pytest.approx(1 - 1 / k)
    with pytest.raises(ShapeError):
        error_tensor(np.full((2, 2, 2), 0.5), np.zeros((2, 3), dtype=int))


def test_lovasz_examples():
    p = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert lovasz_softmax(p, np.array([[1, 2]])).item() == 0.0
    assert lovasz_softmax(np.array([[[0.6, 0.4]]]), np.array([[1]])).item() == pytest.approx(0.4)
    with pytest.raises(EmptySupervisionError):
        lovasz_softmax(p, np.zeros((1, 2), dtype=int))


def test_lovasz_grad_vertices():
    # all-foreground indicator: cumulative Jaccard loss steps of 1/n
    assert np.allclose(lovasz_grad(np.ones(4)), [0.25] * 4)
    # class absent: the whole loss sits on the largest error
    assert np.allclose(lovasz_grad(np.zeros(3)), [1, 0, 0])


def _hard(pred):
    k = 2
    p = np.zeros((1, len(pred), k))
    p[0, np.arange(len(pred)), np.asarray(pred) - 1] = 1.0
    return p


@pytest.mark.parametrize("n", range(1, 7))
def test_lovasz_equals_jaccard_loss_on_vertices(n):
    for gt in itertools.product((1, 2), repeat=n):
        gt = np.array([gt])
        present = np.unique(gt)
        for pred in itertools.product((1, 2), repeat=n):
            pred = np.array(pred)
            expected = np.mean([1 - jaccard_index(pred, gt[0], c) for c in present])
            assert lovasz_softmax(_hard(pred), gt).item() == pytest.approx(expected, abs=1e-9)


def test_lovasz_class_terms_in_unit_interval(rng):
    for _ in range(50):
        k = int(rng.integers(2, 5))
        p = random_prob(rng, (4, 5), k)
        E = rng.integers(0, k + 1, size=(4, 5))
        E[0, 0] = 1
        v = lovasz_softmax(p, E).item()
        assert 0.0 <= v <= 1.0


def test_consistency_examples(rng):
    p = random_prob(rng, (3, 3), 4)
    assert consistency_loss(p, p).item() == 0.0
    assert consistency_loss(np.array([[[1.0, 0.0]]]), np.array([[[0.0, 1.0]]])).item() == pytest.approx(2.0)
    assert consistency_loss(np.array([[[0.75, 0.25]]]), np.array([[[0.25, 0.75]]])).item() == pytest.approx(0.5)
    q = random_prob(rng, (3, 3), 4)
    assert consistency_loss(p, q).item() == pytest.approx(consistency_loss(q, p).item(), abs=1e-15)
    with pytest.raises(ShapeError):
        consistency_loss(p, q[:2])


def test_kl_consistency_examples(rng):
    p = random_prob(rng, (4, 4), 3)
    for T in (0.1, 1.0, 10.0):
        assert kl_consistency_loss(p, p, T).item() == pytest.approx(0.0, abs=1e-12)
    for _ in range(20):
        a, b = random_prob(rng, (3, 3), 4), random_prob(rng, (3, 3), 4)
        assert kl_consistency_loss(a, b, 1.0).item() >= 0
        assert kl_consistency_loss(a, b, 100.0).item() < kl_consistency_loss(a, b, 1.0).item()
    with pytest.raises(DomainError):
        kl_consistency_loss(p, p, 0.0)


def test_full_loss_examples():
    assert full_loss(0.5, 0.25, 0.1, LossWeights(0.0)) == pytest.approx(0.75)
    assert full_loss(0.0, 0.0, 0.0) == 0.0
    assert full_loss(0.5, 0.25, 0.1, LossWeights(1.0)) == pytest.approx(0.85)
    with pytest.raises(ConfigError):
        LossWeights(-1.0)


def test_full_loss_monotone(rng):
    for _ in range(100):
        s, e, c, d = rng.uniform(0, 2, size=4)
        w = LossWeights(float(rng.uniform(0, 3)))
        base = full_loss(s, e, c, w)
        assert full_loss(s + d, e, c, w) >= base
        assert full_loss(s, e + d, c, w) >= base
        assert full_loss(s, e, c + d, w) >= base


# -- gradient checks against central differences ---------------------------

def test_seg_loss_gradient():
    assert grad_check(lambda t, z, y, _: seg_loss(ad.softmax(z), y)) <= 1e-4


def test_lovasz_gradient():
    assert grad_check(lambda t, z, y, _: lovasz_softmax(ad.softmax(z), y)) <= 1e-4


def test_consistency_gradient():
    assert grad_check(lambda t, z, y, x: consistency_loss(ad.softmax(z), ad.softmax(t.constant(x)))) <= 1e-4
    # gradient flows into both arguments
    assert grad_check(lambda t, z, y, x: consistency_loss(ad.softmax(t.constant(x)), ad.softmax(z))) <= 1e-4


@pytest.mark.parametrize("T", [0.1, 1.0, 10.0])
def test_kl_gradient(T):
    assert grad_check(lambda t, z, y, x: kl_consistency_loss(ad.softmax(z), ad.softmax(t.constant(x)), T)) <= 1e-4
    assert grad_check(lambda t, z, y, x: kl_consistency_loss(ad.softmax(t.constant(x)), ad.softmax(z), T)) <= 1e-4
