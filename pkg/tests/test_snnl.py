import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attenfair import snnl
from attenfair.numerics import Tensor, grad_check
from attenfair.snnl import FeatureBatch, SnnlConfig

FOUR = np.array([[0.0, 0.0], [0.0, 1.0], [2.0, 0.0], [2.0, 1.0]])
FOUR_LABELS = np.array([0, 0, 1, 1])


def test_single_class_batch_is_zero():
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert snnl.snnl(FeatureBatch(x, np.zeros(5, int))).item() == 0.0


def test_four_point_fixture():
    assert snnl.snnl(FeatureBatch(FOUR, FOUR_LABELS, 1.0)).item() == pytest.approx(0.06589, abs=1e-5)
    expected = -math.log(math.exp(-1) / (math.exp(-1) + math.exp(-4) + math.exp(-5)))
    assert snnl.snnl(FeatureBatch(FOUR, FOUR_LABELS, 1.0)).item() == pytest.approx(expected, rel=1e-12)


def test_two_distinct_classes_are_floored_and_flagged():
    batch = FeatureBatch(np.array([[0.0], [1.0]]), [0, 1], 1.0)
    cfg = SnnlConfig(1.0, epsilon=1e-12)
    value = snnl.snnl(batch, cfg).item()
    # each anchor: -log(eps / e^-1)
    assert value == pytest.approx(-(math.log(1e-12) + 1.0), rel=1e-12)
    assert batch.degenerate


def test_l_disease_equals_snnl_and_drops_when_clusters_separate():
    b = FeatureBatch(FOUR, FOUR_LABELS, 1.0)
    assert snnl.l_disease(b).item() == snnl.snnl(b).item()
    far = FOUR.copy()
    far[2:, 0] = 10.0
    assert snnl.l_disease(FeatureBatch(far, FOUR_LABELS, 1.0)).item() < snnl.l_disease(b).item()


def test_l_skin_self_inclusion_fixtures():
    apart = snnl.l_skin([FeatureBatch(np.array([[0.0, 0.0], [1.0, 0.0]]), [0, 0], 1.0)]).item()
    assert apart == pytest.approx(-1.31326, abs=1e-5)
    together = snnl.l_skin([FeatureBatch(np.zeros((2, 2)), [0, 0], 1.0)]).item()
    assert together == pytest.approx(-math.log(2), abs=1e-12)
    assert together > apart


def test_l_skin_skips_singletons_and_rejects_mixed_batches():
    x = Tensor(np.arange(8.0).reshape(4, 2))
    parts = snnl.split_by_class(x, [0, 1, 1, 2], 1.0)
    assert [len(p) for p in parts] == [1, 2, 1]
    only_pair = snnl.l_skin([parts[1]]).item()
    assert snnl.l_skin(parts).item() == only_pair
    assert snnl.l_skin([parts[0]]).item() == 0.0
    with pytest.raises(ValueError):
        snnl.l_skin([FeatureBatch(FOUR, FOUR_LABELS)])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-3, 3)))
def test_l_skin_terms_are_strictly_negative(x):
    assert snnl.l_skin([FeatureBatch(x, np.zeros(4, int), 1.0)]).item() < 0


def test_combined_loss_arithmetic():
    out = snnl.combined_loss(Tensor(2.0), [(Tensor(0.5), Tensor(-0.7))], [0.1])
    assert out.item() == pytest.approx(2.12, abs=1e-12)
    ce = Tensor(1.234)
    assert snnl.combined_loss(ce, [(Tensor(3.0), Tensor(-1.0))] * 2, [0.0, 0.0]).item() == 1.234
    with pytest.raises(ValueError):
        snnl.combined_loss(ce, [(Tensor(3.0), Tensor(-1.0))], [0.1, 0.2])


def test_cross_entropy_uniform_logits():
    assert snnl.cross_entropy(Tensor(np.zeros((4, 3))), [0, 1, 2, 0]).item() == pytest.approx(math.log(3))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (6, 3), elements=st.floats(-2, 2)),
    st.permutations(list(range(6))),
    arrays(np.float64, (3,), elements=st.floats(-5, 5)),
)
def test_permutation_and_translation_invariance(x, perm, shift):
    labels = np.array([0, 0, 1, 1, 2, 2])
    ref = snnl.snnl(FeatureBatch(x, labels, 2.0)).item()
    perm = np.array(perm)
    assert snnl.snnl(FeatureBatch(x[perm], labels[perm], 2.0)).item() == pytest.approx(ref, rel=1e-9, abs=1e-12)
    assert snnl.snnl(FeatureBatch(x + shift, labels, 2.0)).item() == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_high_temperature_limit():
    x = np.random.default_rng(3).normal(size=(7, 4))
    labels = np.array([0, 0, 0, 1, 1, 2, 2])
    n_same = np.array([(labels == y).sum() - 1 for y in labels])
    limit = -np.mean(np.log(n_same / (len(labels) - 1)))
    assert snnl.snnl(FeatureBatch(x, labels, 1e6)).item() == pytest.approx(limit, abs=1e-4)


def test_self_inclusion_term_rises_as_points_approach():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=(4, 2))
        base = snnl.l_skin([FeatureBatch(x, np.zeros(4, int))]).item()
        # contracting toward any centre shrinks every pairwise distance
        centre = rng.normal(size=2)
        y = centre + rng.uniform(0.3, 0.95) * (x - centre)
        assert snnl.l_skin([FeatureBatch(y, np.zeros(4, int))]).item() > base


@pytest.mark.parametrize("include_self", [False, True])
def test_snnl_gradients(include_self):
    rng = np.random.default_rng(7)
    labels = np.array([0, 0, 1, 1, 1, 2, 2])
    for _ in range(10):
        x = rng.normal(size=(7, 4))
        T = rng.uniform(0.5, 3.0)
        err = grad_check(lambda v: snnl.snnl(FeatureBatch(v, labels, T), SnnlConfig(T, include_self)), x)
        assert err < 1e-5


def test_config_validation():
    with pytest.raises(ValueError):
        SnnlConfig(temperature=0)
    with pytest.raises(ValueError):
        FeatureBatch(FOUR, [0, 1])
    with pytest.raises(ValueError):
        snnl.snnl(FeatureBatch(FOUR[:1], [0]))
