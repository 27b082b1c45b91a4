import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hierrec import tensorops as T
from hierrec.hier import filter_mask
from hierrec.objective import (
    LossWeights, ce_variant, cross_entropy, hier_losses, one_hot_targets, total_loss,
)
from hierrec.tensorops import Tensor

seeds = st.integers(0, 2**32 - 1)


def _random(seed, n=5, j=4):
    rng = np.random.default_rng(seed)
    labels = np.stack([rng.integers(0, j, n), rng.integers(0, 3, n)], axis=1)
    return rng, labels, one_hot_targets(labels, j)


# ---------------------------------------------------------------------------
# targets


def test_one_hot_example():
    t = one_hot_targets([(2, 1)], 4)
    np.testing.assert_array_equal(t.G_C1, [[0, 0, 1, 0]])
    flat = t.G_C2.reshape(1, -1)[0]
    assert flat[7] == 1 and flat.sum() == 1


def test_one_hot_all_first():
    t = one_hot_targets(np.zeros((5, 2), int), 4)
    np.testing.assert_array_equal(t.G_C1[:, 0], 1)
    np.testing.assert_array_equal(t.G_C2[:, 0, 0], 1)
    assert t.G_C2.sum() == 5


@given(seeds)
def test_one_hot_round_trip_and_child_of_parent(seed):
    _, labels, t = _random(seed, n=12)
    np.testing.assert_array_equal(np.argmax(t.G_C1, axis=1), labels[:, 0])
    flat = np.argmax(t.G_C2.reshape(12, -1), axis=1)
    np.testing.assert_array_equal(flat, labels[:, 0] * 3 + labels[:, 1])
    np.testing.assert_array_equal(flat // 3, np.argmax(t.G_C1, axis=1))


@pytest.mark.parametrize("bad", [[(4, 0)], [(0, 3)], [(-1, 0)]])
def test_one_hot_out_of_range(bad):
    with pytest.raises(IndexError):
        one_hot_targets(bad, 4)


# ---------------------------------------------------------------------------
# hierarchical KL


def test_prediction_equal_to_targets_gives_zero():
    _, _, t = _random(0)
    l1, l2 = hier_losses(Tensor(t.G_C1), Tensor(t.G_C2), t)
    assert l1.item() == 0.0 and l2.item() == 0.0


def test_targets_are_smoothed():
    t = one_hot_targets([(0, 0)], 1)
    e = math.e
    smooth = [e / (e + 2), 1 / (e + 2), 1 / (e + 2)]
    np.testing.assert_allclose(T.softmax(Tensor(t.G_C2), "flat2").data.ravel(), smooth, atol=1e-12)
    np.testing.assert_allclose(smooth, [0.57612, 0.21194, 0.21194], atol=1e-5)
    # uniform prediction: KL(uniform || smooth) is finite, which a one-hot target would not allow
    _, l2 = hier_losses(Tensor(np.ones((1, 1))), Tensor(np.zeros((1, 1, 3))), t)
    want = sum(1 / 3 * math.log((1 / 3) / q) for q in smooth)
    assert l2.item() == pytest.approx(want, abs=1e-14)


def test_l1_gradient_passes_check():
    rng, _, t = _random(1)
    x = rng.uniform(0.5, 1.5, (5, 4)) * rng.choice([-1, 1], (5, 4))
    s2 = Tensor(t.G_C2)
    assert T.grad_check(lambda z: hier_losses(z, s2, t)[0], x) <= 1e-5


@given(seeds, st.sampled_from(["pred_target", "target_pred"]), st.sampled_from(["flat2", "last"]))
def test_losses_non_negative(seed, direction, axis):
    rng, _, t = _random(seed)
    l1, l2 = hier_losses(Tensor(rng.standard_normal((5, 4))), Tensor(rng.standard_normal((5, 4, 3))),
                         t, kl_direction=direction, c2_axis=axis)
    assert l1.item() >= 0 and l2.item() >= 0


@given(seeds)
def test_zero_only_at_target(seed):
    rng, _, t = _random(seed)
    l1, _ = hier_losses(Tensor(t.G_C1 + 1e-3 * rng.standard_normal((5, 4))), Tensor(t.G_C2), t)
    assert l1.item() > 0


@given(seeds, st.floats(-5, 5))
def test_losses_shift_invariant(seed, c):
    rng, _, t = _random(seed)
    s1, s2 = rng.standard_normal((5, 4)), rng.standard_normal((5, 4, 3))
    shift1 = rng.uniform(-5, 5, (5, 1)) + c
    shift2 = rng.uniform(-5, 5, (5, 1, 1)) + c
    a = hier_losses(Tensor(s1), Tensor(s2), t)
    b = hier_losses(Tensor(s1 + shift1), Tensor(s2 + shift2), t)
    assert a[0].item() == pytest.approx(b[0].item(), abs=1e-12)
    assert a[1].item() == pytest.approx(b[1].item(), abs=1e-12)


def test_onehot_mode_is_cross_entropy_shifted():
    rng, labels, t = _random(2)
    s1 = Tensor(rng.standard_normal((5, 4)))
    s2 = Tensor(rng.standard_normal((5, 4, 3)))
    l1, _ = hier_losses(s1, s2, t, kl_direction="target_pred", target_mode="onehot")
    # KL(onehot || p) = -log p[target]
    assert l1.item() == pytest.approx(cross_entropy(s1, labels[:, 0]).item(), abs=1e-12)


def test_onehot_mode_requires_conventional_direction():
    _, _, t = _random(3)
    with pytest.raises(ValueError):
        hier_losses(Tensor(t.G_C1), Tensor(t.G_C2), t, target_mode="onehot")


def test_strict_mask_renormalises_inside_parent():
    rng, _, t = _random(4)
    s1 = rng.dirichlet(np.ones(4), size=5)
    s2 = Tensor(rng.standard_normal((5, 4, 3)))
    mask = filter_mask(s1)
    _, strict = hier_losses(Tensor(s1), T.mul(s2, Tensor(mask)), t, strict_mask=mask)
    _, literal = hier_losses(Tensor(s1), T.mul(s2, Tensor(mask)), t)
    assert np.isfinite(strict.item()) and strict.item() != literal.item()


def test_shape_mismatch():
    _, _, t = _random(5)
    with pytest.raises(T.ShapeError):
        hier_losses(Tensor(np.zeros((5, 3))), Tensor(t.G_C2), t)


# ---------------------------------------------------------------------------
# cross-entropy variant


def test_ce_uniform_is_log_j():
    _, _, t = _random(6)
    l1, l2 = ce_variant(Tensor(np.zeros((5, 4))), Tensor(np.zeros((5, 4, 3))), t)
    assert l1.item() == pytest.approx(math.log(4), abs=1e-15)
    assert l2.item() == pytest.approx(math.log(12), abs=1e-15)


def test_ce_concentrated_is_small():
    _, labels, t = _random(7)
    s1 = np.zeros((5, 4))
    s1[np.arange(5), labels[:, 0]] = 10.0
    l1, _ = ce_variant(Tensor(s1), Tensor(np.zeros((5, 4, 3))), t)
    assert l1.item() == pytest.approx(math.log(1 + 3 * math.exp(-10)), abs=1e-12)
    assert l1.item() < 0.01


@given(seeds)
def test_ce_non_negative(seed):
    rng, _, t = _random(seed)
    l1, l2 = ce_variant(Tensor(rng.standard_normal((5, 4)) * 5), Tensor(rng.standard_normal((5, 4, 3)) * 5), t)
    assert l1.item() >= 0 and l2.item() >= 0


@given(seeds)
def test_ce_bounded_when_target_is_max(seed):
    rng, labels, _ = _random(seed)
    s = rng.standard_normal((5, 4))
    s[np.arange(5), labels[:, 0]] = s.max(axis=1) + rng.uniform(0, 1, 5)
    assert cross_entropy(Tensor(s), labels[:, 0]).item() <= math.log(4) + 1e-12


# ---------------------------------------------------------------------------
# total loss


def test_total_loss_examples():
    assert total_loss(1.0, 2.0, 3.0, LossWeights(0.5, 0.5)) == 3.5
    assert total_loss(1.25, 2.0, 3.0, LossWeights(0.0, 0.0)) == 1.25


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0, 3), st.floats(0, 3), st.floats(0, 3),
       st.floats(0.01, 1))
def test_total_loss_monotone(l1w, l2w, a, b, c, bump):
    w = LossWeights(l1w, l2w)
    base = total_loss(a, b, c, w)
    assert total_loss(a + bump, b, c, w) > base
    assert total_loss(a, b + bump, c, w) > base
    assert total_loss(a, b, c + bump, w) > base


@pytest.mark.parametrize("w", [(-1.0, 0.0), (0.0, float("nan"))])
def test_loss_weights_validated(w):
    with pytest.raises(ValueError):
        LossWeights(*w)
