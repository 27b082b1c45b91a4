import numpy as np
import pytest
from hypothesis import given, strategies as st

from hierrec import tensorops as T
from hierrec.fusion import LevelSims, level_sims
from hierrec.gradcheck import conditioned_cases
from hierrec.hier import (
    HierOutputs, apply_filter, filter_mask, i2s, predict, predict_independent, run_head, s2i,
)
from hierrec.tensorops import Tensor

from conftest import unit_rows

seeds = st.integers(0, 2**32 - 1)


def _random_head(seed, n=6, j=4, d=5, **kw):
    rng = np.random.default_rng(seed)
    hv, ha, hc1, hc2 = (Tensor(unit_rows(rng, s)) for s in [(n, d), (n, d), (j, d), (j, 3, d)])
    sims = level_sims(hv, ha, hc1, hc2)
    return sims, hv, hc1, hc2, run_head(sims, hc1, hc2, hv, **kw)


def _sims_with(n, j, s_va_c1=None, s_va_c2=None, s_v_c1=None, s_v_c2=None):
    z1, z2 = np.zeros((n, j)), np.zeros((n, j, 3))
    pick = lambda x, z: Tensor(z if x is None else x)  # noqa: E731
    return LevelSims(pick(s_v_c1, z1), Tensor(z1), pick(s_va_c1, z1),
                     pick(s_v_c2, z2), Tensor(z2), pick(s_va_c2, z2))


# ---------------------------------------------------------------------------
# S2I


def test_s2i_unit_pool_reduces_to_video_similarity():
    rng = np.random.default_rng(0)
    hv, hc1 = Tensor(unit_rows(rng, (3, 4))), Tensor(unit_rows(rng, (2, 4)))
    s_v_c1 = T.matmul(hv, T.transpose(hc1)).data
    sims = _sims_with(3, 2, s_va_c2=np.ones((3, 2, 3)), s_v_c1=s_v_c1)
    out = s2i(sims, hc1, hv)
    np.testing.assert_array_equal(out.ms_c2.data, 1.0)
    np.testing.assert_allclose(out.s_prime_c1.data, s_v_c1, atol=1e-15)


@pytest.mark.parametrize("seed", range(100))
def test_s2i_expansion_identity(seed):
    sims, hv, hc1, _, head = _random_head(seed)
    want = head.s2i.ms_c2.data * sims.S_V_C1.data
    np.testing.assert_allclose(head.s2i.s_prime_c1.data, want, rtol=0, atol=1e-12)


def test_s2i_uniform_case():
    hv, hc1 = Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0], [0.0, -1.0]])
    sims = _sims_with(1, 2)
    out = s2i(sims, hc1, hv)
    np.testing.assert_array_equal(out.s_prime_c1.data, [[0.0, 0.0]])
    np.testing.assert_allclose(out.s_hat_c1.data, [[0.5, 0.5]])


# ---------------------------------------------------------------------------
# I2S


def test_i2s_unit_item_similarity_reduces_to_video_similarity():
    rng = np.random.default_rng(1)
    hv, hc2 = Tensor(unit_rows(rng, (3, 4))), Tensor(unit_rows(rng, (2, 3, 4)))
    s_v_c2 = np.einsum("nd,jkd->njk", hv.data, hc2.data)
    sims = _sims_with(3, 2, s_va_c1=np.ones((3, 2)), s_v_c2=s_v_c2)
    np.testing.assert_allclose(i2s(sims, hc2, hv).s_prime_c2.data, s_v_c2, atol=1e-15)


@pytest.mark.parametrize("seed", range(100))
def test_i2s_expansion_identity(seed):
    sims, _, _, _, head = _random_head(seed)
    want = sims.S_VA_C1.data[:, :, None] * sims.S_V_C2.data
    np.testing.assert_allclose(head.i2s.s_prime_c2.data, want, rtol=0, atol=1e-12)


def test_i2s_all_zero_is_uniform():
    hv, hc2 = Tensor([[1.0, 0.0]]), Tensor(np.tile([0.0, 1.0], (4, 3, 1)))
    out = i2s(_sims_with(1, 4), hc2, hv)
    np.testing.assert_allclose(out.s_hat_c2.data, 1 / 12, atol=1e-15)


# ---------------------------------------------------------------------------
# filter and prediction


def test_filter_mask_example():
    m = filter_mask(np.array([[0.1, 0.6, 0.2, 0.1]]))
    want = np.zeros((1, 4, 3))
    want[0, 1] = 1
    np.testing.assert_array_equal(m, want)


def test_filter_mask_tie_goes_to_lowest():
    m = filter_mask(np.array([[0.5, 0.5]]))
    np.testing.assert_array_equal(m[0, 0], 1)
    np.testing.assert_array_equal(m[0, 1], 0)


@given(seeds)
def test_mask_structure(seed):
    rng = np.random.default_rng(seed)
    m = filter_mask(rng.dirichlet(np.ones(4), size=20))
    assert set(np.unique(m)) <= {0.0, 1.0}
    np.testing.assert_array_equal(m.sum(axis=(1, 2)), 3)
    np.testing.assert_array_equal((m.sum(axis=2) > 0).sum(axis=1), 1)


def test_apply_filter_all_ones_is_identity():
    s = Tensor(np.random.default_rng(2).dirichlet(np.ones(3), size=4).reshape(4, 1, 3))
    np.testing.assert_array_equal(apply_filter(s, filter_mask(np.ones((4, 1)))).data, s.data)


def test_apply_filter_shape_error():
    with pytest.raises(T.ShapeError):
        apply_filter(Tensor(np.ones((2, 4, 3))), np.ones((2, 3, 3)))


def test_filtered_argmax_inside_parent():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        s1 = rng.dirichlet(np.ones(4), size=1)
        s2 = Tensor(rng.dirichlet(np.ones(12), size=1).reshape(1, 4, 3))
        out = apply_filter(s2, filter_mask(s1)).data
        live = np.argwhere(out[0] != 0)
        assert len(set(live[:, 0])) == 1
        assert np.argmax(out[0].ravel()) // 3 == np.argmax(s1[0])


def _outputs(s1, s2):
    s1, s2 = Tensor(np.asarray(s1, float)), Tensor(np.asarray(s2, float))
    mask = filter_mask(s1)
    return HierOutputs(s1, s2, mask, apply_filter(s2, mask))


def test_predict_example():
    s2 = np.full((1, 4, 3), 0.01)
    s2[0, 1] = [0.2, 0.5, 0.3]
    s2[0, 0] = [0.9, 0.9, 0.9]  # larger, but under the wrong parent
    pred = predict(_outputs([[0.1, 0.7, 0.1, 0.1]], s2))
    assert (pred.item[0], pred.score[0]) == (1, 1)
    assert predict_independent(_outputs([[0.1, 0.7, 0.1, 0.1]], s2))[0] == 0


def test_predict_uniform_tie_break():
    pred = predict(_outputs(np.full((2, 4), 0.25), np.full((2, 4, 3), 1 / 12)))
    np.testing.assert_array_equal(pred.item, 0)
    np.testing.assert_array_equal(pred.score, 0)


@given(seeds, st.booleans())
def test_prediction_is_parent_coherent(seed, units):
    _, _, _, _, head = _random_head(seed, n=10, hier_units=units)
    pred = predict(head)
    np.testing.assert_array_equal(pred.item, np.argmax(head.S_hat_C1.data, axis=1))
    np.testing.assert_array_equal(pred.flat // 3, pred.item)


@given(seeds, st.sampled_from(["flat2", "last"]))
def test_head_output_simplex_and_filter_zeros(seed, axis):
    _, _, _, _, head = _random_head(seed, c2_axis=axis)
    s1, s2 = head.S_hat_C1.data, head.S_hat_C2.data
    np.testing.assert_allclose(s1.sum(axis=1), 1.0, atol=1e-9)
    groups = s2.reshape(s2.shape[0], -1) if axis == "flat2" else s2
    np.testing.assert_allclose(groups.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all((s1 > 0) & (s1 < 1)) and np.all((s2 > 0) & (s2 < 1))
    assert np.all(head.S_hat_C2_filtered.data[head.mask == 0] == 0)


@given(seeds, st.floats(-3, 3))
def test_shift_invariance_of_level_terms(seed, c):
    sims, hv, hc1, hc2, head = _random_head(seed)
    shifted = sims._replace(S_VA_C1=T.add(sims.S_VA_C1, Tensor(c)), S_VA_C2=T.add(sims.S_VA_C2, Tensor(c)))
    np.testing.assert_allclose(T.softmax(shifted.S_VA_C1).data, T.softmax(sims.S_VA_C1).data, atol=1e-12)
    np.testing.assert_allclose(T.softmax(shifted.S_VA_C2, "flat2").data,
                               T.softmax(sims.S_VA_C2, "flat2").data, atol=1e-12)
    # without the units the head is the pair of level softmaxes
    flat_a = run_head(sims, hc1, hc2, hv, hier_units=False)
    flat_b = run_head(shifted, hc1, hc2, hv, hier_units=False)
    np.testing.assert_array_equal(flat_a.mask, flat_b.mask)
    pa, pb = predict(flat_a), predict(flat_b)
    np.testing.assert_array_equal(pa.flat, pb.flat)


def test_composition_gradients():
    names = {"e2e[L1 via S2I]", "e2e[L2 via I2S+filter]"}
    for name, f, x in conditioned_cases(0):
        if name in names:
            assert T.grad_check(f, x) <= 1e-5, name
