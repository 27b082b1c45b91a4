import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierrec import gradcheck
from hierrec import tensorops as T

CASES = gradcheck.conditioned_cases(0)


@pytest.mark.parametrize("name, f, x", CASES, ids=[c[0] for c in CASES])
def test_case_within_tolerance(name, f, x):
    assert T.grad_check(f, x, 1e-6) <= gradcheck.TOLERANCE


def test_every_differentiable_op_is_covered():
    ops = {"matmul", "batched_matvec", "softmax", "masked_softmax", "max_pool_last",
           "broadcast_repeat", "hadamard_scale", "kl_rows", "l2_normalize_rows", "temporal_pool",
           "info_nce", "apply_projections"}
    covered = {n.split("[")[0].rstrip("4") for n in gradcheck.CASE_NAMES}
    assert ops <= covered
    assert sum(n.startswith("e2e") for n in gradcheck.CASE_NAMES) == 3


def test_conditioning_redraws_only_when_needed():
    for (name, _, x), (_, f0, x0) in zip(CASES, gradcheck.cases(0)):
        if gradcheck.well_conditioned(f0, x0):
            assert np.array_equal(x, x0), name


def test_wrong_gradient_is_caught():
    # a deliberately broken backward rule must fail the same check
    def bad_square(a):
        return T._emit(a.data ** 2, (a,), lambda g: (g * a.data,))

    x = np.array([0.7, -1.2, 1.4])
    assert T.grad_check(lambda t: T.sum_all(bad_square(t)), x) > 0.1


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_random_instances_pass(seed):
    assert max(err for _, err in gradcheck.run(seed)) <= gradcheck.TOLERANCE
