import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmd import (
    DegenerateBandwidthError,
    InputError,
    KernelKind,
    KernelSpec,
    SampleSizeError,
    kernel_eval,
    median_heuristic_gamma,
    mmd2_biased,
    mmd2_unbiased,
)
from gmmd.mmd import kernel_matrix
from oracles import mmd2_unbiased_oracle


def test_rbf_self_is_one(rng):
    spec = KernelSpec.rbf(0.7)
    x = rng.standard_normal(5)
    assert kernel_eval(spec, x, x) == 1.0


def test_rbf_analytic_value():
    # gamma=0.5, ||x-y||^2 = 2 -> exp(-1)
    spec = KernelSpec.rbf(0.5)
    val = kernel_eval(spec, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert val == pytest.approx(math.exp(-1.0), rel=1e-15)


def test_polynomial_example():
    spec = KernelSpec.polynomial()
    assert kernel_eval(spec, np.array([1.0, 1.0]), np.array([1.0, 1.0])) == 8.0


def test_kernel_spec_validation():
    with pytest.raises(InputError):
        KernelSpec.rbf(0.0)
    with pytest.raises(InputError):
        KernelSpec.rbf(float("nan"))
    with pytest.raises(InputError):
        KernelSpec(KernelKind.POLYNOMIAL, gamma=1.0)
    with pytest.raises(InputError):
        kernel_eval(KernelSpec.rbf(1.0), np.zeros(2), np.zeros(3))


def test_rbf_kernel_matrix_unit_diagonal_symmetric(rng):
    xs = rng.standard_normal((7, 3))
    k = kernel_matrix(KernelSpec.rbf(0.3), xs, xs)
    assert np.allclose(np.diag(k), 1.0)
    assert np.array_equal(k, k.T)


def test_median_heuristic_three_anchor_example():
    # 1-D anchors {0,1,3}: squared distances {1,4,9}, median 4 -> 1/8
    assert median_heuristic_gamma(np.array([[0.0], [1.0], [3.0]])) == 0.125


def test_median_heuristic_duplicate_point():
    # {0,0,2}: distances {0,4,4}, median 4 -> 1/8
    assert median_heuristic_gamma(np.array([[0.0], [0.0], [2.0]])) == 0.125


def test_median_heuristic_even_pair_count():
    # {0,1,2,3}: squared distances {1,4,9,1,4,1} sorted {1,1,1,4,4,9};
    # median = (1+4)/2 = 2.5 -> gamma = 0.2
    assert median_heuristic_gamma(np.array([[0.0], [1.0], [2.0], [3.0]])) == 0.2


def test_median_heuristic_degenerate():
    with pytest.raises(DegenerateBandwidthError):
        median_heuristic_gamma(np.ones((4, 2)))


def test_median_heuristic_needs_two():
    with pytest.raises(InputError):
        median_heuristic_gamma(np.zeros((1, 2)))


def test_median_heuristic_subsampled_close_to_exact(rng):
    xs = rng.standard_normal((200, 4))
    exact = median_heuristic_gamma(xs)
    sub = median_heuristic_gamma(xs, max_exact_pairs=5000, seed=3)
    assert sub == pytest.approx(exact, rel=0.1)
    assert sub == median_heuristic_gamma(xs, max_exact_pairs=5000, seed=3)  # seeded


def test_mmd_two_point_identity():
    # anchor = eval = {a, b}: MMD^2 = k(a,b) - 1
    a, b = np.array([0.0]), np.array([2.0])
    spec = KernelSpec.rbf(0.25)
    t = math.exp(-0.25 * 4.0)
    res = mmd2_unbiased(np.stack([a, b]), np.stack([a, b]), spec)
    assert res.mmd2 == pytest.approx(t - 1.0, rel=1e-12)
    assert res.mmd2 == res.term_anchor + res.term_eval - res.term_cross


def test_mmd_identical_points_zero():
    pts = np.ones((4, 3))
    res = mmd2_unbiased(pts, pts.copy(), KernelSpec.rbf(1.0))
    assert res.mmd2 == 0.0


def test_mmd_oracle_small(rng):
    anchor = rng.standard_normal((8, 4))
    eval_ = rng.standard_normal((8, 4)) + 0.5
    for spec, kind, gamma in [
        (KernelSpec.rbf(0.37), "rbf", 0.37),
        (KernelSpec.polynomial(), "poly", None),
    ]:
        got = mmd2_unbiased(anchor, eval_, spec).mmd2
        want = mmd2_unbiased_oracle(anchor.tolist(), eval_.tolist(), kind, gamma)
        assert got == pytest.approx(want, rel=1e-12)


def test_mmd_sample_size_errors():
    with pytest.raises(SampleSizeError):
        mmd2_unbiased(np.zeros((1, 2)), np.zeros((4, 2)), KernelSpec.rbf(1.0))
    with pytest.raises(SampleSizeError):
        mmd2_unbiased(np.zeros((4, 2)), np.zeros((1, 2)), KernelSpec.rbf(1.0))
    with pytest.raises(InputError):
        mmd2_unbiased(np.zeros((4, 2)), np.zeros((4, 3)), KernelSpec.rbf(1.0))


def test_mmd_symmetry_exact(rng):
    a = rng.standard_normal((6, 3))
    b = rng.standard_normal((9, 3)) + 1.0
    spec = KernelSpec.rbf(0.8)
    assert mmd2_unbiased(a, b, spec).mmd2 == mmd2_unbiased(b, a, spec).mmd2


@given(shift=st.floats(-5, 5), seed=st.integers(0, 2**16))
@settings(max_examples=25, deadline=None)
def test_rbf_translation_invariance(shift, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((5, 2))
    b = r.standard_normal((6, 2))
    spec = KernelSpec.rbf(0.9)
    base = mmd2_unbiased(a, b, spec).mmd2
    moved = mmd2_unbiased(a + shift, b + shift, spec).mmd2
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_far_clusters_cross_term_vanishes(rng):
    a = rng.standard_normal((6, 2)) * 0.01
    b = rng.standard_normal((6, 2)) * 0.01 + 1000.0
    res = mmd2_unbiased(a, b, KernelSpec.rbf(1.0))
    assert res.term_cross == pytest.approx(0.0, abs=1e-200)
    assert res.mmd2 == pytest.approx(res.term_anchor + res.term_eval)


def test_biased_estimator():
    a = np.array([[0.0, 0.0]])
    b = np.array([[1.0, 1.0]])
    spec = KernelSpec.rbf(0.5)
    assert mmd2_biased(a, a, spec) == 0.0
    got = mmd2_biased(a, b, spec)
    assert got == pytest.approx(2.0 - 2.0 * math.exp(-1.0), rel=1e-12)
    assert got >= 0.0
    with pytest.raises(InputError):
        mmd2_biased(np.zeros((0, 2)), b, spec)


def test_biased_meets_unbiased_at_scale(rng):
    # same distribution, large n: the two estimators converge
    a = rng.standard_normal((400, 3))
    b = rng.standard_normal((400, 3))
    spec = KernelSpec.rbf(0.5)
    assert mmd2_biased(a, b, spec) == pytest.approx(
        mmd2_unbiased(a, b, spec).mmd2, abs=0.01
    )


def test_deterministic_flag_same_result(rng):
    a = rng.standard_normal((40, 5))
    b = rng.standard_normal((50, 5))
    spec = KernelSpec.rbf(0.2)
    assert (
        mmd2_unbiased(a, b, spec, deterministic=True).mmd2
        == mmd2_unbiased(a, b, spec, deterministic=False).mmd2
    )
