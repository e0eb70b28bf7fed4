import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmd import InputError, UndefinedCorrelationError
from gmmd.rankstats import average_ranks, kendall_tau, permutation_pvalue, spearman_rho
from oracles import kendall_oracle, spearman_no_ties_oracle, spearman_oracle


def test_perfect_monotone():
    assert spearman_rho([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0


def test_reversed():
    assert spearman_rho([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0


def test_spec_examples():
    # one swapped pair: rho = 1 - 6*2/(4*15) = 0.8, tau = (5-1)/6
    assert spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=0)
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4 / 6, rel=1e-15)


def test_average_ranks_ties():
    assert average_ranks([10, 20, 20, 30]).tolist() == [1.0, 2.5, 2.5, 4.0]


def test_constant_input_raises():
    with pytest.raises(UndefinedCorrelationError):
        spearman_rho([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        kendall_tau([1, 2, 3], [5, 5, 5])


def test_length_checks():
    with pytest.raises(InputError):
        spearman_rho([1, 2], [1, 2, 3])
    with pytest.raises(InputError):
        kendall_tau([1], [1])


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_all_permutations_match_brute_force(n):
    xs = list(range(1, n + 1))
    for perm in itertools.permutations(xs):
        ys = list(perm)
        if len(set(ys)) == 1:
            continue
        assert spearman_rho(xs, ys) == spearman_oracle(xs, ys)
        assert kendall_tau(xs, ys) == kendall_oracle(xs, ys)
        # no ties: classic displacement formula applies
        assert spearman_rho(xs, ys) == pytest.approx(spearman_no_ties_oracle(xs, ys), abs=1e-14)


def test_random_tied_series_match_brute_force():
    r = np.random.default_rng(99)
    for _ in range(100):
        xs = r.integers(0, 5, size=10).astype(float)
        ys = r.integers(0, 5, size=10).astype(float)
        if len(set(xs)) == 1 or len(set(ys)) == 1:
            continue
        assert spearman_rho(xs, ys) == spearman_oracle(xs.tolist(), ys.tolist())
        assert kendall_tau(xs, ys) == kendall_oracle(xs.tolist(), ys.tolist())


@given(st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_monotone_transform_invariance(seed):
    r = np.random.default_rng(seed)
    xs = r.standard_normal(10)
    ys = r.standard_normal(10)
    fx = np.exp(xs)  # strictly increasing transform
    gy = ys**3 + 2 * ys  # strictly increasing
    assert spearman_rho(xs, ys) == pytest.approx(spearman_rho(fx, gy), abs=1e-12)
    assert kendall_tau(xs, ys) == pytest.approx(kendall_tau(fx, gy), abs=1e-12)


@given(st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_antisymmetry(seed):
    r = np.random.default_rng(seed)
    xs = r.permutation(8).astype(float)
    ys = r.permutation(8).astype(float)
    assert spearman_rho(xs, -ys) == pytest.approx(-spearman_rho(xs, ys), abs=1e-12)
    assert kendall_tau(xs, -ys) == pytest.approx(-kendall_tau(xs, ys), abs=1e-12)


def test_tau_rho_sign_agreement():
    r = np.random.default_rng(5)
    for _ in range(50):
        xs = np.arange(10.0)
        ys = xs + r.standard_normal(10) * 3
        rho, tau = spearman_rho(xs, ys), kendall_tau(xs, ys)
        if rho != 0 and tau != 0:
            assert np.sign(rho) == np.sign(tau)


def test_kendall_matches_enumeration_medium():
    r = np.random.default_rng(17)
    xs = r.integers(0, 50, size=200).astype(float)
    ys = r.integers(0, 50, size=200).astype(float)
    assert kendall_tau(xs, ys) == kendall_oracle(xs.tolist(), ys.tolist())


def test_permutation_pvalue_monotone_signal():
    xs = np.arange(10.0)
    p_strong = permutation_pvalue(xs, xs, n_permutations=999, seed=1)
    assert p_strong <= 0.01
    r = np.random.default_rng(2)
    p_null = permutation_pvalue(xs, r.standard_normal(10), n_permutations=999, seed=1)
    assert p_null > 0.05


def test_permutation_pvalue_seeded():
    xs = np.arange(8.0)
    ys = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 7.0, 6.0, 8.0])
    a = permutation_pvalue(xs, ys, n_permutations=200, seed=7)
    b = permutation_pvalue(xs, ys, n_permutations=200, seed=7)
    assert a == b
