import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import naive_cp
from tensorstick.tensor_core import (
    CpFactors,
    DimensionError,
    contract_mode1,
    cp_compose,
    factor_column_outer,
    matricize_mode1,
    unmatricize_mode1,
)


def test_cp_compose_rank_one_arithmetic():
    out = cp_compose([[1], [2]], [[1], [0]], [[3]])
    assert out.shape == (2, 2, 1)
    np.testing.assert_array_equal(out.ravel(), [3, 0, 6, 0])


def test_cp_compose_zero_factor_annihilates(rng):
    out = cp_compose(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), np.zeros((5, 2)))
    assert not out.any()


def test_cp_compose_matches_naive_loops(rng):
    F1, F2, F3 = rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=(5, 2))
    np.testing.assert_allclose(cp_compose(CpFactors(F1, F2, F3)), naive_cp(F1, F2, F3), atol=1e-12)


def test_cp_compose_rejects_mismatched_ranks():
    with pytest.raises(DimensionError):
        cp_compose(np.ones((2, 1)), np.ones((2, 2)), np.ones((2, 1)))


def test_contract_identity_and_sum(rng):
    B = rng.normal(size=(3, 2, 4))
    np.testing.assert_allclose(contract_mode1(np.eye(3), B), B)
    B2 = np.stack([np.full((2, 2), 1.5), np.full((2, 2), -0.25)])
    np.testing.assert_allclose(contract_mode1([[1.0, 1.0]], B2)[0], np.full((2, 2), 1.25))


def test_contract_matches_naive_loops(rng):
    X, B = rng.normal(size=(5, 3)), rng.normal(size=(3, 2, 4))
    expect = np.zeros((5, 2, 4))
    for i in range(5):
        for j in range(2):
            for h in range(4):
                expect[i, j, h] = sum(X[i, d] * B[d, j, h] for d in range(3))
    np.testing.assert_allclose(contract_mode1(X, B), expect, atol=1e-12)


def test_contract_dimension_mismatch():
    with pytest.raises(DimensionError):
        contract_mode1(np.ones((2, 3)), np.ones((2, 2, 2)))


def test_matricize_order_and_roundtrip(rng):
    A = np.array([[[1, 2], [3, 4]]])
    np.testing.assert_array_equal(matricize_mode1(A), [[1, 2, 3, 4]])
    A = rng.normal(size=(3, 2, 2))
    M = matricize_mode1(A)
    for i in range(3):
        for j in range(2):
            for h in range(2):
                assert M[i, j * 2 + h] == A[i, j, h]
    np.testing.assert_array_equal(unmatricize_mode1(M, 2, 2), A)


def test_factor_column_outer_small_cases():
    np.testing.assert_array_equal(factor_column_outer([[1], [2]], [[3], [4]])[:, 0], [3, 4, 6, 8])
    out = factor_column_outer([[1, 0], [2, 0]], [[3, 1], [4, 1]])
    assert not out[:, 1].any()
    with pytest.raises(DimensionError):
        factor_column_outer(np.ones((2, 2)), np.ones((3, 1)))


def test_matricization_consistency_identity(rng):
    for _ in range(100):
        F1, F2, F3 = rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2))
        lhs = matricize_mode1(cp_compose(F1, F2, F3))
        np.testing.assert_allclose(lhs, F1 @ factor_column_outer(F2, F3).T, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(
    c=st.floats(-5, 5, allow_nan=False),
    seed=st.integers(0, 2**32 - 1),
    rank=st.integers(1, 3),
)
def test_cp_compose_linear_in_first_factor(c, seed, rank):
    g = np.random.default_rng(seed)
    F1, F2, F3 = g.normal(size=(3, rank)), g.normal(size=(2, rank)), g.normal(size=(4, rank))
    np.testing.assert_allclose(cp_compose(c * F1, F2, F3), c * cp_compose(F1, F2, F3), atol=1e-10)
