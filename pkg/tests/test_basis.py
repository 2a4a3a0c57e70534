import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nbgam.basis import (DomainError, MarginalBasis, bspline_design, difference_penalty,
                         row_kron, sum_to_zero_basis, tensor_term)

from oracles import bspline_scalar


def _basis(k=8, degree=3, lo=0.0, hi=1.0):
    return MarginalBasis.from_data(np.linspace(lo, hi, 200), k, degree)


@pytest.mark.parametrize("k, degree", [(4, 3), (8, 3), (10, 3), (6, 2), (5, 1), (3, 2)])
def test_matches_scalar_recursion(k, degree):
    rng = np.random.default_rng(k * 10 + degree)
    b = MarginalBasis.from_data(rng.uniform(-2, 3, 300) ** 3, k, degree)
    lo, hi = b.domain
    x = np.concatenate([rng.uniform(lo, hi, 50), [lo, hi], b.knots])
    B = bspline_design(x, b)
    ref = np.array([[bspline_scalar(xi, b.knots, degree, j) for j in range(k)] for xi in x])
    np.testing.assert_allclose(B, ref, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 15), st.integers(1, 3),
       hnp.arrays(float, st.integers(20, 60), elements=st.floats(-1e3, 1e3)))
def test_partition_of_unity_and_nonnegative(k, degree, data):
    if len(np.unique(data)) < k + 2:
        return
    try:
        b = MarginalBasis.from_data(data, k, degree)
    except ValueError:
        return  # ties in the quantiles
    lo, hi = b.domain
    x = np.linspace(lo, hi, 333)
    B = bspline_design(x, b)
    assert np.all(B >= -1e-15)
    assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-12
    # local support: at most degree + 1 non-zero functions per point
    assert np.all((B > 1e-15).sum(axis=1) <= degree + 1)


def test_domain_error_lists_offenders():
    b = _basis()
    with pytest.raises(DomainError) as info:
        bspline_design([0.5, -0.1, 1.2, np.nan], b)
    assert info.value.bad.tolist() == [1, 2, 3]


def test_from_data_quadratic_fallback():
    b = MarginalBasis.from_data(np.arange(20.0), 3)
    assert b.degree == 2 and b.num_basis == 3


@pytest.mark.parametrize("knots, degree", [
    ([0, 0, 1, 1], 3),
    ([0, 0, 0, 0, 1, 1, 1], 3),
    ([0, 0, 0, 0, 0.5, 0.2, 1, 1, 1, 1], 3),
    ([0, 0, 0, 0, 0, 0, 0, 0], 3),
])
def test_degenerate_knots_rejected(knots, degree):
    with pytest.raises(ValueError):
        MarginalBasis(np.array(knots, float), degree)


def test_too_few_distinct_values():
    with pytest.raises(ValueError, match="distinct values"):
        MarginalBasis.from_data([1.0, 2.0, 3.0], 10)


@pytest.mark.parametrize("k", [3, 4, 7, 20])
def test_penalty_null_space_is_affine(k):
    S = difference_penalty(k, 2)
    j = np.arange(k, dtype=float)
    for beta in (np.ones(k), j, 3 - 0.7 * j):
        assert beta @ S @ beta < 1e-10 * beta @ beta
    assert np.linalg.matrix_rank(S) == k - 2
    assert np.all(np.linalg.eigvalsh(S) > -1e-12)


def test_penalty_order_checks():
    with pytest.raises(ValueError):
        difference_penalty(2, 2)
    with pytest.raises(ValueError):
        difference_penalty(5, 0)


def test_row_kron_matches_loop():
    rng = np.random.default_rng(0)
    A, B, C = rng.random((6, 3)), rng.random((6, 2)), rng.random((6, 4))
    out = row_kron([A, B, C])
    for i in range(6):
        np.testing.assert_allclose(out[i], np.kron(np.kron(A[i], B[i]), C[i]))
    with pytest.raises(ValueError):
        row_kron([A, rng.random((5, 2))])


def test_sum_to_zero_basis():
    rng = np.random.default_rng(1)
    c = rng.random(9)
    Z = sum_to_zero_basis(c)
    assert Z.shape == (9, 8)
    np.testing.assert_allclose(c @ Z, 0, atol=1e-12)
    np.testing.assert_allclose(Z.T @ Z, np.eye(8), atol=1e-12)


def _columns(n=300, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random(n), rng.random(n), rng.random(n)


def test_tensor_group_penalties():
    a, b, c = _columns()
    m = [MarginalBasis.from_data(v, k) for v, k in zip((a, b, c), (4, 5, 6))]
    term = tensor_term(m, (2, 1), [a, b, c], center=False)
    assert len(term.penalties) == 2
    Sa, Sb, Sc = (difference_penalty(k, 2) for k in (4, 5, 6))
    Ia, Ib, Ic = (np.eye(k) for k in (4, 5, 6))
    expect0 = np.kron(np.kron(Sa, Ib), Ic) + np.kron(np.kron(Ia, Sb), Ic)
    expect1 = np.kron(np.kron(Ia, Ib), Sc)
    np.testing.assert_allclose(term.penalties[0], expect0)
    np.testing.assert_allclose(term.penalties[1], expect1)
    assert len(tensor_term(m, (1, 1, 1), [a, b, c]).penalties) == 3


def test_centered_columns_sum_to_zero():
    a, b, _ = _columns()
    m = [MarginalBasis.from_data(v, 5) for v in (a, b)]
    term = tensor_term(m, (1, 1), [a, b])
    assert term.n_cols == 24
    np.testing.assert_allclose(term.design.sum(axis=0), 0, atol=1e-10)
    # penalties stay symmetric positive semi-definite after constraint
    for S in term.penalties:
        np.testing.assert_allclose(S, S.T)
        assert np.linalg.eigvalsh(S).min() > -1e-10


def test_predict_design_reproduces_fit_design():
    a, b, _ = _columns()
    m = [MarginalBasis.from_data(v, 5) for v in (a, b)]
    term = tensor_term(m, (1, 1), [a, b])
    np.testing.assert_allclose(term.predict_design([a, b]), term.design, atol=1e-13)


def test_tensor_argument_checks():
    a, b, _ = _columns()
    m = [MarginalBasis.from_data(v, 5) for v in (a, b)]
    with pytest.raises(ValueError):
        tensor_term(m, (1,), [a, b])
    with pytest.raises(ValueError):
        tensor_term(m, (1, 1), [a, b[:-1]])
    with pytest.raises(ValueError):
        tensor_term(m, (1, 1), [a])
