import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmfnl.errors import AssumptionError, DimensionError
from rmfnl.sparse_core import (
    ObservedMatrix,
    Omega,
    SparseOnOmega,
    flatten,
    gather_product,
    lift,
    row_col_sums,
    sparse_dense_product,
)


def _random_omega(m, n, nnz, seed):
    rng = np.random.default_rng(seed)
    flat = rng.choice(m * n, size=nnz, replace=False)
    return Omega(*np.divmod(flat, n), (m, n))


@st.composite
def patterns(draw, max_dim=20):
    m = draw(st.integers(1, max_dim))
    n = draw(st.integers(1, max_dim))
    cells = draw(st.sets(st.integers(0, m * n - 1), min_size=1, max_size=m * n))
    flat = np.array(sorted(cells))
    return Omega(*np.divmod(flat, n), (m, n))


# ---- lift / flatten

def test_lift_single_entry():
    omega = Omega([0], [0], (1, 1))
    assert lift([3.0], omega).toarray().tolist() == [[3.0]]


def test_lift_two_by_two():
    omega = Omega([0, 1], [1, 0], (2, 2))
    X = lift([2.0, -5.0], omega)
    assert X.toarray().tolist() == [[0.0, 2.0], [-5.0, 0.0]]
    assert flatten(X).tolist() == [2.0, -5.0]


def test_lift_length_mismatch():
    omega = Omega([0, 1], [1, 0], (2, 2))
    with pytest.raises(DimensionError):
        lift([1.0], omega)


def test_flatten_zero():
    omega = _random_omega(4, 5, 7, 0)
    assert not flatten(lift(np.zeros(7), omega)).any()


@given(patterns(), st.integers(0, 2**32 - 1))
def test_round_trip(omega, seed):
    x = np.random.default_rng(seed).standard_normal(omega.nnz)
    assert np.array_equal(flatten(lift(x, omega)), x)
    X = lift(x, omega)
    assert np.array_equal(lift(flatten(X), omega).toarray(), X.toarray())


def test_canonical_order_is_row_major():
    omega, order = Omega.from_pairs([2, 0, 1, 0], [0, 3, 1, 1], (3, 4))
    assert omega.rows.tolist() == [0, 0, 1, 2]
    assert omega.cols.tolist() == [1, 3, 1, 0]
    assert order.tolist() == [3, 1, 2, 0]


def test_pattern_rejects_duplicates_and_bounds():
    with pytest.raises(DimensionError):
        Omega([0, 0], [1, 1], (2, 2))
    with pytest.raises(DimensionError):
        Omega([2], [0], (2, 2))
    with pytest.raises(DimensionError):
        Omega([0], [-1], (2, 2))


def test_pattern_arrays_are_read_only():
    omega = _random_omega(3, 3, 4, 1)
    with pytest.raises(ValueError):
        omega.rows[0] = 1


# ---- ObservedMatrix

def test_observed_matrix_aligns_values():
    data = ObservedMatrix([1, 0], [0, 1], [7.0, 9.0], (2, 2))
    assert data.values.tolist() == [9.0, 7.0]
    assert data.toarray().tolist() == [[0.0, 9.0], [7.0, 0.0]]


def test_empty_row_rejected():
    with pytest.raises(AssumptionError, match="empty row"):
        ObservedMatrix([0, 0], [0, 1], [1.0, 2.0], (2, 2))


def test_empty_column_rejected():
    with pytest.raises(AssumptionError):
        ObservedMatrix([0, 1], [0, 0], [1.0, 2.0], (2, 2))


def test_non_finite_values_rejected():
    with pytest.raises(DimensionError):
        ObservedMatrix([0], [0], [np.nan], (1, 1))


def test_from_dense_uses_finite_entries():
    M = np.array([[1.0, np.nan], [np.nan, 4.0]])
    data = ObservedMatrix.from_dense(M)
    assert data.nnz == 2
    assert data.values.tolist() == [1.0, 4.0]


# ---- sparse_dense_product

def test_sparse_dense_product_hand():
    X = lift([2.0], Omega([0], [1], (2, 2)))
    D = np.array([[3.0], [5.0]])
    assert sparse_dense_product(X, D).tolist() == [[10.0], [0.0]]


def test_sparse_dense_product_zero():
    omega = _random_omega(4, 3, 6, 2)
    out = sparse_dense_product(lift(np.zeros(6), omega), np.ones((3, 2)))
    assert not out.any()


def test_sparse_dense_product_dimension():
    omega = _random_omega(4, 3, 6, 2)
    with pytest.raises(DimensionError):
        sparse_dense_product(lift(np.ones(6), omega), np.ones((4, 2)))


@given(patterns(), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_sparse_dense_product_oracle(omega, r, seed):
    rng = np.random.default_rng(seed)
    X = lift(rng.standard_normal(omega.nnz), omega)
    m, n = omega.shape
    D = rng.standard_normal((n, r))
    E = rng.standard_normal((m, r))
    dense = X.toarray()
    np.testing.assert_allclose(sparse_dense_product(X, D), dense @ D, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(sparse_dense_product(X, E, transpose=True), dense.T @ E,
                               rtol=1e-12, atol=1e-12)


# ---- gather_product

def test_gather_identity():
    omega = Omega([0, 1], [0, 1], (2, 2))
    assert gather_product(np.eye(2), np.eye(2), omega).tolist() == [1.0, 1.0]


def test_gather_scalar_products():
    omega = Omega([0, 1], [1, 0], (2, 2))
    A = np.array([[2.0], [3.0]])
    B = np.array([[5.0], [7.0]])
    assert gather_product(A, B, omega).tolist() == [14.0, 15.0]


def test_gather_dimension_mismatch():
    omega = Omega([0, 1], [1, 0], (2, 2))
    with pytest.raises(DimensionError):
        gather_product(np.ones((2, 2)), np.ones((2, 3)), omega)
    with pytest.raises(DimensionError):
        gather_product(np.ones((3, 2)), np.ones((2, 2)), omega)


@given(patterns(), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_gather_oracle(omega, r, seed):
    rng = np.random.default_rng(seed)
    m, n = omega.shape
    A = rng.standard_normal((m, r))
    B = rng.standard_normal((n, r))
    expected = (A @ B.T)[omega.rows, omega.cols]
    np.testing.assert_allclose(gather_product(A, B, omega), expected, rtol=1e-12, atol=1e-12)


# ---- row_col_sums

def test_row_col_sums_hand():
    X = lift([1.0, 2.0], Omega([0, 0], [0, 1], (2, 2)))
    rows, cols = row_col_sums(X)
    assert rows.tolist() == [3.0, 0.0]
    assert cols.tolist() == [1.0, 2.0]


def test_row_col_sums_zero():
    omega = _random_omega(5, 4, 9, 3)
    rows, cols = row_col_sums(lift(np.zeros(9), omega))
    assert not rows.any() and not cols.any()


@given(patterns(), st.integers(0, 2**32 - 1))
def test_row_col_sums_oracle(omega, seed):
    X = lift(np.random.default_rng(seed).standard_normal(omega.nnz), omega)
    rows, cols = row_col_sums(X)
    dense = X.toarray()
    np.testing.assert_allclose(rows, dense.sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(cols, dense.sum(axis=0), atol=1e-12)


def test_sparse_on_omega_is_immutable_copy():
    omega = _random_omega(3, 3, 4, 5)
    x = np.arange(4.0)
    X = SparseOnOmega(omega, x)
    x[0] = 99.0
    assert X.entries[0] == 0.0
    with pytest.raises(ValueError):
        X.entries[0] = 1.0


# ---- complexity

def _best_time(fn, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


@pytest.mark.parametrize("kernel", ["gather", "product"])
def test_kernels_scale_at_most_linearly(kernel):
    r = 5
    times = {}
    for nnz in (10**3, 10**4, 10**5):
        m = int(np.sqrt(nnz / 0.05))
        omega = _random_omega(m, m, nnz, 0)
        rng = np.random.default_rng(1)
        A = rng.standard_normal((m, r))
        x = rng.standard_normal(nnz)
        if kernel == "gather":
            times[nnz] = _best_time(lambda: gather_product(A, A, omega))
        else:
            times[nnz] = _best_time(lambda: sparse_dense_product((omega, x), A))
    # growing nnz tenfold may cost at most twice the linear prediction
    assert times[10**4] / times[10**3] <= 20
    assert times[10**5] / times[10**4] <= 20
