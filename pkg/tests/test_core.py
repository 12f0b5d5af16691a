import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hibbo.core import (
    JITTER_LADDER,
    DimensionMismatch,
    NotPositiveDefinite,
    SingularDiagonal,
    cholesky,
    cholesky_jittered,
    make_rng,
    triangular_solve,
)

# ---------------------------------------------------------------- oracles


def test_cholesky_of_identity_is_identity():
    np.testing.assert_array_equal(cholesky(np.eye(4)), np.eye(4))


def test_cholesky_hand_computed_2x2():
    # [[4, 2], [2, 3]] = L L^T with L = [[2, 0], [1, sqrt(2)]]
    L = cholesky([[4.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=0, atol=1e-15)


def test_cholesky_hand_computed_3x3():
    A = np.array([[25.0, 15.0, -5.0], [15.0, 18.0, 0.0], [-5.0, 0.0, 11.0]])
    expected = np.array([[5.0, 0.0, 0.0], [3.0, 3.0, 0.0], [-1.0, 1.0, 3.0]])
    np.testing.assert_allclose(cholesky(A), expected, atol=1e-14)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        cholesky([[2.0, 1.0], [0.0, 2.0]])


def test_cholesky_rejects_non_square():
    with pytest.raises(DimensionMismatch):
        cholesky(np.ones((2, 3)))


def test_jitter_ladder_rescues_singular_matrix():
    A = np.ones((3, 3))  # rank one
    with pytest.raises(NotPositiveDefinite):
        cholesky(A)
    L, jitter = cholesky_jittered(A)
    assert jitter > 0
    np.testing.assert_allclose(L @ L.T, A + jitter * np.eye(3), atol=1e-12)


def test_jitter_is_zero_when_not_needed():
    _, jitter = cholesky_jittered(np.eye(2))
    assert jitter == 0.0


def test_jitter_ladder_exhausted_raises():
    with pytest.raises(NotPositiveDefinite):
        cholesky_jittered(-np.eye(2), JITTER_LADDER)


def test_triangular_solve_hand_computed():
    L = np.array([[2.0, 0.0], [1.0, 4.0]])
    # L x = [4, 10] -> x = [2, 2]
    np.testing.assert_allclose(triangular_solve(L, [4.0, 10.0]), [2.0, 2.0])
    # L^T x = [4, 8] -> x1 = 2, x0 = (4 - 2) / 2 = 1
    np.testing.assert_allclose(triangular_solve(L, [4.0, 8.0], transposed=True), [1.0, 2.0])


def test_triangular_solve_rejects_zero_diagonal():
    with pytest.raises(SingularDiagonal):
        triangular_solve(np.array([[1.0, 0.0], [1.0, 0.0]]), [1.0, 1.0])


def test_triangular_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        triangular_solve(np.eye(3), np.ones(2))


def test_make_rng_is_deterministic_and_label_sensitive():
    a = make_rng(7, "train").standard_normal(5)
    b = make_rng(7, "train").standard_normal(5)
    c = make_rng(7, "acquisition").standard_normal(5)
    d = make_rng(8, "train").standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_make_rng_frozen_stream():
    # frozen: guards against accidental changes to seed derivation
    assert make_rng(0, "initial").uniform() == 0.9483366968771495


# ---------------------------------------------------------------- properties


def _spd(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    return M @ M.T + n * np.eye(n)


@given(st.integers(1, 12), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_cholesky_reconstructs_spd(n, seed):
    A = _spd(n, seed)
    L = cholesky(A)
    assert np.allclose(np.triu(L, 1), 0)
    assert np.all(np.diag(L) > 0)
    np.testing.assert_allclose(L @ L.T, A, rtol=1e-12, atol=1e-12 * n)


@given(st.integers(1, 12), st.integers(0, 10_000), st.integers(1, 3))
@settings(max_examples=60, deadline=None)
def test_solves_invert_factor(n, seed, k):
    A = _spd(n, seed)
    L = cholesky(A)
    B = np.random.default_rng(seed + 1).standard_normal((n, k))
    X = triangular_solve(L, triangular_solve(L, B), transposed=True)
    np.testing.assert_allclose(A @ X, B, atol=1e-9)


@given(arrays(np.float64, (4,), elements=st.floats(-10, 10)))
@settings(max_examples=40, deadline=None)
def test_diagonal_matrix_cholesky_is_sqrt(d):
    D = np.diag(np.abs(d) + 0.1)
    np.testing.assert_allclose(cholesky(D), np.sqrt(D), rtol=1e-15)
