import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_spd
from lqmfg import matlin
from lqmfg.errors import DimensionMismatch, NonSymmetric, NotSPD, Unstable

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_symmetry_and_definiteness():
    assert matlin.is_symmetric([[1, 2], [2, 3]])
    assert not matlin.is_symmetric([[1, 2], [2.1, 3]])
    assert not matlin.is_symmetric(np.ones((2, 3)))
    assert matlin.is_spd(np.eye(3))
    assert not matlin.is_spd(np.diag([1.0, 0.0]))
    assert matlin.is_psd(np.diag([1.0, 0.0]))
    assert not matlin.is_psd(np.diag([1.0, -1.0]))


def test_as_square_rejects_bad_shapes():
    with pytest.raises(DimensionMismatch):
        matlin.as_square(np.ones((2, 3)))
    with pytest.raises(ValueError):
        matlin.as_matrix([[np.nan]])


def test_spectral_norm():
    assert matlin.spectral_norm(np.diag([-3.0, 2.0])) == pytest.approx(3.0)
    with pytest.raises(NonSymmetric):
        matlin.spectral_norm([[0, 1], [0, 0]])


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 4), elements=finite))
def test_spd_sqrt_squares_back(X):
    M = X @ X.T + np.eye(4)
    E = matlin.spd_sqrt(M)
    assert matlin.is_spd(E)
    np.testing.assert_allclose(E @ E, M, atol=1e-9 * (1 + np.abs(M).max()))


def test_spd_sqrt_rejects_indefinite():
    with pytest.raises(NotSPD):
        matlin.spd_sqrt(np.diag([1.0, -1.0]))


def test_lyapunov_matches_scipy(rng):
    for d in range(1, 6):
        M = rng.normal(size=(d, d)) - 3.0 * np.eye(d)
        C = random_spd(rng, d)
        V = matlin.solve_lyapunov(M, C)
        # scipy solves M X + X M^H = Q
        np.testing.assert_allclose(V, scipy.linalg.solve_continuous_lyapunov(M, -C), atol=1e-10)
        assert np.abs(M @ V + V @ M.T + C).max() < 1e-10


def test_lyapunov_unstable():
    with pytest.raises(Unstable):
        matlin.solve_lyapunov(np.eye(2), np.eye(2))
    with pytest.raises(Unstable):
        matlin.solve_lyapunov(np.zeros((1, 1)), np.eye(1))


def test_rank_consistency():
    B = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert matlin.rank_consistent(B, [1.0, 0.0]).consistent
    r = matlin.rank_consistent(B, [1.0, 1.0])
    assert (r.rank_B, r.rank_BP, r.consistent) == (1, 2, False)
    assert matlin.rank_consistent(np.zeros((2, 2)), np.zeros(2)).consistent
    with pytest.raises(DimensionMismatch):
        matlin.rank_consistent(B, [1.0])


def test_null_space_and_min_norm(rng):
    U = rng.normal(size=(5, 3))
    B = U @ rng.normal(size=(3, 5))
    K = matlin.null_space(B)
    assert K.shape == (2, 5)
    np.testing.assert_allclose(B @ K.T, 0, atol=1e-10)
    np.testing.assert_allclose(K @ K.T, np.eye(2), atol=1e-12)
    P = B @ rng.normal(size=5)
    x = matlin.min_norm_solve(B, P)
    np.testing.assert_allclose(x, np.linalg.pinv(B) @ P, atol=1e-10)
    np.testing.assert_allclose(K @ x, 0, atol=1e-10)


def test_spectral_report():
    r = matlin.spectral_report(np.diag([-1.0, -2.0]))
    assert r.min_real_part == -2.0 and r.is_symmetric and not r.is_spd
    assert matlin.is_stable(np.diag([-1.0, -2.0]))
    assert not matlin.is_stable(np.zeros((2, 2)))
