import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pidsteer import linalg
from pidsteer.errors import InvalidInputError, UnstableSystemError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def square(n_min=1, n_max=5):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(float, (n, n), elements=finite))


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("bad", [np.zeros((0, 2)), np.array([[np.nan]]), np.array([[1.0, np.inf]])])
def test_as_mat_rejects(bad):
    with pytest.raises(InvalidInputError):
        linalg.as_mat(bad)


def test_as_vec_rejects_empty_and_nan():
    with pytest.raises(InvalidInputError):
        linalg.as_vec([])
    with pytest.raises(InvalidInputError):
        linalg.as_vec([1.0, np.nan])


def test_spectral_norm_empty_is_invalid():
    with pytest.raises(InvalidInputError):
        linalg.spectral_norm(np.zeros((0, 0)))


# ---------------------------------------------------------------- norms and spectra

def test_spectral_norm_examples():
    assert linalg.spectral_norm(np.eye(2)) == pytest.approx(1.0)
    assert linalg.spectral_norm(np.diag([3.0, -4.0])) == pytest.approx(4.0)
    m = np.array([[0.0, 2.0], [0.0, 0.0]])
    # oracle: sqrt of the largest eigenvalue of m' m
    assert linalg.spectral_norm(m) == pytest.approx(np.sqrt(np.max(np.linalg.eigvalsh(m.T @ m))))
    assert linalg.spectral_norm(m) == pytest.approx(2.0)


def test_spectral_radius_examples():
    assert linalg.spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9)
    assert linalg.spectral_radius(np.array([[0.0, -1.0], [1.0, 0.0]])) == pytest.approx(1.0)


def test_spectral_radius_pi_rate_matrix():
    # l^2 - 1.3 l + 0.5 = 0 has a complex pair of modulus sqrt(0.5)
    signed = np.array([[0.3, -0.2], [1.0, 1.0]])
    assert linalg.spectral_radius(signed) == pytest.approx(np.sqrt(0.5), abs=1e-12)
    assert linalg.spectral_radius(signed) == pytest.approx(0.70711, abs=1e-5)
    # the entrywise-nonnegative variant is not a contraction
    unsigned = np.array([[0.3, 0.2], [1.0, 1.0]])
    assert linalg.spectral_radius(unsigned) == pytest.approx((1.3 + np.sqrt(1.3 ** 2 - 4 * 0.1)) / 2)
    assert linalg.spectral_radius(unsigned) > 1


def test_spectral_radius_non_square():
    with pytest.raises(InvalidInputError):
        linalg.spectral_radius(np.ones((2, 3)))


@given(square(), square())
def test_norm_submultiplicative(a, b):
    n = min(a.shape[0], b.shape[0])
    a, b = a[:n, :n], b[:n, :n]
    lhs = linalg.spectral_norm(a @ b)
    rhs = linalg.spectral_norm(a) * linalg.spectral_norm(b)
    assert lhs <= rhs * (1 + 1e-12) + 1e-12


@given(square())
def test_radius_below_norm(m):
    assert linalg.spectral_radius(m) <= linalg.spectral_norm(m) * (1 + 1e-9) + 1e-12


# ---------------------------------------------------------------- pinv and projections

def test_pinv_examples():
    np.testing.assert_allclose(linalg.pinv(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(linalg.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pinv_full_column_rank_normal_equations():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 2))
    oracle = np.linalg.solve(a.T @ a, a.T)
    assert np.max(np.abs(linalg.pinv(a) - oracle)) <= 1e-9


def test_pinv_cutoff_drops_tiny_singular_values():
    m = np.diag([1.0, 1e-12])
    np.testing.assert_allclose(linalg.pinv(m), np.diag([1.0, 0.0]))


@given(st.tuples(st.integers(1, 5), st.integers(1, 5)).flatmap(lambda s: arrays(float, s, elements=finite)))
def test_pinv_penrose(m):
    p = linalg.pinv(m)
    assert np.all(np.isfinite(p))
    # singular values under the cutoff (relative, floored at the smallest normal float) are dropped
    dropped = min(m.shape) * np.finfo(float).tiny
    assert np.max(np.abs(m @ p @ m - m)) <= 1e-9 * linalg.spectral_norm(m) + dropped


def test_pinv_of_subnormal_matrix_is_zero():
    np.testing.assert_array_equal(linalg.pinv(np.array([[2.2e-309]])), [[0.0]])


def test_orthogonal_decompose_examples():
    par, perp = linalg.orthogonal_decompose([1.0, 1.0], np.eye(2))
    np.testing.assert_allclose(par, [1, 1])
    np.testing.assert_allclose(perp, [0, 0], atol=1e-15)
    par, perp = linalg.orthogonal_decompose([1.0, 1.0], np.diag([1.0, 0.0]))
    np.testing.assert_allclose(par, [1, 0])
    np.testing.assert_allclose(perp, [0, 1])


def test_orthogonal_decompose_rank_one():
    rng = np.random.default_rng(1)
    a = np.outer(rng.standard_normal(4), rng.standard_normal(4))
    w = rng.standard_normal(4)
    par, perp = linalg.orthogonal_decompose(w, a)
    np.testing.assert_allclose(par + perp, w, atol=1e-14)
    for _ in range(10):
        assert abs(perp @ (a @ rng.standard_normal(4))) <= 1e-10


def test_orthogonal_decompose_dim_mismatch():
    with pytest.raises(InvalidInputError):
        linalg.orthogonal_decompose([1.0, 2.0, 3.0], np.eye(2))


@given(arrays(float, 4, elements=finite), arrays(float, (4, 4), elements=finite))
def test_orthogonal_decompose_property(w, a):
    par, perp = linalg.orthogonal_decompose(w, a)
    np.testing.assert_allclose(par + perp, w, atol=1e-9)
    # w_perp is orthogonal to Im(a): a' w_perp vanishes relative to |a| |w|
    bound = 1e-9 * linalg.spectral_norm(a) * max(np.linalg.norm(w), 1.0)
    assert np.max(np.abs(a.T @ perp)) <= bound + 1e-300


# ---------------------------------------------------------------- Lyapunov

def test_lyapunov_examples():
    np.testing.assert_allclose(linalg.solve_discrete_lyapunov(np.zeros((2, 2)), np.eye(2)), np.eye(2))
    assert linalg.solve_discrete_lyapunov([[0.5]], [[1.0]])[0, 0] == pytest.approx(4.0 / 3.0, rel=1e-14)


def test_lyapunov_residual_and_scipy_oracle():
    rng = np.random.default_rng(2)
    m = rng.standard_normal((3, 3))
    m *= 0.9 / linalg.spectral_radius(m)
    p = linalg.solve_discrete_lyapunov(m, np.eye(3))
    assert linalg.spectral_norm(m.T @ p @ m - p + np.eye(3)) <= 1e-10
    # scipy solves A X A^H - X + Q = 0, so pass m transposed
    np.testing.assert_allclose(p, scipy.linalg.solve_discrete_lyapunov(m.T, np.eye(3)), rtol=1e-9, atol=1e-9)


def stable_matrices():
    return square(1, 4).filter(lambda m: np.any(m)).map(
        lambda m: m * (0.95 / max(linalg.spectral_radius(m), 1e-3)) if linalg.spectral_radius(m) > 0.95 else m
    ).filter(lambda m: linalg.spectral_radius(m) < 0.96)


@settings(max_examples=60, deadline=None)
@given(stable_matrices())
def test_lyapunov_solution_properties(m):
    q = np.eye(m.shape[0])
    p = linalg.solve_discrete_lyapunov(m, q)
    assert np.max(np.abs(p - p.T)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(p)) > 0
    resid = m.T @ p @ m - p + q
    assert linalg.spectral_norm(resid) <= 1e-10 * max(1.0, linalg.spectral_norm(p))


def test_lyapunov_unstable():
    with pytest.raises(UnstableSystemError):
        linalg.solve_discrete_lyapunov(np.diag([1.0, 0.2]), np.eye(2))


@pytest.mark.parametrize("q", [np.array([[1.0, 0.5], [0.0, 1.0]]), np.diag([1.0, -1.0])])
def test_lyapunov_rejects_bad_q(q):
    with pytest.raises(InvalidInputError):
        linalg.solve_discrete_lyapunov(np.zeros((2, 2)), q)


# ---------------------------------------------------------------- Gelfand envelope

@settings(max_examples=40, deadline=None)
@given(stable_matrices(), st.floats(0.05, 0.95))
def test_gelfand_envelope(m, t):
    r = linalg.spectral_radius(m)
    rho = r + t * (1 - r)
    # ||m^k|| <= C rho^k  <=>  ||(m / rho)^k|| <= C, which avoids underflow of rho^k
    scaled = linalg.matrix_powers_norms(m / rho, 500)
    c = max(1.0, max(scaled))
    assert all(nk <= c * (1 + 1e-12) for nk in scaled[:201])


def test_matrix_powers_norms():
    assert linalg.matrix_powers_norms(np.diag([0.5, 0.25]), 3) == pytest.approx([1, 0.5, 0.25, 0.125])
