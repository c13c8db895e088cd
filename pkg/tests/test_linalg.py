import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from romstack.linalg import damped_pinv, expm, expm_with_integral, null_space, row_basis

square = st.integers(1, 5).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-3, 3, allow_nan=False))
)


@given(square)
def test_expm_matches_scipy(a):
    ref = scipy.linalg.expm(a)
    assert np.allclose(expm(a), ref, rtol=1e-11, atol=1e-11 * max(1.0, np.abs(ref).max()))


def test_expm_zero_and_identity():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(expm(np.eye(2)), np.e * np.eye(2), rtol=1e-14)


def test_expm_rejects_non_square():
    with pytest.raises(ValueError):
        expm(np.zeros((2, 3)))


def test_expm_integral_matches_quadrature():
    a = np.array([[0.0, 1.25], [9.81, 0.0]])
    b = np.array([[0.3], [-0.7]])
    t = 0.37
    e, integral = expm_with_integral(a, b, t)
    s = np.linspace(0.0, t, 4001)
    vals = np.array([scipy.linalg.expm(a * si) @ b[:, 0] for si in s])
    quad = scipy.integrate.trapezoid(vals, s, axis=0)
    assert np.allclose(e, scipy.linalg.expm(a * t), atol=1e-12)
    assert np.allclose(integral[:, 0], quad, atol=1e-7)


def test_damped_pinv_regular_and_singular():
    a = np.array([[2.0, 0.0], [0.0, 0.5]])
    p, damped = damped_pinv(a)
    assert not damped and np.allclose(p, np.linalg.inv(a))
    sing = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-9]])
    p, damped = damped_pinv(sing)
    assert damped and np.all(np.isfinite(p)) and np.abs(p).max() < 1e7


def test_row_basis_redundant_rows(rng):
    a = rng.normal(size=(3, 5))
    a = np.vstack([a, a[0] + a[1]])
    x = rng.normal(size=5)
    a_r, b_r, res = row_basis(a, a @ x)
    assert a_r.shape == (3, 5) and res < 1e-12
    # same solution set: x satisfies the compressed system
    assert np.allclose(a_r @ x, b_r, atol=1e-12)
    _, _, res_bad = row_basis(a, a @ x + np.array([0, 0, 0, 1.0]))
    assert res_bad > 0.1


def test_null_space_orthonormal(rng):
    a = rng.normal(size=(2, 6))
    z = null_space(a)
    assert z.shape == (6, 4)
    assert np.allclose(a @ z, 0.0, atol=1e-12)
    assert np.allclose(z.T @ z, np.eye(4), atol=1e-12)
