import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import rel_error
from schgan import tensor as T

finite = st.floats(-50, 50, allow_nan=False)


def test_matvec_examples():
    np.testing.assert_array_equal(T.matvec(np.eye(3), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_array_equal(T.matvec(np.zeros((2, 2)), [5, 7]), [0, 0])
    np.testing.assert_array_equal(T.matvec([[1, 2], [3, 4]], [1, 1]), [3, 7])


def test_matvec_dimension_mismatch():
    with pytest.raises(ValueError):
        T.matvec(np.ones((2, 3)), np.ones(2))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        T.as_matrix([[np.nan]])
    with pytest.raises(ValueError):
        T.as_vector([np.inf])


def test_sigmoid_examples():
    np.testing.assert_array_equal(T.sigmoid([0.0, 0.0]), [0.5, 0.5])
    big = T.sigmoid([1e6, -1e6])
    assert np.all(np.isfinite(big))
    assert big[0] == pytest.approx(1.0) and big[1] == pytest.approx(0.0)
    assert T.sigmoid(np.log(3.0)) == pytest.approx(0.75, abs=1e-15)


def test_softmax_examples():
    for c in (-1e3, 0.0, 7.5, 1e3):
        np.testing.assert_allclose(T.softmax([c, c]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(T.softmax([0.0, -np.log(2.0)]), [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_empty():
    with pytest.raises(ValueError):
        T.softmax([])


def test_hinge_subgrad_kink_is_zero():
    np.testing.assert_array_equal(T.hinge_subgrad([-1.0, 0.0, 2.0]), [0.0, 0.0, 1.0])


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_softmax_normalised(s):
    assert abs(T.softmax(s).sum() - 1.0) <= 1e-9


@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(-1e3, 1e3))
def test_softmax_shift_invariant(s, c):
    np.testing.assert_allclose(T.softmax(s + c), T.softmax(s), atol=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10), st.floats(-10, 10))
def test_matvec_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(4, 5))
    x, y = rng.normal(size=5), rng.normal(size=5)
    np.testing.assert_allclose(T.matvec(m, a * x + b * y),
                               a * T.matvec(m, x) + b * T.matvec(m, y), atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_elementwise_grads_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 4))
    eps = 1e-5
    fd = (T.sigmoid(x + eps) - T.sigmoid(x - eps)) / (2 * eps)
    assert rel_error(T.sigmoid_grad(x), fd) <= 1e-4
    fd = (T.softplus(x + eps) - T.softplus(x - eps)) / (2 * eps)
    assert rel_error(T.sigmoid(x), fd) <= 1e-4
    fd = (T.hinge(x + eps) - T.hinge(x - eps)) / (2 * eps)
    assert rel_error(T.hinge_subgrad(x), fd) <= 1e-4


def test_softmax_jacobian_matches_finite_differences(rng):
    s = rng.normal(size=5)
    p = T.softmax(s)
    jac = np.diag(p) - np.outer(p, p)
    eps = 1e-5
    fd = np.stack([(T.softmax(s + eps * e) - T.softmax(s - eps * e)) / (2 * eps)
                   for e in np.eye(5)], axis=1)
    assert rel_error(jac, fd) <= 1e-4
