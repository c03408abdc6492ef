"""Dense float64 math for the two-layer hashing network.

Matrices and vectors are plain ``numpy.ndarray`` objects in float64. All
elementwise functions accept arrays of any shape so they can be applied to
a batch of rows at once.
"""
import numpy as np
from scipy.special import expit, log_expit


def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def as_vector(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector contains non-finite entries")
    return x


def matvec(m, x):
    m = as_matrix(m)
    x = as_vector(x)
    if m.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {m.shape} @ ({x.shape[0]},)")
    return m @ x


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def sigmoid_grad(x):
    """Derivative of the sigmoid with respect to its input ``x``."""
    s = sigmoid(x)
    return s * (1.0 - s)


def log_sigmoid(x):
    return log_expit(np.asarray(x, dtype=np.float64))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_like_hinge_subgrad(x):
    """Subgradient of max(0, x); 0 at the kink."""
    return (np.asarray(x) > 0).astype(np.float64)


hinge = relu
hinge_subgrad = relu_like_hinge_subgrad


def softmax(scores, axis=-1):
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise ValueError("softmax of an empty score vector")
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(scores, axis=-1):
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise ValueError("softmax of an empty score vector")
    z = s - s.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
