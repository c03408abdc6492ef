import numpy as np
import pytest

from schgan.model import ModelConfig, init_net


def tiny_net(seed=0, image_dim=6, text_dim=5, inter=7, q=4, scale=1.0):
    rng = np.random.default_rng(seed)
    net = init_net(ModelConfig(image_dim, text_dim, inter, q), rng)
    for mod in ("image", "text"):
        p = net.pathway(mod)
        p.W1 *= scale
        p.W2 *= scale
        p.b1[:] = rng.normal(scale=0.1, size=p.b1.shape)
        p.b2[:] = rng.normal(scale=0.1, size=p.b2.shape)
    return net


def flat_params(net):
    return np.concatenate([a.ravel() for mod in ("image", "text")
                           for a in net.pathway(mod).arrays().values()])


def flat_grads(grads):
    out = []
    for mod in ("image", "text"):
        g = grads.get(mod)
        if g is None:
            raise KeyError(mod)
        out.extend(a.ravel() for a in g.arrays().values())
    return np.concatenate(out)


def finite_difference(fn, net, eps=1e-5):
    """Central differences of scalar fn(net) over every parameter of both pathways."""
    out = []
    for mod in ("image", "text"):
        for a in net.pathway(mod).arrays().values():
            g = np.zeros_like(a)
            for i in np.ndindex(a.shape):
                old = a[i]
                a[i] = old + eps
                fp = fn(net)
                a[i] = old - eps
                fm = fn(net)
                a[i] = old
                g[i] = (fp - fm) / (2 * eps)
            out.append(g.ravel())
    return np.concatenate(out)


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
