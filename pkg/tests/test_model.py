import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel_error, tiny_net
from schgan import model as M


def test_zero_net_outputs_half():
    net = M.zero_net(M.ModelConfig(3, 2, 4, 8))
    tr = M.forward(net.image, np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(tr.h, np.full(8, 0.5))


def test_forward_hand_computed():
    # x=[1,2]; layer1 W1=[[1,0],[0,-1]], b1=[0,1] -> pre1=[1,-1], relu=[1,0]
    # layer2 W2=[[2],[5]], b2=[-1] -> pre2=1 -> h=sigmoid(1)
    p = M.PathwayParams([[1, 0], [0, -1]], [0, 1], [[2], [5]], [-1])
    tr = M.forward(p, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(tr.pre1, [1.0, -1.0])
    np.testing.assert_array_equal(tr.post1, [1.0, 0.0])
    assert tr.h[0] == pytest.approx(1 / (1 + np.exp(-1.0)), abs=1e-15)


def test_forward_deterministic_and_in_unit_interval(rng):
    net = tiny_net()
    x = rng.normal(size=(10, 6))
    a, b = M.forward(net.image, x), M.forward(net.image, x)
    np.testing.assert_array_equal(a.h, b.h)
    assert np.all((a.h > 0) & (a.h < 1))


def test_forward_dim_mismatch():
    with pytest.raises(ValueError):
        M.forward(tiny_net().image, np.ones(3))


def test_model_config_validation():
    with pytest.raises(ValueError):
        M.ModelConfig(0, 3, 4, 8)
    with pytest.raises(ValueError):
        M.ModelConfig(3, 3, 4, 257)


def test_binarize_examples():
    np.testing.assert_array_equal(M.binarize([0.2, 0.8]).to_bits(), [0, 1])
    np.testing.assert_array_equal(M.binarize([0.5, 0.5]).to_bits(), [1, 1])
    code = M.binarize([0.49] * 12)
    assert code.q == 12 and not code.bits.any()


def test_hash_code_padding_rejected():
    with pytest.raises(ValueError):
        M.HashCode(4, np.array([0xF0], dtype=np.uint8))


def test_hamming_examples():
    rng = np.random.default_rng(3)
    a = M.HashCode.from_bits(rng.integers(0, 2, 16))
    assert M.hamming(a, a) == 0
    comp = M.HashCode.from_bits(1 - a.to_bits())
    assert M.hamming(a, comp) == 16
    bits = np.zeros(16, dtype=np.uint8)
    flipped = bits.copy()
    flipped[[1, 5, 9]] = 1
    assert M.hamming(M.HashCode.from_bits(bits), M.HashCode.from_bits(flipped)) == 3


def test_hamming_length_mismatch():
    with pytest.raises(ValueError):
        M.hamming(M.binarize([0.1] * 8), M.binarize([0.1] * 9))


codes = st.lists(st.integers(0, 1), min_size=37, max_size=37)


@given(codes, codes, codes)
def test_hamming_is_a_metric(a, b, c):
    a, b, c = (M.HashCode.from_bits(x) for x in (a, b, c))
    assert M.hamming(a, b) == M.hamming(b, a)
    assert (M.hamming(a, b) == 0) == (a == b)
    assert M.hamming(a, c) <= M.hamming(a, b) + M.hamming(b, c)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1))
def test_binarize_stable_under_small_perturbation(h, frac):
    h = np.array(h)
    code = M.binarize(h)
    assert M.binarize(code.to_bits().astype(float)) == code
    gap = np.abs(h - 0.5)
    below = h < 0.5
    # perturb towards the threshold without crossing it
    delta = frac * gap * 0.999
    moved = np.where(below, h + delta, h - delta)
    moved = np.where(below, np.minimum(moved, np.nextafter(0.5, 0)), np.maximum(moved, 0.5))
    assert M.binarize(moved) == code


def test_hamming_matrix_matches_pairwise(rng):
    a = M.binarize(rng.random((5, 20)))
    b = M.binarize(rng.random((7, 20)))
    d = M.hamming_matrix(a, b)
    for i in range(5):
        for j in range(7):
            assert d[i, j] == M.hamming(a[i], b[j])


def _pathway_loss(p, x, w):
    return float((M.forward(p, x).h * w).sum())


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("modality", ["image", "text"])
def test_backward_matches_finite_differences(seed, modality):
    rng = np.random.default_rng(seed)
    net = tiny_net(seed)
    p = net.pathway(modality)
    x = rng.normal(size=(3, p.input_dim))
    w = rng.normal(size=(3, p.code_length))
    g = M.backward(p, M.forward(p, x), w)
    eps = 1e-5
    for name, a in p.arrays().items():
        fd = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            old = a[i]
            a[i] = old + eps
            fp = _pathway_loss(p, x, w)
            a[i] = old - eps
            fm = _pathway_loss(p, x, w)
            a[i] = old
            fd[i] = (fp - fm) / (2 * eps)
        assert rel_error(g.arrays()[name], fd) <= 1e-4, name
    fdx = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        fdx[i] = (_pathway_loss(p, xp, w) - _pathway_loss(p, xm, w)) / (2 * eps)
    assert rel_error(g.x, fdx) <= 1e-4


def test_backward_zero_and_linear(rng):
    p = tiny_net().image
    x = rng.normal(size=(4, 6))
    tr = M.forward(p, x)
    g0 = M.backward(p, tr, np.zeros((4, 4)))
    for a in g0.arrays().values():
        assert not a.any()
    gh = rng.normal(size=(4, 4))
    g1, g3 = M.backward(p, tr, gh), M.backward(p, tr, 3.0 * gh)
    for k in g1.arrays():
        np.testing.assert_allclose(g3.arrays()[k], 3.0 * g1.arrays()[k], rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        M.backward(p, tr, np.zeros((4, 3)))


def test_glorot_init_range():
    net = M.init_net(M.ModelConfig(30, 20, 10, 8), np.random.default_rng(0))
    a = np.sqrt(6 / 40)
    assert np.abs(net.image.W1).max() <= a
    assert not net.image.b1.any() and not net.text.b2.any()


def test_checkpoint_round_trip_bit_exact(tmp_path):
    theta, phi = tiny_net(1), tiny_net(2)
    path = tmp_path / "ck.json"
    M.save_checkpoint(path, {"generator": theta, "discriminator": phi}, {"epochs_done": 3})
    models, state = M.load_checkpoint(path)
    assert state == {"epochs_done": 3}
    for name, net in (("generator", theta), ("discriminator", phi)):
        got = models[name]
        assert got.config == net.config
        for mod in M.MODALITIES:
            for k, a in net.pathway(mod).arrays().items():
                b = got.pathway(mod).arrays()[k]
                assert a.tobytes() == b.tobytes()
    assert models["generator"].checksum() == theta.checksum()
    M.save_checkpoint(tmp_path / "again.json", models, state)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        M.load_checkpoint(p)
