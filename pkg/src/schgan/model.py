"""Two-pathway hashing network.

Each pathway maps a precomputed feature vector through an intermediate
fully-connected ReLU layer and a sigmoid hash layer of width ``q``:

    f(x) = relu(x @ W1 + b1)
    h(x) = sigmoid(f(x) @ W2 + b2)          h(x) in (0, 1)^q

Binary codes threshold ``h`` at 0.5 (``h_k >= 0.5`` gives bit 1) and are
packed eight bits per byte, little bit order: bit ``k`` lives in byte
``k // 8`` at position ``k % 8``. Padding bits are zero.
"""
import base64
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels
from .tensor import relu, sigmoid

MODALITIES = ("image", "text")

CHECKPOINT_FORMAT = "schgan-checkpoint"
CHECKPOINT_VERSION = 1


def other_modality(modality):
    check_modality(modality)
    return "text" if modality == "image" else "image"


def check_modality(modality):
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of {MODALITIES}")


@dataclass(frozen=True)
class ModelConfig:
    image_input_dim: int
    text_input_dim: int
    inter_dim: int = 4096
    code_length: int = 16

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")
        if self.code_length > 256:
            raise ValueError(f"code_length must be <= 256, got {self.code_length}")

    def input_dim(self, modality):
        check_modality(modality)
        return self.image_input_dim if modality == "image" else self.text_input_dim


@dataclass
class PathwayParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.W1.ndim != 2 or self.W2.ndim != 2:
            raise ValueError("W1 and W2 must be matrices")
        if self.b1.shape != (self.W1.shape[1],) or self.W2.shape[0] != self.W1.shape[1] \
                or self.b2.shape != (self.W2.shape[1],):
            raise ValueError(
                f"inconsistent pathway shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}")

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def code_length(self):
        return self.W2.shape[1]

    def arrays(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self):
        return PathwayParams(**{k: v.copy() for k, v in self.arrays().items()})


@dataclass
class PathwayGrads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    x: np.ndarray = None

    def arrays(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre1: np.ndarray
    post1: np.ndarray
    pre2: np.ndarray
    h: np.ndarray


@dataclass
class TwoPathwayNet:
    image: PathwayParams
    text: PathwayParams
    config: ModelConfig

    def __post_init__(self):
        c = self.config
        for mod in MODALITIES:
            p = self.pathway(mod)
            if p.input_dim != c.input_dim(mod) or p.W1.shape[1] != c.inter_dim \
                    or p.code_length != c.code_length:
                raise ValueError(f"{mod} pathway shapes do not match {c}")

    def pathway(self, modality):
        check_modality(modality)
        return self.image if modality == "image" else self.text

    def hash(self, modality, x):
        return forward(self.pathway(modality), x).h

    def copy(self):
        return TwoPathwayNet(self.image.copy(), self.text.copy(), self.config)

    def checksum(self):
        d = hashlib.sha256()
        for mod in MODALITIES:
            for a in self.pathway(mod).arrays().values():
                d.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return d.hexdigest()


def init_pathway(input_dim, inter_dim, q, rng):
    """Uniform Glorot weights, zero biases."""
    def glorot(fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_in, fan_out))
    return PathwayParams(glorot(input_dim, inter_dim), np.zeros(inter_dim),
                         glorot(inter_dim, q), np.zeros(q))


def init_net(config, rng):
    image = init_pathway(config.image_input_dim, config.inter_dim, config.code_length, rng)
    text = init_pathway(config.text_input_dim, config.inter_dim, config.code_length, rng)
    return TwoPathwayNet(image, text, config)


def zero_net(config):
    def z(d):
        return PathwayParams(np.zeros((d, config.inter_dim)), np.zeros(config.inter_dim),
                             np.zeros((config.inter_dim, config.code_length)),
                             np.zeros(config.code_length))
    return TwoPathwayNet(z(config.image_input_dim), z(config.text_input_dim), config)


def forward(p, x):
    """Run one pathway on a feature vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.input_dim:
        raise ValueError(f"feature dim {x.shape[-1]} does not match pathway input dim {p.input_dim}")
    pre1 = x @ p.W1 + p.b1
    post1 = relu(pre1)
    pre2 = post1 @ p.W2 + p.b2
    return ForwardTrace(x, pre1, post1, pre2, sigmoid(pre2))


def backward(p, trace, grad_h):
    """Backpropagate dL/dh through one pathway.

    Batched traces sum parameter gradients over rows; the input gradient
    keeps the batch shape.
    """
    grad_h = np.asarray(grad_h, dtype=np.float64)
    if grad_h.shape != trace.h.shape:
        raise ValueError(f"grad_h shape {grad_h.shape} != hash output shape {trace.h.shape}")
    g2 = grad_h * trace.h * (1.0 - trace.h)
    g1 = (g2 @ p.W2.T) * (trace.pre1 > 0)
    x2 = np.atleast_2d(trace.x)
    p1 = np.atleast_2d(trace.post1)
    G1 = np.atleast_2d(g1)
    G2 = np.atleast_2d(g2)
    return PathwayGrads(W1=x2.T @ G1, b1=G1.sum(axis=0), W2=p1.T @ G2,
                        b2=G2.sum(axis=0), x=g1 @ p.W1.T)


def apply_update(net, grads, step):
    """Return ``net`` with ``param + step * grad`` applied per pathway.

    ``grads`` maps modality to :class:`PathwayGrads`; missing modalities are
    left untouched. Pass a negative ``step`` for descent.
    """
    out = {}
    for mod in MODALITIES:
        p = net.pathway(mod)
        g = grads.get(mod)
        if g is None:
            out[mod] = p
            continue
        out[mod] = PathwayParams(**{k: v + step * g.arrays()[k] for k, v in p.arrays().items()})
    return TwoPathwayNet(out["image"], out["text"], net.config)


# --------------------------------------------------------------- hash codes

@dataclass(frozen=True)
class HashCode:
    """Packed binary code(s) of ``q`` bits; ``bits`` is (nbytes,) or (n, nbytes)."""
    q: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.shape[-1] != nbytes(self.q):
            raise ValueError(f"{bits.shape[-1]} bytes cannot hold a {self.q}-bit code")
        pad = nbytes(self.q) * 8 - self.q
        if pad and np.any(bits[..., -1] >> (8 - pad)):
            raise ValueError("padding bits must be zero")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return 1 if self.bits.ndim == 1 else self.bits.shape[0]

    def __getitem__(self, i):
        if self.bits.ndim == 1:
            raise TypeError("single code is not indexable")
        return HashCode(self.q, self.bits[i])

    def __eq__(self, other):
        return isinstance(other, HashCode) and self.q == other.q \
            and np.array_equal(self.bits, other.bits)

    def to_bits(self):
        return np.unpackbits(self.bits, axis=-1, count=self.q, bitorder="little")

    @classmethod
    def from_bits(cls, bits):
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits.shape[-1], np.packbits(bits, axis=-1, bitorder="little"))


def nbytes(q):
    return (q + 7) // 8


def binarize(h):
    h = np.asarray(h, dtype=np.float64)
    return HashCode.from_bits((h >= 0.5).astype(np.uint8))


def hamming(a, b):
    """Hamming distance between two single codes (XOR + popcount)."""
    if a.q != b.q:
        raise ValueError(f"code length mismatch: {a.q} vs {b.q}")
    if a.bits.ndim != 1 or b.bits.ndim != 1:
        raise ValueError("hamming() takes single codes; use hamming_matrix for batches")
    return int(kernels.POPCOUNT8[np.bitwise_xor(a.bits, b.bits)].sum())


def hamming_matrix(a, b):
    """All pairwise distances between the rows of two code batches."""
    if a.q != b.q:
        raise ValueError(f"code length mismatch: {a.q} vs {b.q}")
    return kernels.hamming_matrix(np.atleast_2d(a.bits), np.atleast_2d(b.bits))


def encode(net, modality, x):
    return binarize(net.hash(modality, x))


# --------------------------------------------------------------- checkpoints

def _pack_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack_array(d):
    if d.get("dtype") != "<f8":
        raise ValueError(f"unsupported checkpoint dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def net_to_dict(net):
    return {mod: {k: _pack_array(v) for k, v in net.pathway(mod).arrays().items()}
            for mod in MODALITIES}


def net_from_dict(d, config):
    paths = {mod: PathwayParams(**{k: _unpack_array(d[mod][k]) for k in ("W1", "b1", "W2", "b2")})
             for mod in MODALITIES}
    return TwoPathwayNet(paths["image"], paths["text"], config)


def dumps_checkpoint(models, state=None):
    config = next(iter(models.values())).config
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(config),
        "models": {name: net_to_dict(net) for name, net in models.items()},
        "state": state or {},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(path, models, state=None):
    """Write ``{"generator": net, "discriminator": net, ...}`` plus training state."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_checkpoint(models, state))


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    config = ModelConfig(**doc["model_config"])
    models = {name: net_from_dict(d, config) for name, d in doc["models"].items()}
    return models, doc.get("state", {})


# ---------------------------------------------------------------- code files
#
# bytes 0..3 magic b"SCHC"; 4..7 uint32 count; 8..11 uint32 q (bits);
# then count rows of ceil(q/8) packed bytes (little bit order), all LE.

CODE_MAGIC = b"SCHC"


def write_codes(path, codes):
    bits = np.atleast_2d(codes.bits)
    with open(path, "wb") as fh:
        fh.write(CODE_MAGIC + struct.pack("<II", bits.shape[0], codes.q))
        fh.write(np.ascontiguousarray(bits, dtype=np.uint8).tobytes())


def read_codes(path):
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != CODE_MAGIC:
            raise ValueError(f"{path}: bad code file header")
        count, q = struct.unpack("<II", head[4:])
        raw = fh.read()
    if len(raw) != count * nbytes(q):
        raise ValueError(f"{path}: expected {count} codes of {q} bits")
    return HashCode(q, np.frombuffer(raw, dtype=np.uint8).reshape(count, nbytes(q)).copy())
