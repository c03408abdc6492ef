"""Datasets of paired image/text feature vectors.

On-disk layout (one directory per dataset)::

    manifest.json    index of everything below
    image.feat       image features
    text.feat        text features
    labels.json      {"<id>": [label index, ...]} for the labeled split only

Feature files are a 12-byte header followed by row-major float32 values,
all little-endian::

    bytes 0..3   magic b"SCHF"
    bytes 4..7   uint32 row count
    bytes 8..11  uint32 dimension
    bytes 12..   count * dim float32

Row ``r`` of both feature files belongs to item ``manifest["ids"][r]``.
Ground-truth labels of unlabeled and query items live only in the
manifest's ``evaluation`` section and are never exposed to the trainer.
"""
import hashlib
import json
import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from .model import check_modality

FEATURE_MAGIC = b"SCHF"
MANIFEST_FORMAT = "schgan-dataset"
MANIFEST_VERSION = 1
SPLITS = ("labeled", "unlabeled", "query")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


# ------------------------------------------------------------ feature files

def write_features(path, x):
    x = np.ascontiguousarray(x, dtype="<f4")
    if x.ndim != 2:
        raise ValueError("feature matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", *x.shape))
        fh.write(x.tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != FEATURE_MAGIC:
            raise DatasetError(f"{path}: bad feature file header")
        count, dim = struct.unpack("<II", head[4:])
        raw = fh.read()
    if len(raw) != count * dim * 4:
        raise DatasetError(f"{path}: expected {count}x{dim} float32 values, "
                           f"found {len(raw)} bytes")
    x = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise DatasetError(f"{path}: non-finite feature values")
    return x


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------------ dataset

@dataclass(frozen=True)
class LabeledItem:
    id: int
    image: np.ndarray
    text: np.ndarray
    labels: frozenset


@dataclass(frozen=True)
class UnlabeledItem:
    id: int
    image: np.ndarray
    text: np.ndarray


class Dataset:
    """Immutable paired features with labeled/unlabeled/query splits.

    ``labels`` is an (N, C) boolean matrix aligned with the feature rows.
    Rows outside the labeled split hold evaluation-only ground truth (all
    false when unknown).
    """

    def __init__(self, ids, image, text, labels, splits, label_vocabulary=None):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.image = np.asarray(image, dtype=np.float64)
        self.text = np.asarray(text, dtype=np.float64)
        self._labels = np.asarray(labels, dtype=bool)
        n = self.ids.shape[0]
        if self.image.shape[0] != n or self.text.shape[0] != n or self._labels.shape[0] != n:
            raise DatasetError("feature, label and id counts differ")
        if np.unique(self.ids).size != n:
            raise DatasetError("duplicate item ids")
        if not (np.all(np.isfinite(self.image)) and np.all(np.isfinite(self.text))):
            raise DatasetError("non-finite feature values")
        self.label_vocabulary = list(label_vocabulary) if label_vocabulary is not None \
            else [str(i) for i in range(self._labels.shape[1])]
        if len(self.label_vocabulary) != self._labels.shape[1]:
            raise DatasetError("label vocabulary size does not match label matrix")
        self.splits = {}
        seen = np.zeros(n, dtype=int)
        for name in SPLITS:
            rows = np.asarray(splits.get(name, ()), dtype=np.int64)
            if rows.size and (rows.min() < 0 or rows.max() >= n):
                raise DatasetError(f"split {name!r} references rows outside the dataset")
            seen[rows] += 1
            self.splits[name] = rows
        if np.any(seen > 1):
            raise DatasetError("splits overlap")
        if np.any(seen == 0):
            raise DatasetError("items not assigned to any split")
        if self.splits["labeled"].size and not np.all(self._labels[self.splits["labeled"]].any(axis=1)):
            raise DatasetError("labeled items must carry at least one label")
        for a in (self.ids, self.image, self.text, self._labels):
            a.flags.writeable = False
        for rows in self.splits.values():
            rows.flags.writeable = False

    def __len__(self):
        return self.ids.shape[0]

    @property
    def num_classes(self):
        return self._labels.shape[1]

    @property
    def image_dim(self):
        return self.image.shape[1]

    @property
    def text_dim(self):
        return self.text.shape[1]

    def features(self, modality):
        check_modality(modality)
        return self.image if modality == "image" else self.text

    def split_size(self, name):
        return self.splits[name].size

    def training_view(self):
        return TrainingView(self)

    # evaluation-side accessors: these may read hidden labels
    def database_rows(self):
        """Rows of the retrieval database (labeled and unlabeled splits)."""
        return np.sort(np.concatenate([self.splits["labeled"], self.splits["unlabeled"]]))

    def query_rows(self):
        return self.splits["query"]

    def evaluation_labels(self, rows):
        lab = self._labels[rows]
        return lab

    def has_evaluation_labels(self):
        return bool(self._labels.any(axis=1).all())

    def labeled_items(self):
        for r in self.splits["labeled"]:
            yield LabeledItem(int(self.ids[r]), self.image[r], self.text[r],
                              frozenset(np.flatnonzero(self._labels[r]).tolist()))

    def row_of(self):
        return {int(i): r for r, i in enumerate(self.ids)}


class TrainingView:
    """What the trainer may see: labeled items with labels, unlabeled features only.

    Reads of unlabeled features are recorded in ``unlabeled_reads``.
    """

    def __init__(self, dataset):
        self._ds = dataset
        rows = dataset.splits["labeled"]
        self.labeled_ids = dataset.ids[rows]
        self.labeled_image = dataset.image[rows]
        self.labeled_text = dataset.text[rows]
        self.labeled_labels = dataset._labels[rows]
        self.unlabeled_ids = dataset.ids[dataset.splits["unlabeled"]]
        self.unlabeled_reads = 0

    @property
    def num_labeled(self):
        return self.labeled_ids.size

    @property
    def num_unlabeled(self):
        return self.unlabeled_ids.size

    def labeled(self, modality):
        check_modality(modality)
        return self.labeled_image if modality == "image" else self.labeled_text

    def unlabeled(self, modality):
        check_modality(modality)
        self.unlabeled_reads += 1
        return self._ds.features(modality)[self._ds.splits["unlabeled"]]

    def unlabeled_items(self):
        self.unlabeled_reads += 1
        ds = self._ds
        for r in ds.splits["unlabeled"]:
            yield UnlabeledItem(int(ds.ids[r]), ds.image[r], ds.text[r])


# ---------------------------------------------------------------- manifests

def save_dataset(dataset, out_dir):
    """Write ``dataset`` to ``out_dir``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    write_features(os.path.join(out_dir, "image.feat"), dataset.image)
    write_features(os.path.join(out_dir, "text.feat"), dataset.text)
    ids = [int(i) for i in dataset.ids]
    lab = dataset._labels

    def label_list(r):
        return [int(c) for c in np.flatnonzero(lab[r])]

    labels = {str(ids[r]): label_list(r) for r in dataset.splits["labeled"]}
    with open(os.path.join(out_dir, "labels.json"), "w", encoding="utf-8") as fh:
        json.dump(labels, fh, sort_keys=True)
        fh.write("\n")
    hidden = {str(ids[r]): label_list(r)
              for name in ("unlabeled", "query") for r in dataset.splits[name]
              if lab[r].any()}
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "count": len(ids),
        "ids": ids,
        "features": {
            mod: {"path": f"{mod}.feat", "dim": int(dataset.features(mod).shape[1]),
                  "sha256": _sha256(os.path.join(out_dir, f"{mod}.feat"))}
            for mod in ("image", "text")
        },
        "labels": {"path": "labels.json",
                   "sha256": _sha256(os.path.join(out_dir, "labels.json"))},
        "label_vocabulary": dataset.label_vocabulary,
        "splits": {name: [ids[r] for r in dataset.splits[name]] for name in SPLITS},
        "evaluation": {"labels": hidden},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def load_dataset(manifest_path):
    """Load and validate a dataset; every error names the offending file."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"{manifest_path}: cannot read manifest: {e}") from e
    if man.get("format") != MANIFEST_FORMAT:
        raise DatasetError(f"{manifest_path}: not a {MANIFEST_FORMAT} manifest")
    if man.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{manifest_path}: unsupported version {man.get('version')}")
    try:
        ids = [int(i) for i in man["ids"]]
        count = int(man["count"])
        vocab = list(man["label_vocabulary"])
        feat_spec = man["features"]
        splits_spec = man["splits"]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{manifest_path}: missing or malformed field: {e}") from e
    if len(ids) != count:
        raise DatasetError(f"{manifest_path}: 'ids' has {len(ids)} entries, count is {count}")
    row = {}
    for r, i in enumerate(ids):
        if i in row:
            raise DatasetError(f"{manifest_path}: duplicate id {i}")
        row[i] = r

    feats = {}
    for mod in ("image", "text"):
        spec = feat_spec[mod]
        path = os.path.join(base, spec["path"])
        if not os.path.exists(path):
            raise DatasetError(f"{path}: feature file missing")
        if "sha256" in spec and _sha256(path) != spec["sha256"]:
            raise DatasetError(f"{path}: checksum mismatch")
        x = read_features(path)
        if x.shape[0] != count:
            raise DatasetError(f"{path}: {x.shape[0]} rows, manifest count is {count}")
        if x.shape[1] != int(spec["dim"]):
            raise DatasetError(f"{path}: feature dim {x.shape[1]}, manifest says {spec['dim']}")
        feats[mod] = x

    labels_path = os.path.join(base, man["labels"]["path"])
    if "sha256" in man["labels"] and os.path.exists(labels_path) \
            and _sha256(labels_path) != man["labels"]["sha256"]:
        raise DatasetError(f"{labels_path}: checksum mismatch")
    try:
        with open(labels_path, encoding="utf-8") as fh:
            public = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"{labels_path}: cannot read labels: {e}") from e

    lab = np.zeros((count, len(vocab)), dtype=bool)

    def fill(where, mapping):
        for key, cls in mapping.items():
            i = int(key)
            if i not in row:
                raise DatasetError(f"{where}: label entry for unknown id {i}")
            cls = list(cls)
            if not cls:
                raise DatasetError(f"{where}: id {i} has an empty label list")
            for c in cls:
                if not 0 <= int(c) < len(vocab):
                    raise DatasetError(f"{where}: id {i} has label {c} outside the vocabulary")
                lab[row[i], int(c)] = True

    fill(labels_path, public)
    fill(f"{manifest_path} [evaluation]", man.get("evaluation", {}).get("labels", {}))

    splits = {}
    for name in SPLITS:
        members = splits_spec.get(name, [])
        rows = []
        for i in members:
            if int(i) not in row:
                raise DatasetError(f"{manifest_path}: split {name!r} references unknown id {i}")
            rows.append(row[int(i)])
        if len(set(rows)) != len(rows):
            raise DatasetError(f"{manifest_path}: duplicate ids in split {name!r}")
        splits[name] = rows
    labeled_ids = {ids[r] for r in splits["labeled"]}
    extra = {int(k) for k in public} - labeled_ids
    if extra:
        raise DatasetError(f"{labels_path}: labels given for non-labeled ids {sorted(extra)[:5]}")
    missing = labeled_ids - {int(k) for k in public}
    if missing:
        raise DatasetError(f"{labels_path}: labeled ids without labels {sorted(missing)[:5]}")
    try:
        return Dataset(ids, feats["image"], feats["text"], lab, splits, vocab)
    except DatasetError as e:
        raise DatasetError(f"{manifest_path}: {e}") from e


# ---------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 5
    latent_dim: int = 16
    image_dim: int = 128
    text_dim: int = 64
    noise: float = 0.2
    num_labeled: int = 500
    num_unlabeled: int = 2000
    num_query: int = 250
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "noise":
                if not np.isfinite(v) or v < 0:
                    raise ValueError(f"noise must be a finite value >= 0, got {v!r}")
            elif f.name == "seed":
                if not isinstance(v, (int, np.integer)) or v < 0:
                    raise ValueError(f"seed must be a non-negative integer, got {v!r}")
            elif not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")


def synth_generate(cfg, return_latent=False):
    """Gaussian class clusters in a latent space, seen through two random linear maps.

    ``z = center[c] + noise * N(0, I)``; image = ``z @ A + noise * N(0, I)``,
    text = ``z @ B + noise * N(0, I)``. Features are rounded to float32 so a
    save/load round trip is exact.
    """
    rng = np.random.default_rng(cfg.seed)
    C, L = cfg.num_classes, cfg.latent_dim
    centers = rng.normal(size=(C, L))
    A = rng.normal(size=(L, cfg.image_dim)) / np.sqrt(L)
    B = rng.normal(size=(L, cfg.text_dim)) / np.sqrt(L)
    counts = (cfg.num_labeled, cfg.num_unlabeled, cfg.num_query)
    cls = np.concatenate([rng.permutation(np.arange(n) % C) for n in counts])
    n = cls.size
    z = centers[cls] + cfg.noise * rng.normal(size=(n, L))
    image = z @ A + cfg.noise * rng.normal(size=(n, cfg.image_dim))
    text = z @ B + cfg.noise * rng.normal(size=(n, cfg.text_dim))
    image = image.astype(np.float32).astype(np.float64)
    text = text.astype(np.float32).astype(np.float64)
    labels = np.zeros((n, C), dtype=bool)
    labels[np.arange(n), cls] = True
    edges = np.cumsum((0,) + counts)
    splits = {name: np.arange(edges[i], edges[i + 1]) for i, name in enumerate(SPLITS)}
    ds = Dataset(np.arange(n), image, text, labels, splits, [f"class{c}" for c in range(C)])
    return (ds, z) if return_latent else ds
