"""Hamming-ranking retrieval metrics.

The database (labeled + unlabeled items) and the queries are encoded with
the discriminator's hash functions. Each query ranks the database by
ascending Hamming distance, ties broken by ascending item id. An item is
relevant when it shares at least one label with the query.

Metric functions accept either a sequence of :class:`RankedList` or a 2-d
array of relevance flags already in rank order (one row per query).
"""
import csv
import json
from fractions import Fraction
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .model import binarize, check_modality, hamming_matrix

DIRECTIONS = {"t2i": ("text", "image"), "i2t": ("image", "text")}
DEFAULT_K_GRID = (1, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500)
PR_RECALLS = tuple(i / kernels.PR_STEPS for i in range(kernels.PR_STEPS + 1))


@dataclass
class RankedList:
    query_id: int
    ids: np.ndarray
    distances: np.ndarray
    relevant: np.ndarray

    @property
    def num_relevant(self):
        return int(np.count_nonzero(self.relevant))


@dataclass
class MetricsReport:
    direction: str
    code_length: int
    map: float
    pr_curve: list
    topk_precision: list
    num_queries: int
    database_size: int
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def write(self, prefix):
        """Write ``prefix.json``, ``prefix_pr.csv`` and ``prefix_topk.csv``."""
        with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        for suffix, rows, key in (("pr", self.pr_curve, "recall"),
                                  ("topk", self.topk_precision, "k")):
            with open(f"{prefix}_{suffix}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "precision"])
                for r in rows:
                    w.writerow([repr(r[key]), repr(r["precision"])])


def relevance(query_labels, item_labels):
    return bool(set(query_labels) & set(item_labels))


def relevance_matrix(query_labels, db_labels):
    q = np.asarray(query_labels, dtype=np.float64)
    d = np.asarray(db_labels, dtype=np.float64)
    return (q @ d.T) > 0


def _flags(ranked):
    if isinstance(ranked, np.ndarray):
        return np.atleast_2d(ranked).astype(bool)
    rows = [r.relevant if isinstance(r, RankedList) else np.asarray(r, dtype=bool) for r in ranked]
    if not rows:
        raise ValueError("no ranked lists given")
    return np.vstack(rows).astype(bool)


def average_precision(flags, total_relevant=None):
    """(1/R) * sum_k precision@k * rel_k; 0 when nothing is relevant.

    Evaluated in exact rational arithmetic and rounded once, so hand cases
    such as [0, 1, 1] give exactly 7/12. Use :func:`mean_average_precision`
    for large batches.
    """
    flags = [bool(f) for f in np.asarray(flags).ravel()]
    R = sum(flags) if total_relevant is None else int(total_relevant)
    if R == 0:
        return 0.0
    hits, s = 0, Fraction(0)
    for k, f in enumerate(flags, start=1):
        if f:
            hits += 1
            s += Fraction(hits, k)
    return float(s / R)


def mean_average_precision(ranked):
    rel = _flags(ranked)
    if rel.shape[0] == 0:
        raise ValueError("MAP needs at least one query")
    return float(kernels.average_precision_rows(rel).mean())


def pr_curve(ranked):
    """Interpolated precision at recall 0, 0.05, ..., 1, averaged over queries.

    Queries with no relevant item have no defined recall and are skipped.
    """
    rel = _flags(ranked)
    prec, valid = kernels.pr_curve_rows(rel)
    if not valid.any():
        return list(PR_RECALLS), [0.0] * len(PR_RECALLS)
    return list(PR_RECALLS), prec[valid].mean(axis=0).tolist()


def topk_precision(ranked, ks):
    rel = _flags(ranked)
    ks = [int(k) for k in ks]
    for k in ks:
        if k < 1:
            raise ValueError(f"K must be >= 1, got {k}")
        if k > rel.shape[1]:
            raise ValueError(f"K={k} exceeds database size {rel.shape[1]}")
    hits = kernels.topk_hits(rel, ks)
    return (hits / np.asarray(ks, dtype=np.float64)).mean(axis=0).tolist()


def encode_database(net, features, modality):
    """Binary codes of a feature matrix under one pathway of ``net``."""
    check_modality(modality)
    return binarize(net.hash(modality, np.atleast_2d(features)))


def rank(query_codes, db_codes):
    """Hamming distances and rank order (nq, nd); ties go to the lower index."""
    dist = hamming_matrix(query_codes, db_codes)
    order = kernels.rank(dist)
    return dist, order


def ranked_lists(query_codes, db_codes, query_ids, db_ids, rel):
    dist, order = rank(query_codes, db_codes)
    db_ids = np.asarray(db_ids)
    out = []
    for i, qid in enumerate(query_ids):
        o = order[i]
        out.append(RankedList(int(qid), db_ids[o], dist[i, o], rel[i, o]))
    return out


def evaluate(net, dataset, direction, k_grid=DEFAULT_K_GRID, config=None):
    """Score one retrieval direction (``"t2i"`` or ``"i2t"``) of ``net``."""
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    qmod, dmod = DIRECTIONS[direction]
    db_rows = dataset.database_rows()
    q_rows = dataset.query_rows()
    if q_rows.size == 0:
        raise ValueError("dataset has no query items")
    qcodes = encode_database(net, dataset.features(qmod)[q_rows], qmod)
    dcodes = encode_database(net, dataset.features(dmod)[db_rows], dmod)
    rel_all = relevance_matrix(dataset.evaluation_labels(q_rows),
                               dataset.evaluation_labels(db_rows))
    _, order = rank(qcodes, dcodes)
    rel = np.take_along_axis(rel_all, order, axis=1)
    recalls, precisions = pr_curve(rel)
    ks = [k for k in k_grid if k <= db_rows.size]
    topk = topk_precision(rel, ks) if ks else []
    return MetricsReport(
        direction=direction,
        code_length=net.config.code_length,
        map=mean_average_precision(rel),
        pr_curve=[{"recall": r, "precision": p} for r, p in zip(recalls, precisions)],
        topk_precision=[{"k": k, "precision": p} for k, p in zip(ks, topk)],
        num_queries=int(q_rows.size),
        database_size=int(db_rows.size),
        config=dict(config or {}),
    )


def cross_modal_map(net, image_q, text_q, labels_q, image_db, text_db, labels_db):
    """MAP in both directions for explicit feature/label arrays."""
    rel = relevance_matrix(labels_q, labels_db)
    out = {}
    for direction, (qm, dm) in DIRECTIONS.items():
        qx = text_q if qm == "text" else image_q
        dx = image_db if dm == "image" else text_db
        _, order = rank(encode_database(net, qx, qm), encode_database(net, dx, dm))
        out[direction] = mean_average_precision(np.take_along_axis(rel, order, axis=1))
    return out
