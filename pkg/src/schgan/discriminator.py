"""Discriminator f_phi: triplet relevance scores, rewards and the d-step loss.

A triplet (q, p, c) has a query of one modality and a positive ``p`` and a
contrast item ``c`` of the other. Its relevance score is the margin hinge::

    f = max(0, margin + ||h(q) - h(p)||^2 - ||h(q) - h(c)||^2)

For labeled triplets ``c`` is a labeled negative; for generated ones it is
a candidate picked by the generator.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .model import backward, check_modality, forward, other_modality
from .tensor import hinge, hinge_subgrad, log_sigmoid, sigmoid, softplus

log = logging.getLogger(__name__)

LOSS_MODES = ("triplet", "literal")


@dataclass
class TripletBatch:
    query_modality: str
    query: np.ndarray
    positive: np.ndarray
    contrast: np.ndarray
    kind: str = "labeled"

    def __post_init__(self):
        check_modality(self.query_modality)
        if self.kind not in ("labeled", "generated"):
            raise ValueError(f"unknown triplet kind {self.kind!r}")
        self.query = np.atleast_2d(np.asarray(self.query, dtype=np.float64))
        self.positive = np.atleast_2d(np.asarray(self.positive, dtype=np.float64))
        self.contrast = np.atleast_2d(np.asarray(self.contrast, dtype=np.float64))
        n = self.query.shape[0]
        if n == 0:
            raise ValueError("empty triplet batch")
        if self.positive.shape[0] != n or self.contrast.shape[0] != n:
            raise ValueError("query, positive and contrast must have the same number of rows")

    def __len__(self):
        return self.query.shape[0]


@dataclass
class DStepResult:
    loss: float
    grads: dict
    labeled_scores: np.ndarray
    generated_scores: np.ndarray = None


def _hashes(net, batch):
    cand = other_modality(batch.query_modality)
    tq = forward(net.pathway(batch.query_modality), batch.query)
    n = len(batch)
    tc = forward(net.pathway(cand), np.concatenate([batch.positive, batch.contrast]))
    return tq, tc, tc.h[:n], tc.h[n:]


def triplet_margin(hq, hp, hc, margin):
    """Pre-hinge value margin + ||hq - hp||^2 - ||hq - hc||^2 (row-wise)."""
    return margin + ((hq - hp) ** 2).sum(axis=-1) - ((hq - hc) ** 2).sum(axis=-1)


def _score(net, query_modality, query, positive, contrast, margin, kind):
    b = TripletBatch(query_modality, query, positive, contrast, kind)
    tq, _, hp, hc = _hashes(net, b)
    s = hinge(triplet_margin(tq.h, hp, hc, margin))
    return float(s[0]) if np.ndim(query) == 1 else s


def relevance_generated(net, query_modality, query, positive, generated, margin=1.0):
    """Score of a generator-selected candidate against a true positive."""
    return _score(net, query_modality, query, positive, generated, margin, "generated")


def relevance_labeled(net, query_modality, query, positive, negative, margin=1.0):
    """Score of a labeled positive against a labeled negative."""
    return _score(net, query_modality, query, positive, negative, margin, "labeled")


def disc_probability(score):
    return sigmoid(score)


def reward(score):
    return softplus(score)


def _triplet_grads(net, batch, margin, coef_fn):
    """Scores of ``batch`` and gradients of sum_i c(f_i) where dc/df = coef_fn(f)."""
    tq, tc, hp, hc = _hashes(net, batch)
    hq = tq.h
    pre = triplet_margin(hq, hp, hc, margin)
    f = hinge(pre)
    a = (hinge_subgrad(pre) * coef_fn(f))[:, None]
    g_hq = a * 2.0 * (hc - hp)
    g_hp = a * -2.0 * (hq - hp)
    g_hc = a * 2.0 * (hq - hc)
    cand = other_modality(batch.query_modality)
    gq = backward(net.pathway(batch.query_modality), tq, g_hq)
    gc = backward(net.pathway(cand), tc, np.concatenate([g_hp, g_hc]))
    return f, {batch.query_modality: gq, cand: gc}


def _add_grads(a, b):
    out = dict(a)
    for mod, g in b.items():
        if mod in out:
            h = out[mod]
            out[mod] = type(g)(W1=h.W1 + g.W1, b1=h.b1 + g.b1, W2=h.W2 + g.W2, b2=h.b2 + g.b2)
        else:
            out[mod] = g
    return out


def d_step_loss(net, labeled, generated=None, mode="triplet", margin=1.0):
    """Discriminator loss (to minimise) and its gradients.

    ``triplet``: mean(f_labeled) + mean(f_generated).
    ``literal``: -[mean log sigmoid(f_labeled) + mean log(1 - sigmoid(f_generated))].

    ``generated`` may be None for discriminator-only training.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    nl = len(labeled)
    if mode == "triplet":
        fl, grads = _triplet_grads(net, labeled, margin, lambda f: np.full_like(f, 1.0 / nl))
        loss = fl.mean()
    else:
        fl, grads = _triplet_grads(net, labeled, margin, lambda f: -(1.0 - sigmoid(f)) / nl)
        loss = -log_sigmoid(fl).mean()
    fg = None
    if generated is not None:
        ng = len(generated)
        if mode == "triplet":
            fg, g2 = _triplet_grads(net, generated, margin, lambda f: np.full_like(f, 1.0 / ng))
            loss += fg.mean()
        else:
            # log(1 - sigmoid(f)) = log_sigmoid(-f)
            fg, g2 = _triplet_grads(net, generated, margin, lambda f: sigmoid(f) / ng)
            loss += -log_sigmoid(-fg).mean()
        grads = _add_grads(grads, g2)
    return DStepResult(float(loss), grads, fl, fg)


def sample_true_pairs(labels, query_labels, k, rng):
    """Draw ``k`` positives and ``k`` negatives for one query from the labeled split.

    ``labels`` is the (n, C) boolean label matrix of the labeled split. A
    positive shares at least one label with the query, a negative none.
    Returns ``None`` (and logs a warning) when either set is empty.
    """
    share = np.asarray(labels, dtype=bool) @ np.asarray(query_labels, dtype=bool)
    pos = np.flatnonzero(share)
    neg = np.flatnonzero(~share)
    if pos.size == 0 or neg.size == 0:
        log.warning("skipping query: %d positives, %d negatives in labeled split",
                    pos.size, neg.size)
        return None
    return pos[rng.integers(pos.size, size=k)], neg[rng.integers(neg.size, size=k)]
