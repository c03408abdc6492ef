"""Generative selector p_theta over unlabeled candidates.

For a query ``q`` of one modality and a pool of candidates ``c_j`` of the
other, the selection probability is a softmax over negated squared
hash-output distances::

    p(c_j | q) = exp(-||h(q) - h(c_j)||^2) / sum_l exp(-||h(q) - h(c_l)||^2)

The generator is trained with REINFORCE: sample candidates, score them with
a frozen discriminator, and ascend ``mean_k reward_k * grad log p(c_k|q)``.

All functions take batched queries: ``query`` is (B, d_q) and the pool
features are (B, P, d_c). A single query is the B = 1 case, and 1-d inputs
are accepted and squeezed back on output.
"""
from dataclasses import dataclass

import numpy as np

from .model import apply_update, backward, check_modality, forward
from .tensor import log_softmax, softmax


@dataclass
class CandidatePool:
    """Unlabeled candidates of one modality.

    ``indices`` point into the unlabeled split: (P,) shared by every query
    or (B, P) per query. ``features`` has matching leading axes.
    """
    modality: str
    indices: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        check_modality(self.modality)
        self.indices = np.asarray(self.indices)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.indices.size == 0:
            raise ValueError("candidate pool is empty")
        if self.features.shape[:-1] != self.indices.shape:
            raise ValueError(f"pool features {self.features.shape} do not match "
                             f"indices {self.indices.shape}")
        rows = self.indices.reshape(-1, self.indices.shape[-1])
        for r in rows:
            if np.unique(r).size != r.size:
                raise ValueError("candidate pool indices must be unique")

    @property
    def size(self):
        return self.indices.shape[-1]


@dataclass
class SelectionBatch:
    """Sampled candidates for B queries, ``k`` draws each.

    ``candidates`` are positions into the pool (B, k); ``log_probs`` are the
    selection log-probabilities of those draws and ``rewards`` is filled in
    once the discriminator has scored them.
    """
    query_ids: np.ndarray
    candidates: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray = None

    @property
    def samples_per_query(self):
        return self.candidates.shape[1]

    def candidate_ids(self, pool):
        idx = pool.indices
        if idx.ndim == 1:
            return idx[self.candidates]
        return np.take_along_axis(idx, self.candidates, axis=1)


def _batched(query, pool):
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    feats = pool.features
    if feats.ndim == 2:
        feats = np.broadcast_to(feats, (q.shape[0],) + feats.shape)
    if feats.shape[0] != q.shape[0]:
        raise ValueError(f"{q.shape[0]} queries but pool batch of {feats.shape[0]}")
    return q, feats, single


def _neg_sq_dist(net, query, query_modality, pool):
    check_modality(query_modality)
    if query_modality == pool.modality:
        raise ValueError("query and candidates must come from different modalities")
    q, feats, single = _batched(query, pool)
    B, P, d = feats.shape
    tq = forward(net.pathway(query_modality), q)
    tc = forward(net.pathway(pool.modality), feats.reshape(B * P, d))
    hc = tc.h.reshape(B, P, -1)
    diff = tq.h[:, None, :] - hc
    return -(diff ** 2).sum(axis=-1), diff, tq, tc, single


def selection_distribution(net, query, query_modality, pool):
    """Probability of selecting each pool candidate for each query."""
    s, *_, single = _neg_sq_dist(net, query, query_modality, pool)
    p = softmax(s, axis=-1)
    return p[0] if single else p


def selection_log_distribution(net, query, query_modality, pool):
    s, *_, single = _neg_sq_dist(net, query, query_modality, pool)
    lp = log_softmax(s, axis=-1)
    return lp[0] if single else lp


def sample_candidates(dist, k, rng, query_ids=None):
    """Draw ``k`` candidates per row of ``dist`` with replacement."""
    if k < 1:
        raise ValueError(f"samples per query must be >= 1, got {k}")
    p = np.atleast_2d(np.asarray(dist, dtype=np.float64))
    cdf = np.cumsum(p, axis=1)
    u = rng.random((p.shape[0], k)) * cdf[:, -1:]
    # first index whose cdf exceeds u; never lands on a zero-probability entry
    cand = (cdf[:, None, :] <= u[:, :, None]).sum(axis=-1)
    cand = np.minimum(cand, p.shape[1] - 1)
    with np.errstate(divide="ignore"):
        logp = np.log(np.take_along_axis(p, cand, axis=1))
    if query_ids is None:
        query_ids = np.arange(p.shape[0])
    return SelectionBatch(np.atleast_1d(np.asarray(query_ids)), cand, logp)


def _grads_from_weights(net, query_modality, pool_modality, w, diff, tq, tc):
    """Gradient of sum_bj w_bj * (-||h(q_b) - h(c_bj)||^2) w.r.t. both pathways."""
    B, P, q = diff.shape
    g_hq = -2.0 * (w[:, :, None] * diff).sum(axis=1)
    g_hc = 2.0 * w[:, :, None] * diff
    gq = backward(net.pathway(query_modality), tq, g_hq)
    gc = backward(net.pathway(pool_modality), tc, g_hc.reshape(B * P, q))
    return {query_modality: gq, pool_modality: gc}


def policy_gradient(net, query, query_modality, pool, batch, baseline=0.0):
    """REINFORCE estimate of grad_theta E[reward], averaged over queries."""
    if batch.rewards is None:
        raise ValueError("selection batch has no rewards")
    r = np.atleast_2d(np.asarray(batch.rewards, dtype=np.float64))
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite reward")
    s, diff, tq, tc, _ = _neg_sq_dist(net, query, query_modality, pool)
    p = softmax(s, axis=-1)
    B, P = p.shape
    k = batch.samples_per_query
    adv = r - baseline
    # d/ds_j of mean_k adv_k * log p(c_k) = mean_k adv_k * ([j == c_k] - p_j)
    counts = np.zeros((B, P))
    rows = np.repeat(np.arange(B), k)
    np.add.at(counts, (rows, batch.candidates.ravel()), adv.ravel())
    w = (counts - adv.sum(axis=1, keepdims=True) * p) / (k * B)
    return _grads_from_weights(net, query_modality, pool.modality, w, diff, tq, tc)


def policy_gradient_step(net, query, query_modality, pool, batch, lr, baseline=0.0):
    """One ascent step on the REINFORCE estimator; returns the updated net."""
    grads = policy_gradient(net, query, query_modality, pool, batch, baseline)
    return apply_update(net, grads, lr)


def expected_reward(net, query, query_modality, pool, rewards):
    """Exact sum_j p(c_j|q) * reward_j, averaged over queries."""
    p = np.atleast_2d(selection_distribution(net, query, query_modality, pool))
    r = np.broadcast_to(np.asarray(rewards, dtype=np.float64), p.shape)
    return float((p * r).sum(axis=1).mean())


def expected_reward_grad(net, query, query_modality, pool, rewards):
    """Exact gradient of :func:`expected_reward` (no sampling)."""
    s, diff, tq, tc, _ = _neg_sq_dist(net, query, query_modality, pool)
    p = softmax(s, axis=-1)
    r = np.broadcast_to(np.asarray(rewards, dtype=np.float64), p.shape)
    w = p * (r - (p * r).sum(axis=1, keepdims=True)) / p.shape[0]
    return _grads_from_weights(net, query_modality, pool.modality, w, diff, tq, tc)
