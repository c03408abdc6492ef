"""Alternating adversarial training of the generator and discriminator.

Each outer epoch runs ``d_steps`` discriminator epochs followed by
``g_steps`` generator epochs over the labeled queries. In a d-step the
generator is frozen: it picks ``samples_per_query`` unlabeled candidates
per query, true positives/negatives are drawn from the labeled split, and
the discriminator takes one SGD step per mini-batch. In a g-step the
discriminator is frozen and scores the generator's picks; the generator
takes one REINFORCE ascent step per mini-batch.

With ``directions="both"`` the text->image and image->text objectives are
interleaved mini-batch by mini-batch on shared weights.

Randomness is drawn from streams keyed on (seed, epoch, phase, step,
direction, purpose), so a resumed run and a ``dis_only`` run see the same
labeled triplets as an uninterrupted ``schgan`` run with the same seed.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .discriminator import LOSS_MODES, TripletBatch, d_step_loss, relevance_generated, reward
from .evaluate import cross_modal_map
from .generator import CandidatePool, policy_gradient_step, sample_candidates, selection_distribution
from .model import apply_update, init_net, other_modality, save_checkpoint

log = logging.getLogger(__name__)

TRAIN_MODES = ("schgan", "dis_only")
DIRECTION_CHOICES = ("both", "t2i", "i2t")
QUERY_MODALITY = {"t2i": "text", "i2t": "image"}

# stream purposes
_ORDER, _TRUE, _POOL, _SAMPLE = range(4)
_PHASE = {"d": 0, "g": 1}


@dataclass(frozen=True)
class TrainConfig:
    epochs_outer: int = 10
    d_steps: int = 1
    g_steps: int = 1
    batch_size: int = 64
    samples_per_query: int = 20
    lr0: float = 0.01
    lr_decay: float = 0.1
    decay_every: int = 2
    margin: float = 1.0
    candidate_pool_size: int = 100
    seed: int = 0
    loss_mode: str = "triplet"
    train_mode: str = "schgan"
    directions: str = "both"
    reward_baseline: bool = False
    baseline_momentum: float = 0.9
    val_every: int = 0
    val_queries: int = 200
    early_stop_patience: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        counts = ("epochs_outer", "d_steps", "g_steps", "batch_size", "samples_per_query",
                  "decay_every", "candidate_pool_size", "val_queries")
        for name in counts:
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("val_every", "early_stop_patience", "checkpoint_every", "seed"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be an integer >= 0, got {v!r}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not self.margin > 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if not 0 <= self.baseline_momentum < 1:
            raise ValueError(f"baseline_momentum must be in [0, 1), got {self.baseline_momentum}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.train_mode not in TRAIN_MODES:
            raise ValueError(f"train_mode must be one of {TRAIN_MODES}, got {self.train_mode!r}")
        if self.directions not in DIRECTION_CHOICES:
            raise ValueError(f"directions must be one of {DIRECTION_CHOICES}, got {self.directions!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def direction_list(self):
        return ("t2i", "i2t") if self.directions == "both" else (self.directions,)


def lr_schedule(epoch, cfg):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    validation: list = field(default_factory=list)

    def records(self):
        out = [dict(r, kind="step") for r in self.steps]
        out += [dict(r, kind="val") for r in self.validation]
        # a validation record carries the index of the next step, so it sorts first
        return sorted(out, key=lambda r: (r["step"], r["kind"] != "val"))

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def write(self, path, mode="w"):
        with open(path, mode, encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


@dataclass
class TrainResult:
    generator: object
    discriminator: object
    log: TrainLog
    state: dict


def _rng(cfg, epoch, phase, step, direction, purpose):
    d = cfg.direction_list.index(direction) if direction else 0
    return np.random.default_rng([cfg.seed, epoch, _PHASE[phase], step, d, purpose])


def _valid_queries(labels, chunk=1024):
    """Rows that have both a positive and a negative in the labeled split."""
    lab = labels.astype(np.float64)
    n = lab.shape[0]
    pos = np.empty(n, dtype=np.int64)
    for s in range(0, n, chunk):
        pos[s:s + chunk] = ((lab[s:s + chunk] @ lab.T) > 0).sum(axis=1)
    return np.flatnonzero((pos > 0) & (pos < n))


def _true_pairs(labels, rows, k, rng):
    """(B, k) positives and negatives for each query row (all rows valid)."""
    lab = labels.astype(np.float64)
    share = (lab[rows] @ lab.T) > 0
    pos = np.empty((rows.size, k), dtype=np.int64)
    neg = np.empty((rows.size, k), dtype=np.int64)
    for i in range(rows.size):
        p = np.flatnonzero(share[i])
        q = np.flatnonzero(~share[i])
        pos[i] = p[rng.integers(p.size, size=k)]
        neg[i] = q[rng.integers(q.size, size=k)]
    return pos, neg


def _pools(num_unlabeled, B, size, rng):
    size = min(size, num_unlabeled)
    return np.stack([rng.choice(num_unlabeled, size=size, replace=False) for _ in range(B)])


class _Loop:
    def __init__(self, view, model_config, cfg, on_step):
        if view.num_labeled == 0:
            raise ValueError("dataset has no labeled items")
        if cfg.train_mode == "schgan" and view.num_unlabeled == 0:
            raise ValueError("schgan mode needs a non-empty unlabeled split")
        self.view = view
        self.cfg = cfg
        self.mc = model_config
        self.on_step = on_step
        self.labels = view.labeled_labels
        self.queries = _valid_queries(self.labels)
        skipped = view.num_labeled - self.queries.size
        if skipped:
            log.warning("skipping %d labeled queries without positives or negatives", skipped)
        if self.queries.size == 0:
            raise ValueError("no labeled query has both a positive and a negative")
        self.unlabeled = None
        if cfg.train_mode == "schgan":
            self.unlabeled = {m: view.unlabeled(m) for m in ("image", "text")}
        self.log = TrainLog()
        self.step = 0
        self.baseline = 0.0
        self.baseline_init = False

    def _record(self, theta, phi, **fields_):
        rec = dict(step=self.step, theta=theta.checksum(), phi=phi.checksum(), **fields_)
        self.log.steps.append(rec)
        if self.on_step is not None:
            self.on_step(rec, theta, phi)
        self.step += 1

    def _batches(self, epoch, phase, step):
        rng = _rng(self.cfg, epoch, phase, step, None, _ORDER)
        order = self.queries[rng.permutation(self.queries.size)]
        bs = self.cfg.batch_size
        return [order[s:s + bs] for s in range(0, order.size, bs)]

    def _generate(self, theta, direction, rows, rngs):
        """Generator picks for each query; returns pool, selection batch and features."""
        cfg = self.cfg
        qmod = QUERY_MODALITY[direction]
        cmod = other_modality(qmod)
        qx = self.view.labeled(qmod)[rows]
        U = self.unlabeled[cmod]
        idx = _pools(U.shape[0], rows.size, cfg.candidate_pool_size, rngs[_POOL])
        pool = CandidatePool(cmod, idx, U[idx])
        dist = selection_distribution(theta, qx, qmod, pool)
        sel = sample_candidates(dist, cfg.samples_per_query, rngs[_SAMPLE], query_ids=rows)
        gen = U[sel.candidate_ids(pool)]
        return qx, pool, sel, gen

    def d_epoch(self, theta, phi, epoch, step, lr):
        cfg = self.cfg
        k = cfg.samples_per_query
        for b, rows in enumerate(self._batches(epoch, "d", step)):
            for direction in cfg.direction_list:
                rngs = [_rng(cfg, epoch, "d", step, direction, p * 1000 + b) for p in range(4)]
                qmod = QUERY_MODALITY[direction]
                cmod = other_modality(qmod)
                pos, neg = _true_pairs(self.labels, rows, k, rngs[_TRUE])
                C = self.view.labeled(cmod)
                qx = self.view.labeled(qmod)[rows]
                qrep = np.repeat(qx, k, axis=0)
                labeled = TripletBatch(qmod, qrep, C[pos.ravel()], C[neg.ravel()], "labeled")
                generated = None
                if cfg.train_mode == "schgan":
                    _, _, _, gen = self._generate(theta, direction, rows, rngs)
                    generated = TripletBatch(qmod, qrep, C[pos.ravel()],
                                             gen.reshape(-1, gen.shape[-1]), "generated")
                res = d_step_loss(phi, labeled, generated, cfg.loss_mode, cfg.margin)
                phi = apply_update(phi, res.grads, -lr)
                self._record(theta, phi, epoch=epoch, phase="d", direction=direction, lr=lr,
                             loss=res.loss, mean_reward=None)
        return phi

    def g_epoch(self, theta, phi, epoch, step, lr):
        cfg = self.cfg
        k = cfg.samples_per_query
        for b, rows in enumerate(self._batches(epoch, "g", step)):
            for direction in cfg.direction_list:
                rngs = [_rng(cfg, epoch, "g", step, direction, p * 1000 + b) for p in range(4)]
                qmod = QUERY_MODALITY[direction]
                cmod = other_modality(qmod)
                qx, pool, sel, gen = self._generate(theta, direction, rows, rngs)
                pos, _ = _true_pairs(self.labels, rows, k, rngs[_TRUE])
                C = self.view.labeled(cmod)
                f = relevance_generated(phi, qmod, np.repeat(qx, k, axis=0), C[pos.ravel()],
                                        gen.reshape(-1, gen.shape[-1]), cfg.margin)
                sel.rewards = reward(f).reshape(rows.size, k)
                mean_r = float(sel.rewards.mean())
                base = 0.0
                if cfg.reward_baseline:
                    if not self.baseline_init:
                        self.baseline, self.baseline_init = mean_r, True
                    base = self.baseline
                theta = policy_gradient_step(theta, qx, qmod, pool, sel, lr, baseline=base)
                if cfg.reward_baseline:
                    m = cfg.baseline_momentum
                    self.baseline = m * self.baseline + (1 - m) * mean_r
                self._record(theta, phi, epoch=epoch, phase="g", direction=direction, lr=lr,
                             loss=None, mean_reward=mean_r)
        return theta

    def validate(self, phi, epoch):
        v = self.view
        rows = self.queries[:self.cfg.val_queries]
        maps = cross_modal_map(phi, v.labeled_image[rows], v.labeled_text[rows],
                               self.labels[rows], v.labeled_image, v.labeled_text, self.labels)
        rec = dict(step=self.step, epoch=epoch, **{f"map_{d}": maps[d] for d in sorted(maps)})
        self.log.validation.append(rec)
        return float(np.mean([maps[d] for d in self.cfg.direction_list]))


def train(dataset, model_config, cfg, *, resume=None, on_step=None, checkpoint_dir=None):
    """Run adversarial training (or discriminator-only training).

    ``resume`` is the ``(models, state)`` pair returned by
    :func:`schgan.model.load_checkpoint`; training continues after the
    last completed epoch and reaches the same final state as an
    uninterrupted run.
    """
    view = dataset.training_view()
    loop = _Loop(view, model_config, cfg, on_step)
    if model_config.image_input_dim != dataset.image_dim or model_config.text_input_dim != dataset.text_dim:
        raise ValueError("model input dims do not match the dataset feature dims")

    theta = init_net(model_config, np.random.default_rng([cfg.seed, 1 << 20, 0]))
    phi = init_net(model_config, np.random.default_rng([cfg.seed, 1 << 20, 1]))
    start, best, stale, stopped = 0, -np.inf, 0, False
    if resume is not None:
        models, state = resume
        theta, phi = models["generator"], models["discriminator"]
        start = int(state["epochs_done"])
        loop.step = int(state["step"])
        loop.baseline = float(state["baseline"])
        loop.baseline_init = bool(state["baseline_init"])
        best = float(state["best_val"]) if state["best_val"] is not None else -np.inf
        stale = int(state["stale"])
        stopped = bool(state["stopped"])

    def snapshot(epochs_done):
        return {
            "epochs_done": epochs_done,
            "step": loop.step,
            "baseline": loop.baseline,
            "baseline_init": loop.baseline_init,
            "best_val": None if not np.isfinite(best) else best,
            "stale": stale,
            "stopped": stopped,
            "train_config": asdict(cfg),
        }

    epoch = start
    while epoch < cfg.epochs_outer and not stopped:
        lr = lr_schedule(epoch, cfg)
        for s in range(cfg.d_steps):
            phi = loop.d_epoch(theta, phi, epoch, s, lr)
        if cfg.train_mode == "schgan":
            for s in range(cfg.g_steps):
                theta = loop.g_epoch(theta, phi, epoch, s, lr)
        if cfg.val_every and (epoch + 1) % cfg.val_every == 0:
            score = loop.validate(phi, epoch)
            if score > best:
                best, stale = score, 0
            else:
                stale += 1
            if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
                log.info("early stop after epoch %d (no validation gain for %d checks)", epoch, stale)
                stopped = True
        epoch += 1
        if checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"checkpoint_epoch{epoch:03d}.json"),
                            {"generator": theta, "discriminator": phi}, snapshot(epoch))
    return TrainResult(theta, phi, loop.log, snapshot(epoch))
