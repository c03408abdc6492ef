import json

import numpy as np
import pytest

from schgan.data import Dataset, SynthConfig, synth_generate
from schgan.model import ModelConfig, TwoPathwayNet, init_net, load_checkpoint
from schgan.trainer import TrainConfig, lr_schedule, train

SMALL = SynthConfig(num_labeled=96, num_unlabeled=160, num_query=40, image_dim=24, text_dim=12,
                    latent_dim=8, num_classes=4, seed=3)
FAST = dict(epochs_outer=3, batch_size=32, samples_per_query=4, candidate_pool_size=20,
            lr0=1.0, lr_decay=0.1, decay_every=1)


@pytest.fixture(scope="module")
def ds():
    return synth_generate(SMALL)


def mconf(ds, q=8):
    return ModelConfig(ds.image_dim, ds.text_dim, 16, q)


def test_lr_schedule_examples():
    cfg = TrainConfig(lr0=0.01, lr_decay=0.1, decay_every=2)
    got = [lr_schedule(e, cfg) for e in range(6)]
    np.testing.assert_allclose(got, [0.01, 0.01, 0.001, 0.001, 0.0001, 0.0001], rtol=1e-12)
    with pytest.raises(ValueError):
        lr_schedule(-1, cfg)


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"epochs": 3})
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(loss_mode="hinge")
    with pytest.raises(ValueError):
        TrainConfig(lr_decay=1.5)


def test_one_record_per_step(ds):
    cfg = TrainConfig(**FAST)
    res = train(ds, mconf(ds), cfg)
    batches = -(-SMALL.num_labeled // cfg.batch_size)
    # each epoch: d and g phases, both directions, one step per batch
    assert len(res.log.steps) == cfg.epochs_outer * 2 * 2 * batches
    assert [r["step"] for r in res.log.steps] == list(range(len(res.log.steps)))
    phases = [r["phase"] for r in res.log.steps[:2 * batches * 2]]
    assert phases == ["d"] * (2 * batches) + ["g"] * (2 * batches)
    # directions interleave batch by batch
    assert [r["direction"] for r in res.log.steps[:4]] == ["t2i", "i2t", "t2i", "i2t"]


def test_deterministic_given_seed(ds):
    cfg = TrainConfig(**FAST)
    a = train(ds, mconf(ds), cfg)
    b = train(ds, mconf(ds), cfg)
    assert a.log.to_jsonl() == b.log.to_jsonl()
    assert a.discriminator.checksum() == b.discriminator.checksum()
    c = train(ds, mconf(ds), TrainConfig(**dict(FAST, seed=1)))
    assert c.discriminator.checksum() != a.discriminator.checksum()


def test_freeze_contract(ds):
    res = train(ds, mconf(ds), TrainConfig(**FAST))
    prev = None
    for r in res.log.steps:
        if prev is not None:
            if r["phase"] == "d":
                assert r["theta"] == prev["theta"]
            else:
                assert r["phi"] == prev["phi"]
        prev = r


def test_dis_only_never_reads_unlabeled(ds, monkeypatch):
    seen = []
    real = Dataset.training_view

    def spy(self):
        seen.append(real(self))
        return seen[-1]

    monkeypatch.setattr(Dataset, "training_view", spy)
    res = train(ds, mconf(ds), TrainConfig(**dict(FAST, train_mode="dis_only")))
    train(ds, mconf(ds), TrainConfig(**FAST))
    assert all(r["phase"] == "d" for r in res.log.steps)
    assert seen[0].unlabeled_reads == 0
    assert seen[1].unlabeled_reads > 0


def test_dis_only_loss_decreases(ds):
    cfg = TrainConfig(**dict(FAST, train_mode="dis_only", epochs_outer=4))
    res = train(ds, mconf(ds), cfg)
    by_epoch = {}
    for r in res.log.steps:
        by_epoch.setdefault(r["epoch"], []).append(r["loss"])
    means = [np.mean(by_epoch[e]) for e in sorted(by_epoch)]
    assert means[-1] < means[0]


def test_single_direction(ds):
    res = train(ds, mconf(ds), TrainConfig(**dict(FAST, directions="i2t", epochs_outer=1)))
    assert {r["direction"] for r in res.log.steps} == {"i2t"}


def _swap(net):
    return TwoPathwayNet(net.text.copy(), net.image.copy(),
                         ModelConfig(net.config.text_input_dim, net.config.image_input_dim,
                                     net.config.inter_dim, net.config.code_length))


@pytest.mark.parametrize("mode", ["schgan", "dis_only"])
def test_direction_symmetry(mode):
    # swapping the modalities of data and weights turns a t2i run into an i2t run
    base = synth_generate(SynthConfig(num_labeled=64, num_unlabeled=64, num_query=16,
                                      image_dim=10, text_dim=10, latent_dim=4,
                                      num_classes=3, seed=5))
    swapped = Dataset(base.ids, base.text, base.image, base._labels, base.splits)
    mc = ModelConfig(10, 10, 8, 8)
    theta = init_net(mc, np.random.default_rng(1))
    phi = init_net(mc, np.random.default_rng(2))
    state = dict(epochs_done=0, step=0, baseline=0.0, baseline_init=False, best_val=None,
                 stale=0, stopped=False)
    cfg = dict(FAST, epochs_outer=2, train_mode=mode)
    a = train(base, mc, TrainConfig(**dict(cfg, directions="t2i")),
              resume=({"generator": theta, "discriminator": phi}, state))
    b = train(swapped, mc, TrainConfig(**dict(cfg, directions="i2t")),
              resume=({"generator": _swap(theta), "discriminator": _swap(phi)}, state))
    assert [r["loss"] for r in a.log.steps] == [r["loss"] for r in b.log.steps]
    assert _swap(a.discriminator).checksum() == b.discriminator.checksum()
    assert _swap(a.generator).checksum() == b.generator.checksum()


def test_resume_matches_uninterrupted(ds, tmp_path):
    cfg = TrainConfig(**dict(FAST, checkpoint_every=1, val_every=1))
    full = train(ds, mconf(ds), cfg, checkpoint_dir=tmp_path)
    models, state = load_checkpoint(tmp_path / "checkpoint_epoch001.json")
    assert state["epochs_done"] == 1
    rest = train(ds, mconf(ds), cfg, resume=(models, state))
    assert rest.discriminator.checksum() == full.discriminator.checksum()
    assert rest.generator.checksum() == full.generator.checksum()
    tail = [r for r in full.log.records() if r["step"] >= state["step"]
            and not (r["kind"] == "val" and r["step"] == state["step"])]
    assert rest.log.records() == tail
    assert rest.state == full.state


def test_early_stopping(ds):
    cfg = TrainConfig(**dict(FAST, epochs_outer=8, val_every=1, early_stop_patience=1,
                             train_mode="dis_only"))
    res = train(ds, mconf(ds), cfg)
    assert res.state["stopped"] or res.state["epochs_done"] == 8
    if res.state["stopped"]:
        assert res.state["epochs_done"] < 8
    assert len(res.log.validation) == res.state["epochs_done"]
    json.dumps(res.state)


def test_rejects_dim_mismatch(ds):
    with pytest.raises(ValueError):
        train(ds, ModelConfig(ds.image_dim + 1, ds.text_dim, 8, 8), TrainConfig(**FAST))
