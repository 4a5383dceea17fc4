import math

import numpy as np
import pytest

from suncet.config import TrainConfig
from suncet.data import Dataset, bernoulli_split, synthetic_blobs
from suncet.errors import EmptySupervisionError
from suncet.model import Checkpoint, ClassifierHead, checkpoint_bytes, encode, mlp_specs, init_params
from suncet.trainer import (
    build_model,
    evaluate,
    finetune,
    linear_eval,
    metrics_csv,
    pretrain,
    update_macs,
)

SMALL = dict(encoder_dims=(16, 8), proj_dims=(8, 4), unsup_batch=8, sup_classes_per_batch=2,
             sup_samples_per_class=3, eval_every=1, lineval_epochs=10, lineval_milestones=(6, 8),
             finetune_epochs=3, warmup_epochs=0.0)


@pytest.fixture(scope="module")
def toy():
    ds = synthetic_blobs(n=64, d_in=6, n_classes=4, class_dims=3, seed=2)
    test = synthetic_blobs(n=40, d_in=6, n_classes=4, class_dims=3, seed=2, draw=2)
    return ds, test, bernoulli_split(ds, 0.5, 1)


def cfg(**kw):
    return TrainConfig(**{**SMALL, **kw}).validate()


class TestPretrain:
    def test_zero_epochs(self, toy):
        ds, _, split = toy
        res = pretrain(ds, split, cfg(epochs=0, suncet_off_epoch=0))
        assert res.rows == []
        fresh = build_model(cfg(), ds.d_in)
        for k, v in fresh.tensors.items():
            np.testing.assert_array_equal(res.checkpoint.params.tensors[k], v)

    def test_deterministic(self, toy, tmp_path):
        ds, test, split = toy
        c = cfg(epochs=2, suncet_off_epoch=1)
        pretrain(ds, split, c, test, out_dir=tmp_path / "a")
        pretrain(ds, split, c, test, out_dir=tmp_path / "b")
        for f in ("metrics.csv", "checkpoint.snck"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_switch_off_at_zero_matches_pure_instance_run(self, toy):
        ds, _, split = toy
        c = cfg(epochs=2, suncet_off_epoch=0)
        a = pretrain(ds, split, c)
        b = pretrain(ds, bernoulli_split(ds, 0.0, 1), c)
        assert all(r.loss_suncet is None for r in a.rows)
        assert metrics_csv(a.rows) == metrics_csv(b.rows)
        assert checkpoint_bytes(a.checkpoint) == checkpoint_bytes(b.checkpoint)
        assert a.sup_calls == 0

    def test_switch_off_stops_supervised_cost(self, toy):
        ds, _, split = toy
        res = pretrain(ds, split, cfg(epochs=4, suncet_off_epoch=2))
        params = res.checkpoint.params
        steps = res.rows[0].step
        per_epoch = [b.macs_cum - a.macs_cum for a, b in zip(res.rows, res.rows[1:])]
        unsup_only = sum(update_macs(params, 2 * len(i)) for i in
                         np.array_split(np.arange(ds.n), steps))
        assert per_epoch[-1] == per_epoch[-2] == unsup_only
        assert res.rows[0].macs_cum > unsup_only
        assert res.sup_calls == 2 * steps
        assert [r.loss_suncet is None for r in res.rows] == [False, False, True, True]

    def test_flops_identity(self, toy):
        ds, _, split = toy
        for r in pretrain(ds, split, cfg(epochs=3, suncet_off_epoch=2)).rows:
            assert r.flops_cum == 6 * r.macs_cum

    def test_needs_enough_labeled_classes(self, toy):
        ds, _, _ = toy
        with pytest.raises(EmptySupervisionError):
            pretrain(ds, bernoulli_split(ds, 0.0, 1), cfg(epochs=1, suncet_off_epoch=1))


class TestEvaluate:
    def test_zero_classifier_predicts_class_zero(self, toy):
        ds, test, _ = toy
        p = build_model(cfg(), ds.d_in)
        assert evaluate(p, None, test) == pytest.approx(np.mean(test.labels == 0))

    def test_hand_built(self):
        p = init_params(mlp_specs((2, 2)), mlp_specs((2, 2, 1), "identity"), 0)
        p.tensors["encoder.0.weight"] = np.eye(2)
        ds = Dataset(np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.5]]), np.array([0, 1, 1]), 2)
        clf = ClassifierHead(np.eye(2), np.zeros(2))
        # logits equal the features: predictions 0, 1, 0 -> 2 of 3 correct
        assert evaluate(p, clf, ds) == pytest.approx(2 / 3)

    def test_perfect(self):
        p = init_params(mlp_specs((2, 2)), mlp_specs((2, 2, 1), "identity"), 0)
        p.tensors["encoder.0.weight"] = np.eye(2)
        ds = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]), 2)
        assert evaluate(p, ClassifierHead(np.eye(2), np.zeros(2)), ds) == 1.0


def separable_toy():
    g = np.random.default_rng(0)
    y = np.arange(80) % 2
    x = g.standard_normal((80, 4)) * 0.3
    x[:, 0] += np.where(y == 1, 2.0, -2.0)
    return Dataset(x, y, 2)


class TestFinetune:
    def test_zero_init_uniform_probabilities(self, toy):
        ds, _, split = toy
        c = cfg(finetune_epochs=1, finetune_lr=0.0)
        ck = Checkpoint(build_model(c, ds.d_in))
        res = finetune(ds, split, ck, c)
        assert res.rows[0].loss_ce == pytest.approx(math.log(ds.n_classes), abs=1e-12)

    def test_zero_epochs_keeps_zero_classifier(self, toy):
        ds, _, split = toy
        res = finetune(ds, split, Checkpoint(build_model(cfg(), ds.d_in)), cfg(finetune_epochs=0))
        assert not res.classifier.weights.any() and not res.classifier.bias.any()

    def test_separable_reaches_full_accuracy(self):
        ds = separable_toy()
        c = cfg(finetune_epochs=50, finetune_batch=16)
        res = finetune(ds, bernoulli_split(ds, 1.0, 0), Checkpoint(build_model(c, 4)), c)
        assert max(r.train_top1 for r in res.rows) == 1.0

    def test_projection_untouched_encoder_trained(self, toy):
        ds, _, split = toy
        ck = Checkpoint(build_model(cfg(), ds.d_in))
        res = finetune(ds, split, ck, cfg(finetune_epochs=2))
        for k in ck.params.names("projection"):
            assert res.params.tensors[k].tobytes() == ck.params.tensors[k].tobytes()
        assert any(not np.array_equal(res.params.tensors[k], ck.params.tensors[k])
                   for k in ck.params.names("encoder"))

    def test_empty_labels(self, toy):
        ds, _, _ = toy
        with pytest.raises(EmptySupervisionError):
            finetune(ds, bernoulli_split(ds, 0.0, 0), Checkpoint(build_model(cfg(), ds.d_in)), cfg())


class TestLinearEval:
    def test_encoder_frozen(self, toy):
        ds, test, split = toy
        p = build_model(cfg(), ds.d_in)
        before = {k: v.tobytes() for k, v in p.tensors.items()}
        linear_eval(ds, split, p, cfg(), ds_test=test)
        assert before == {k: v.tobytes() for k, v in p.tensors.items()}

    def test_milestones_applied(self, toy):
        ds, _, split = toy
        c = cfg(lineval_epochs=10, lineval_lrs=(0.01, 0.001, 0.0001), lineval_milestones=(6, 8))
        lrs = [r.lr for r in linear_eval(ds, split, build_model(c, ds.d_in), c).rows]
        assert lrs == [0.01] * 6 + [0.001] * 2 + [0.0001] * 2

    def test_random_labels_give_chance_accuracy(self):
        g = np.random.default_rng(3)
        k = 10
        train = Dataset(g.standard_normal((1000, 8)), np.arange(1000) % k, k)
        test = Dataset(g.standard_normal((2000, 8)), np.arange(2000) % k, k)
        c = cfg(lineval_epochs=40, lineval_milestones=(30, 35))
        p = build_model(c, 8)
        res = linear_eval(train, bernoulli_split(train, 1.0, 0), p, c)
        assert abs(evaluate(p, res.classifier, test) - 1 / k) <= 0.05


def test_loss_decreases_on_benchmark():
    ds = synthetic_blobs()
    split = bernoulli_split(ds, 0.1, 0)
    wins = 0
    for seed in range(1, 6):
        rows = pretrain(ds, split, TrainConfig(seed=seed, epochs=10, suncet_off_epoch=0)).rows
        wins += rows[9].loss_inst < rows[0].loss_inst
    assert wins >= 4
