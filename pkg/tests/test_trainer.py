import numpy as np
import pytest

from clamdet import tensor as tn
from clamdet import trainer
from clamdet.datakit import SynthSpec, synth_feature_dataset
from clamdet.encoders import ConfigError
from clamdet.model import ModelConfig, init_params
from clamdet.objectives import LossConfig
from clamdet.tensor import Tensor
from clamdet.trainer import OptState, TrainConfig


def step(theta, g, lr, wd=0.0, state=None, **kw):
    params = {"w": Tensor(np.array(theta, dtype=float))}
    state = state or OptState()
    trainer.adamw_step(params, {"w": np.array(g, dtype=float)}, state, lr, weight_decay=wd, **kw)
    return params["w"].data, state


def reference_adam(theta, grads, lr, b1, b2, eps):
    """Plain Adam written out from its textbook recurrences."""
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
    return theta


def tiny_data(n_real=24, n_fake=24, seed=3):
    spec = SynthSpec(n_real=n_real, n_fake=n_fake, T=8, d=8, L=2, latent_dim=2, seed=seed)
    ds = synth_feature_dataset(spec)
    idx = np.arange(len(ds))
    return ds.subset(idx[::2]), ds.subset(idx[1::2])


TINY_MODEL = ModelConfig(n_layers=2, dim=8, embed_dim=4, heads=2, head_hidden=4)


class TestAdamW:
    def test_zero_grad_no_decay_fixed_point(self):
        out, _ = step([1.5, -2.0], [0.0, 0.0], lr=0.1)
        assert out.tolist() == [1.5, -2.0]

    def test_pure_decay(self):
        out, _ = step([1.0], [0.0], lr=0.01, wd=0.1)
        assert out[0] == pytest.approx(0.999, abs=1e-15)

    def test_first_step_hand_value(self):
        out, state = step([0.0], [1.0], lr=0.1, betas=(0.9, 0.999), eps=1e-8)
        assert out[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
        assert out[0] == pytest.approx(-0.099999999, abs=1e-9)
        assert state.t == 1

    def test_matches_reference_adam(self):
        rng = np.random.default_rng(0)
        theta0 = rng.standard_normal(6)
        grads = [rng.standard_normal(6) for _ in range(100)]
        params = {"w": Tensor(theta0.copy())}
        state = OptState()
        for g in grads:
            trainer.adamw_step(params, {"w": g}, state, 0.01, (0.85, 0.99), 1e-7, 0.0)
        ref = reference_adam(theta0, grads, 0.01, 0.85, 0.99, 1e-7)
        assert np.max(np.abs(params["w"].data - ref)) <= 1e-12

    def test_nonfinite_gradient_named(self):
        with pytest.raises(tn.NumericError, match="'w'"):
            step([0.0], [np.nan], lr=0.1)

    def test_shape_mismatch(self):
        with pytest.raises(tn.DimensionError):
            step([0.0, 1.0], [1.0], lr=0.1)


class TestBatches:
    def test_remainder(self):
        batches = trainer.make_batches(list(range(10)), 4, 7)
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(sum(batches, [])) == list(range(10))

    def test_single_batch_is_permutation(self):
        ids = [f"t{i}" for i in range(6)]
        (batch,) = trainer.make_batches(ids, 16, 3)
        assert sorted(batch) == sorted(ids)

    def test_deterministic(self):
        ids = list(range(50))
        assert trainer.make_batches(ids, 8, [1, 2]) == trainer.make_batches(ids, 8, [1, 2])
        assert trainer.make_batches(ids, 8, [1, 2]) != trainer.make_batches(ids, 8, [1, 3])

    def test_empty(self):
        with pytest.raises(ValueError):
            trainer.make_batches([], 4, 0)

    def test_fisher_yates_uniform(self):
        # every element should land in position 0 about equally often
        counts = np.zeros(4)
        for s in range(4000):
            counts[trainer.fisher_yates(4, s)[0]] += 1
        assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)


class TestTrain:
    def test_lr_zero_keeps_init(self):
        tr, va = tiny_data()
        cfg = TrainConfig(lr=0.0, epochs=1, batch_size=8, model=TINY_MODEL)
        res = trainer.train(cfg, tr, va, seed=5)
        init = init_params(TINY_MODEL, 5)
        for name in init.names():
            assert np.array_equal(res.params[name].data, init[name].data), name

    def test_lambda_zero_matches_none(self):
        tr, va = tiny_data()
        base = dict(epochs=3, batch_size=8, lr=3e-3, model=TINY_MODEL)
        a = trainer.train(TrainConfig(loss=LossConfig(weight=0.0), **base), tr, va, seed=2)
        b = trainer.train(TrainConfig(loss=LossConfig(alignment="none"), **base), tr, va, seed=2)
        lines_a = [trainer.format_history_line(r) for r in a.history]
        lines_b = [trainer.format_history_line(r) for r in b.history]
        assert lines_a == lines_b
        for name in a.params.names():
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()

    def test_reproducible(self):
        tr, va = tiny_data()
        cfg = TrainConfig(epochs=2, batch_size=8, model=TINY_MODEL)
        a = trainer.train(cfg, tr, va, seed=9)
        b = trainer.train(cfg, tr, va, seed=9)
        assert a.history == b.history

    def test_alignment_recorded(self):
        tr, va = tiny_data()
        res = trainer.train(TrainConfig(epochs=1, batch_size=8, model=TINY_MODEL), tr, va, seed=1)
        assert res.history[0]["align"] > 0
        assert set(res.history[0]) == set(trainer.HISTORY_FIELDS)

    def test_empty_validation(self):
        tr, va = tiny_data()
        with pytest.raises(ConfigError):
            trainer.train(TrainConfig(epochs=1, model=TINY_MODEL), tr, va.subset([]), seed=1)

    def test_nan_reports_coordinates(self):
        tr, va = tiny_data()
        tr.music[3, 0, 0, 0] = np.inf
        with pytest.raises(trainer.TrainingError, match="epoch 1, batch"):
            trainer.train(TrainConfig(epochs=1, batch_size=8, model=TINY_MODEL), tr, va, seed=1)

    def test_overfit_small_subset(self):
        ds = synth_feature_dataset(SynthSpec(n_real=16, n_fake=16, seed=4))
        cfg = TrainConfig(lr=1e-3, epochs=200, batch_size=32, weight_decay=0.0,
                          model=ModelConfig(head_hidden=32))
        losses = [r["train_loss"] for r in trainer.train(cfg, ds, ds, seed=1).history]
        hit = next(i for i, x in enumerate(losses) if x < 0.05)
        assert hit < 200
        # monotone from epoch 5 until the target is reached; Adam jitters near the optimum
        assert all(b < a for a, b in zip(losses[5:hit], losses[6:hit + 1]))

    def test_config_validation(self):
        for bad in (dict(lr=-1.0), dict(batch_size=1), dict(betas=(1.0, 0.9)), dict(eps=0.0)):
            with pytest.raises(ConfigError):
                TrainConfig(**bad)

    def test_published_constants(self):
        assert trainer.PUBLISHED_LR == 1e-4 and trainer.PUBLISHED_BATCH == 128
        assert trainer.PUBLISHED_EPOCHS == 50 and trainer.PUBLISHED_SEEDS == (1, 2, 3, 4, 5)
