"""Tests for networks: losses, Adam, ChoiceNet/PredictNet, training loop."""

import numpy as np
import pytest

from copsel import networks as N
from copsel import tensor as T
from copsel.copula import NoiseDraw, sample_correlated_uniform
from copsel.samplers import binary_mask
from copsel.synthetic import Dataset, SyntheticSpec, generate
from copsel.tensor import Tensor

from gradcheck import finite_difference, relative_error


def tiny_config(**kwargs):
    base = dict(mode="binary", t=1.0, lam=0.0, h_c=8, h_p=8,
                learning_rate=1e-3, batch_size=16, epochs=1,
                weight_decay=0.0, seed=0)
    base.update(kwargs)
    return N.TrainingConfig(**base)


def tiny_dataset(n=64, d=11, seed=0):
    train, _ = generate(SyntheticSpec("syn1", d=d, n_train=n, n_test=8,
                                      seed=seed))
    return train


class TestLosses:
    def test_cross_entropy_value(self):
        pred = Tensor(np.array([[0.5, 0.5], [0.25, 0.75]]))
        y = np.array([0, 1])
        expected = -0.5 * (np.log(0.5) + np.log(0.75))
        assert N.cross_entropy(pred, y).item() == pytest.approx(expected)

    def test_cross_entropy_clamps_zero(self):
        pred = Tensor(np.array([[0.0, 1.0]]))
        loss = N.cross_entropy(pred, np.array([0]))
        assert np.isfinite(loss.item())

    def test_binary_loss_adds_l1_penalty(self):
        pred = Tensor(np.array([[1.0, 0.0]]))
        soft = Tensor(np.array([[0.5, 0.25, 0.25]]))
        base = N.loss_binary(pred, np.array([0]), soft, lam=0.0).item()
        penalized = N.loss_binary(pred, np.array([0]), soft, lam=2.0).item()
        assert penalized - base == pytest.approx(2.0 * 1.0)

    def test_topk_loss_is_plain_ce(self):
        pred = Tensor(np.array([[0.25, 0.75]]))
        y = np.array([1])
        assert (N.loss_topk(pred, y).item()
                == pytest.approx(N.cross_entropy(pred, y).item()))


class TestAdam:
    def test_first_step_size_is_lr(self):
        # With constant gradient g, |update| = lr after bias correction.
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.5, -3.0])
        opt = N.Adam([p], lr=0.1)
        opt.step()
        assert np.allclose(p.data, [0.9, -1.9], atol=1e-6)

    def test_decoupled_weight_decay(self):
        # Zero gradient: update reduces to lr * wd * p.
        p = Tensor(np.array([2.0]), requires_grad=True)
        p.grad = np.zeros(1)
        opt = N.Adam([p], lr=0.1, weight_decay=0.5)
        opt.step()
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_zero_grad(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.ones(1)
        N.Adam([p], lr=0.1).zero_grad()
        assert p.grad is None or not p.grad.any()


class TestChoiceNet:
    def test_forward_shapes(self):
        rng = np.random.default_rng(0)
        net = N.ChoiceNet(d=6, h_c=8, rank=3, mode="binary", rng=rng)
        alpha, model = net.forward(Tensor(rng.standard_normal((5, 6))))
        assert alpha.shape == (5, 6)
        assert model.L.shape == (5, 6, 3)
        assert model.sigma.shape == (5,)
        assert np.all(model.sigma.data >= N.SIGMA_FLOOR)

    def test_topk_scores_positive(self):
        rng = np.random.default_rng(1)
        net = N.ChoiceNet(d=6, h_c=8, rank=6, mode="topk", rng=rng)
        alpha, model = net.forward(Tensor(rng.standard_normal((4, 6))))
        assert np.all(alpha.data >= N.ALPHA_FLOOR)
        assert model.sigma is None

    def test_sigmoid_head_bounded(self):
        rng = np.random.default_rng(2)
        net = N.ChoiceNet(d=4, h_c=8, rank=4, mode="binary", rng=rng,
                          score_head="sigmoid")
        alpha, _ = net.forward(Tensor(rng.standard_normal((8, 4))))
        assert np.all((alpha.data > 0.0) & (alpha.data < 1.0))


class TestPredictNet:
    def test_softmax_output(self):
        rng = np.random.default_rng(0)
        net = N.PredictNet(d=5, h_p=8, n_classes=3, rng=rng)
        out = net.forward(Tensor(rng.standard_normal((6, 5))), training=True)
        assert out.shape == (6, 3)
        assert np.allclose(out.data.sum(axis=1), 1.0)

    def test_fits_separable_data(self):
        # Plain classifier sanity: two well-separated clusters in 200 steps.
        rng = np.random.default_rng(3)
        x = np.vstack([rng.standard_normal((64, 4)) - 3.0,
                       rng.standard_normal((64, 4)) + 3.0])
        y = np.repeat([0, 1], 64)
        net = N.PredictNet(d=4, h_p=16, n_classes=2, rng=rng)
        opt = N.Adam(net.parameters(), lr=1e-2)
        for _ in range(200):
            pred = net.forward(Tensor(x), training=True)
            loss = N.cross_entropy(pred, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
        assert loss.item() <= 0.05


class TestEndToEndGradients:
    def test_joint_loss_matches_finite_differences(self):
        """Full pipeline gradient (ChoiceNet -> copula -> sampler ->
        PredictNet -> loss) against central differences, at fixed noise."""
        rng = np.random.default_rng(7)
        d, n = 4, 6
        x = rng.standard_normal((n, d))
        y = rng.integers(0, 2, size=n)
        zeta = rng.standard_normal((n, d))
        choice = N.ChoiceNet(d, h_c=5, rank=2, mode="binary",
                             rng=np.random.default_rng(0))
        predict = N.PredictNet(d, h_p=4, n_classes=2,
                               rng=np.random.default_rng(1))
        params = choice.parameters() + predict.parameters()
        cfg = N.TrainingConfig(mode="binary", t=1.0, lam=0.3,
                               batch_size=n, epochs=1)

        def loss_value():
            alpha, corr = choice.forward(Tensor(x))
            noise = sample_correlated_uniform(
                corr, np.random.default_rng(0), zeta=zeta)
            mask = binary_mask(alpha, noise, cfg.sampler_params())
            pred = predict.forward(T.mul(Tensor(x), mask.soft), training=True)
            return N.loss_binary(pred, y, mask.soft, cfg.lam)

        loss = loss_value()
        T.zero_grads(params)
        loss.backward()
        for p in (choice.fc1.W, choice.W_L.W, choice.W_sigma.W,
                  predict.fc1.W, predict.fc3.b):
            analytic = np.array(p.grad)

            def fn(values, p=p):
                p.data[...] = values
                with T.no_grad():
                    return loss_value().item()

            fd = finite_difference(fn, p.data.copy(), step=1e-5)
            assert relative_error(analytic, fd) <= 1e-4


class TestTrain:
    def test_one_epoch_bit_reproducible(self):
        data = tiny_dataset()
        cfg = tiny_config()
        a = N.train(cfg, data)
        b = N.train(cfg, data)
        for pa, pb in zip(a.choice.parameters() + a.predict.parameters(),
                          b.choice.parameters() + b.predict.parameters()):
            assert np.array_equal(pa.data, pb.data)
        assert a.history == b.history

    def test_seed_changes_result(self):
        data = tiny_dataset()
        a = N.train(tiny_config(seed=0), data)
        b = N.train(tiny_config(seed=1), data)
        assert not np.array_equal(a.choice.fc1.W.data, b.choice.fc1.W.data)

    def test_nola_leaves_copula_heads_untrained(self):
        # With independent noise no gradient reaches L or sigma heads.
        data = tiny_dataset()
        cfg = tiny_config(nola=True, weight_decay=0.0)
        model = N.train(cfg, data)
        fresh = N.ChoiceNet(data.d, cfg.h_c, data.d, "binary",
                            np.random.default_rng(cfg.seed))
        assert np.array_equal(model.choice.W_L.W.data, fresh.W_L.W.data)
        assert np.array_equal(model.choice.W_sigma.W.data, fresh.W_sigma.W.data)

    def test_history_and_eval_entries(self):
        data = tiny_dataset()
        test = tiny_dataset(n=32, seed=1)
        model = N.train(tiny_config(epochs=3), data, test_data=test)
        assert len(model.history) == 3
        assert "loss" in model.history[0]
        assert "accuracy" in model.history[-1]
        assert "tpr" in model.history[-1]

    def test_topk_k_exceeds_d_rejected(self):
        data = tiny_dataset()
        with pytest.raises(ValueError):
            N.train(tiny_config(mode="topk", k=12), data)

    def test_empty_dataset_rejected(self):
        empty = Dataset(x=np.zeros((0, 11)), y=np.zeros(0, dtype=np.int64))
        with pytest.raises(ValueError):
            N.train(tiny_config(), empty)


class TestInferMask:
    def test_binary_threshold(self):
        rng = np.random.default_rng(0)
        net = N.ChoiceNet(d=3, h_c=4, rank=3, mode="binary", rng=rng)
        cfg = tiny_config()
        mask = N.infer_mask(net, rng.standard_normal((5, 3)), cfg)
        expected = np.round(1.0 / (1.0 + np.exp(
            -net.forward(Tensor(mask.soft.data * 0.0 + 1.0))[0].data)))
        assert mask.hard.shape == (5, 3)
        assert set(np.unique(mask.hard)) <= {0.0, 1.0}

    def test_binary_stochastic_needs_rng(self):
        rng = np.random.default_rng(0)
        net = N.ChoiceNet(d=3, h_c=4, rank=3, mode="binary", rng=rng)
        cfg = tiny_config(stochastic_binary_inference=True)
        with pytest.raises(ValueError):
            N.infer_mask(net, np.zeros((4, 3)), cfg)

    def test_topk_selects_k_highest_scores(self):
        rng = np.random.default_rng(1)
        net = N.ChoiceNet(d=6, h_c=8, rank=6, mode="topk", rng=rng)
        cfg = tiny_config(mode="topk", k=2, t=0.01)
        x = rng.standard_normal((8, 6))
        mask = N.infer_mask(net, x, cfg)
        alpha, _ = net.forward(Tensor(x))
        for i in range(8):
            top = set(np.argsort(-alpha.data[i], kind="stable")[:2])
            assert set(np.flatnonzero(mask.hard[i])) == top


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        data = tiny_dataset()
        model = N.train(tiny_config(epochs=2), data)
        arrays = tmp_path / "ckpt.npz"
        manifest = tmp_path / "manifest.json"
        N.save_checkpoint(model, arrays, manifest)
        loaded = N.load_checkpoint(arrays, manifest)
        assert loaded.config == model.config
        before = N.evaluate(model, data)
        after = N.evaluate(loaded, data)
        assert before == after

    def test_config_hash_stable_and_sensitive(self):
        a = tiny_config()
        assert N.config_hash(a) == N.config_hash(tiny_config())
        assert N.config_hash(a) != N.config_hash(tiny_config(seed=9))


class TestConfigValidation:
    def test_bad_mode(self):
        with pytest.raises(ValueError):
            N.TrainingConfig(mode="soft")

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            N.TrainingConfig(batch_size=1)

    def test_bad_activation(self):
        with pytest.raises(ValueError):
            N.TrainingConfig(activation="gelu")

    def test_low_rank_needs_p(self):
        cfg = N.TrainingConfig(rank_mode="low")
        with pytest.raises(ValueError):
            cfg.factor_rank(11)
        assert N.TrainingConfig(rank_mode="low", p=3).factor_rank(11) == 3
        assert N.TrainingConfig(rank_mode="full").factor_rank(11) == 11
