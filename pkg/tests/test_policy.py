import itertools

import numpy as np
import pytest

from myobench import movements
from myobench.nn import Adam, Mlp, polyak_update
from myobench.policy import (
    LabeledDataset,
    PolicyNet,
    PretrainConfig,
    Standardizer,
    sl_pretrain,
)


def _random_policy(seed=0, hidden=(16, 16)):
    return PolicyNet(hidden=hidden, rng=np.random.default_rng(seed), dtype=np.float64)


def _probe_gradient(loss_fn, params, n_probes, rng, h=1e-6):
    """Max relative error between analytic grads and central differences."""
    loss, grads = loss_fn()
    worst = 0.0
    for _ in range(n_probes):
        pi = rng.integers(len(params))
        idx = tuple(rng.integers(s) for s in params[pi].shape)
        original = params[pi][idx]
        params[pi][idx] = original + h
        up, _ = loss_fn()
        params[pi][idx] = original - h
        down, _ = loss_fn()
        params[pi][idx] = original
        numeric = (up - down) / (2 * h)
        analytic = grads[pi][idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


class TestForward:
    def test_zeroed_final_layer_gives_half(self):
        pol = _random_policy()
        pol.net.weights[-1][:] = 0.0
        pol.net.biases[-1][:] = 0.0
        out = pol.forward(np.random.default_rng(0).standard_normal(32))
        np.testing.assert_allclose(out, 0.5)

    def test_deterministic(self):
        pol = _random_policy(3)
        s = np.random.default_rng(1).standard_normal(32)
        np.testing.assert_array_equal(pol.forward(s), pol.forward(s.copy()))

    def test_outputs_in_open_interval(self):
        pol = _random_policy(4)
        s = np.random.default_rng(2).standard_normal((20, 32))
        out = pol.forward(s)
        assert np.all(out > 0) and np.all(out < 1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            _random_policy().forward(np.zeros(31))

    def test_input_jacobian_matches_finite_differences(self):
        pol = _random_policy(5)
        rng = np.random.default_rng(6)
        s = rng.standard_normal((1, 32))
        out, cache = pol.net.forward_cached(s)
        # gradient of output 2 w.r.t. inputs
        grad_out = np.zeros((1, 7))
        grad_out[0, 2] = 1.0
        _, grad_in = pol.net.backward(cache, grad_out, need_input_grad=True)
        h = 1e-6
        for j in rng.integers(0, 32, size=8):
            up = s.copy()
            up[0, j] += h
            down = s.copy()
            down[0, j] -= h
            numeric = (pol.net.forward(up)[0, 2] - pol.net.forward(down)[0, 2]) / (2 * h)
            assert numeric == pytest.approx(grad_in[0, j], rel=1e-5, abs=1e-9)


class TestPredict:
    def test_exact_half_rounds_down(self):
        pol = _random_policy()
        pol.net.weights[-1][:] = 0.0
        pol.net.biases[-1][:] = 0.0
        pred = pol.predict(np.zeros(32))
        assert pred.tolist() == [0] * 7

    def test_threshold_pattern(self):
        probs = np.array([0.9, 0.1, 0.1, 0.8, 0.2, 0.1, 0.05])
        assert ((probs > 0.5).astype(int)).tolist() == [1, 0, 0, 1, 0, 0, 0]

    def test_threshold_reaches_thumb_index_flex(self):
        probs = np.array([0.1, 0.9, 0.1, 0.8, 0.2, 0.1, 0.05])
        assert movements.decode((probs > 0.5).astype(np.uint8)) == 8

    def test_rest_dominant_probs(self):
        probs = np.array([0.1] * 6 + [0.9])
        bits = (probs > 0.5).astype(np.uint8)
        assert movements.decode(bits) == movements.REST_ID

    def test_threshold_invariant_to_monotone_reparameterization(self):
        # predict depends only on the 0.5 crossing of the final sigmoid
        pol = _random_policy(11)
        s = np.random.default_rng(12).standard_normal((50, 32))
        p = pol.forward(s)
        squashed = 1.0 / (1.0 + np.exp(-3.0 * np.log(p / (1 - p))))  # monotone, fixes 0.5
        np.testing.assert_array_equal(p > 0.5, squashed > 0.5)


class TestRmseLoss:
    def test_zero_when_exact(self):
        pol = _random_policy(7)
        s = np.random.default_rng(8).standard_normal((4, 32))
        targets = pol.forward(s)
        loss, _ = pol.rmse_loss_and_grads(s, targets)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_half_outputs_binary_targets(self):
        pol = _random_policy()
        pol.net.weights[-1][:] = 0.0
        pol.net.biases[-1][:] = 0.0
        s = np.random.default_rng(9).standard_normal((6, 32))
        targets = np.random.default_rng(10).integers(0, 2, size=(6, 7)).astype(float)
        loss, _ = pol.rmse_loss_and_grads(s, targets)
        assert loss == pytest.approx(0.5, abs=1e-12)

    def test_empty_batch_raises(self):
        with pytest.raises(ValueError):
            _random_policy().rmse_loss_and_grads(np.zeros((0, 32)), np.zeros((0, 7)))

    def test_gradient_matches_finite_differences(self):
        pol = _random_policy(20)
        rng = np.random.default_rng(21)
        s = rng.standard_normal((8, 32))
        t = rng.integers(0, 2, size=(8, 7)).astype(float)
        worst = _probe_gradient(
            lambda: pol.rmse_loss_and_grads(s, t), pol.net.parameters(), 60, rng
        )
        assert worst < 1e-4


class TestLogProb:
    def test_half_probabilities(self):
        pol = _random_policy()
        pol.net.weights[-1][:] = 0.0
        pol.net.biases[-1][:] = 0.0
        s = np.zeros(32)
        for a in (np.zeros(7), np.ones(7)):
            assert pol.log_prob(s, a) == pytest.approx(7 * np.log(0.5), abs=1e-12)

    def test_confident_match_near_zero(self):
        pol = _random_policy(30)
        pol.net.biases[-1][:] = 30.0  # saturate towards 1
        s = np.random.default_rng(31).standard_normal(32)
        a = np.ones(7)
        assert pol.log_prob(s, a) > np.log(1 - 1e-5) * 7

    def test_normalization_over_all_actions(self):
        pol = _random_policy(32)
        rng = np.random.default_rng(33)
        actions = np.array(list(itertools.product((0, 1), repeat=7)), dtype=float)
        for _ in range(5):
            s = rng.standard_normal(32)
            logps = pol.log_prob(np.repeat(s[None], 128, axis=0), actions)
            assert np.exp(logps).sum() == pytest.approx(1.0, abs=1e-9)

    def test_weighted_gradient_matches_finite_differences(self):
        pol = _random_policy(40)
        rng = np.random.default_rng(41)
        s = rng.standard_normal((6, 32))
        a = rng.integers(0, 2, size=(6, 7)).astype(float)
        w = rng.uniform(0.5, 3.0, size=6)
        worst = _probe_gradient(
            lambda: pol.weighted_log_prob_loss_and_grads(s, a, w),
            pol.net.parameters(),
            60,
            rng,
        )
        assert worst < 1e-4

    def test_sample_respects_probabilities(self):
        pol = _random_policy(42)
        pol.net.biases[-1][:] = 30.0
        s = np.random.default_rng(43).standard_normal((10, 32))
        samples = pol.sample(s, np.random.default_rng(44))
        assert np.all(samples == 1)


class TestStandardizer:
    def test_round_trip(self):
        rng = np.random.default_rng(50)
        x = rng.standard_normal((100, 32)) * 40 + 3
        std = Standardizer.fit(x)
        back = std.inverse_transform(std.transform(x))
        np.testing.assert_allclose(back, x, rtol=1e-9)

    def test_transform_standardizes(self):
        rng = np.random.default_rng(51)
        x = rng.standard_normal((5000, 32)) * np.arange(1, 33) + 7
        z = Standardizer.fit(x).transform(x)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(z.std(axis=0), 1.0, rtol=1e-9)

    def test_zero_variance_floored(self):
        x = np.ones((10, 32))
        std = Standardizer.fit(x)
        assert np.all(std.std >= 1e-8)


def _toy_dataset(rng, separable=True, n_per=24):
    protos = rng.standard_normal((13, 32)) * 4.0
    states, targets, mids, rids = [], [], [], []
    enc = movements.all_encodings()
    for mid in range(13):
        for rec in range(1, 7):
            feats = protos[mid] + 0.05 * rng.standard_normal((n_per // 6, 32))
            states.append(feats)
            targets.append(np.repeat(enc[mid][None], feats.shape[0], axis=0))
            mids.append(np.full(feats.shape[0], mid))
            rids.append(np.full(feats.shape[0], rec))
    states = np.concatenate(states)
    targets = np.concatenate(targets)
    mids = np.concatenate(mids)
    rids = np.concatenate(rids)
    if not separable:
        perm = rng.permutation(len(targets))
        targets = targets[perm]
    return LabeledDataset(
        states=states,
        targets=targets,
        movement_ids=mids,
        recording_ids=rids,
        val_mask=np.isin(rids, (2, 5)),
    )


class TestPretraining:
    CONFIG = PretrainConfig(epochs=30, batch_size=64, seed=13, hidden=(32, 32))

    def test_separable_dataset_reaches_high_f1(self):
        ds = _toy_dataset(np.random.default_rng(60), separable=True)
        _, history = sl_pretrain(ds, self.CONFIG)
        assert history.best_val_f1 >= 0.95

    def test_shuffled_labels_near_chance(self):
        from myobench import metrics

        rng = np.random.default_rng(61)
        ds = _toy_dataset(rng, separable=False)
        _, history = sl_pretrain(ds, self.CONFIG)
        # permutation baseline: F1 of chance pairings with the same marginals
        perm = rng.permutation(ds.val_targets.shape[0])
        baseline, _, _ = metrics.f1_macro(ds.val_targets[perm], ds.val_targets)
        assert history.best_val_f1 <= baseline + 0.15

    def test_same_seed_identical_parameters(self):
        ds = _toy_dataset(np.random.default_rng(62), separable=True)
        p1, _ = sl_pretrain(ds, self.CONFIG)
        p2, _ = sl_pretrain(ds, self.CONFIG)
        assert p1.params_hash() == p2.params_hash()

    def test_empty_split_raises(self):
        ds = _toy_dataset(np.random.default_rng(63))
        ds.val_mask[:] = True
        with pytest.raises(ValueError):
            sl_pretrain(ds, self.CONFIG)


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(70)
        std = Standardizer(mean=rng.standard_normal(32), std=rng.uniform(0.5, 2, 32))
        pol = PolicyNet(standardizer=std, hidden=(16, 16), rng=rng, seed=70)
        path = tmp_path / "policy.ckpt"
        pol.save(path, provenance={"repetition": 3})
        back = PolicyNet.load(path)
        assert back.params_hash() == pol.params_hash()
        s = rng.standard_normal((4, 32))
        np.testing.assert_array_equal(back.predict(s), pol.predict(s))
        np.testing.assert_allclose(back.standardizer.mean, std.mean)

    def test_deterministic_bytes(self, tmp_path):
        pol = PolicyNet(hidden=(8,), rng=np.random.default_rng(71))
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        pol.save(a)
        pol.save(b)
        assert a.read_bytes() == b.read_bytes()


class TestOptimizer:
    def test_adam_reduces_quadratic(self):
        w = np.array([5.0, -3.0])
        opt = Adam([w], lr=0.1)
        for _ in range(200):
            opt.step([w], [2 * w])
        assert np.abs(w).max() < 1e-2

    def test_weight_decay_pulls_to_zero(self):
        w = np.array([1.0])
        opt = Adam([w], lr=0.05, weight_decay=1.0)
        for _ in range(300):
            opt.step([w], [np.zeros(1)])
        assert abs(w[0]) < 1e-2

    def test_polyak_tau_one_copies(self):
        net = Mlp((4, 3), rng=np.random.default_rng(0))
        tgt = net.copy()
        net.weights[0] += 1.0
        polyak_update(tgt.parameters(), net.parameters(), tau=1.0)
        np.testing.assert_array_equal(tgt.weights[0], net.weights[0])
