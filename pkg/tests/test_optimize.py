import numpy as np
import pytest

from scnn import network, optimize, presets
from scnn.data import Dataset, make_synthetic
from scnn.network import NetworkSpec, ConvSpec, PoolSpec, ShortcutIndicator
from scnn.optimize import (
    OptimizerState,
    TrainConfig,
    adam_step,
    evaluate,
    init_params,
    sgd_step,
    train,
)


def small_net():
    return NetworkSpec(
        input_shape=(1, 8, 8),
        num_classes=2,
        pairs=(
            (ConvSpec(4, (3, 3)), PoolSpec(2, 2, "max", ceil_mode=True)),
            (ConvSpec(8, (2, 2)), PoolSpec(2, 2, "max", ceil_mode=True)),
        ),
    )


class TestInitParams:
    def test_same_seed_bit_identical(self):
        spec = presets.tiny_gradcheck_net()
        si = ShortcutIndicator.zeros(2)
        a = init_params(spec, si, "xavier", seed=42)
        b = init_params(spec, si, "xavier", seed=42)
        for (_, x), (_, y) in zip(a.named_arrays(), b.named_arrays()):
            np.testing.assert_array_equal(x, y)

    def test_biases_zero(self):
        params = init_params(presets.tiny_gradcheck_net(), ShortcutIndicator.zeros(2), "msra", 1)
        for name, arr in params.named_arrays():
            if name.endswith("bias"):
                np.testing.assert_array_equal(arr, np.zeros_like(arr))

    def test_xavier_sample_statistics(self):
        """Uniform(-a, a) with a = sqrt(3/fan_in): zero mean, std a/sqrt(3)."""
        spec = NetworkSpec(
            input_shape=(4, 13, 13), num_classes=2,
            pairs=((ConvSpec(1000, (5, 5)), PoolSpec(2, 2, "max", ceil_mode=True)),),
        )
        params = init_params(spec, ShortcutIndicator.zeros(1), "xavier", seed=7)
        w = params.conv_weights[0]
        assert w.size == 10**5
        fan_in = 4 * 25
        bound = np.sqrt(3.0 / fan_in)
        assert abs(w.mean()) < 3 * w.std() / np.sqrt(w.size)
        assert w.min() >= -bound and w.max() <= bound
        assert abs(w.std() - bound / np.sqrt(3)) < 0.02 * bound

    def test_msra_std_matches_fan_in(self):
        spec = NetworkSpec(
            input_shape=(4, 13, 13), num_classes=2,
            pairs=((ConvSpec(1000, (5, 5)), PoolSpec(2, 2, "max", ceil_mode=True)),),
        )
        params = init_params(spec, ShortcutIndicator.zeros(1), "msra", seed=8)
        w = params.conv_weights[0]
        assert w.size == 10**5
        want = np.sqrt(2.0 / 100)  # fan_in = 4*25 = 100
        assert abs(w.std() - want) / want < 0.02


def _toy_params():
    return network.Parameters(
        [np.array([[[[1.0, 2.0]]]])], [np.array([0.5])],
        np.array([[1.0, -1.0]]), np.array([0.0]),
    )


def _toy_grads():
    return network.Parameters(
        [np.array([[[[0.5, -0.5]]]])], [np.array([1.0])],
        np.array([[0.1, 0.2]]), np.array([-1.0]),
    )


class TestSgdStep:
    def test_plain_gradient_descent(self):
        params, grads = _toy_params(), _toy_grads()
        before = {n: a.copy() for n, a in params.named_arrays()}
        cfg = TrainConfig(momentum=0.0, weight_decay=0.0, base_lr=0.1, bias_lr_multiplier=1.0)
        state = OptimizerState.for_params(params, "sgd_momentum")
        sgd_step(params, grads, state, cfg)
        for (name, p), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
            np.testing.assert_allclose(p, before[name] - 0.1 * g, rtol=1e-15)

    def test_zero_gradient_is_a_no_op(self):
        params = _toy_params()
        before = {n: a.copy() for n, a in params.named_arrays()}
        cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
        state = OptimizerState.for_params(params, "sgd_momentum")
        sgd_step(params, params.zeros_like(), state, cfg)
        for name, p in params.named_arrays():
            np.testing.assert_array_equal(p, before[name])

    def test_momentum_accumulates_closed_form(self):
        params, grads = _toy_params(), _toy_grads()
        cfg = TrainConfig(momentum=0.9, weight_decay=0.0, base_lr=0.01, bias_lr_multiplier=1.0)
        state = OptimizerState.for_params(params, "sgd_momentum")
        sgd_step(params, grads, state, cfg)
        sgd_step(params, grads, state, cfg)
        g = _toy_grads().conv_weights[0]
        want_v = -0.01 * g * (1.0 + 0.9)
        np.testing.assert_allclose(state.velocity["conv1.weight"], want_v, rtol=1e-12)

    def test_weight_decay_skips_biases_and_doubles_bias_lr(self):
        params, grads = _toy_params(), _toy_grads()
        b_before = params.conv_biases[0].copy()
        w_before = params.conv_weights[0].copy()
        cfg = TrainConfig(momentum=0.0, weight_decay=0.5, base_lr=0.1, bias_lr_multiplier=2.0)
        state = OptimizerState.for_params(params, "sgd_momentum")
        sgd_step(params, grads, state, cfg)
        np.testing.assert_allclose(
            params.conv_biases[0], b_before - 0.2 * grads.conv_biases[0], rtol=1e-15
        )
        np.testing.assert_allclose(
            params.conv_weights[0],
            w_before - 0.1 * (grads.conv_weights[0] + 0.5 * w_before),
            rtol=1e-15,
        )


class TestAdamStep:
    def test_first_step_moves_by_lr(self):
        params = _toy_params()
        ones = network.Parameters(
            [np.ones_like(params.conv_weights[0])], [np.ones_like(params.conv_biases[0])],
            np.ones_like(params.output_weight), np.ones_like(params.output_bias),
        )
        before = {n: a.copy() for n, a in params.named_arrays()}
        cfg = TrainConfig(optimizer="adam", base_lr=0.001, bias_lr_multiplier=1.0, weight_decay=0.0)
        state = OptimizerState.for_params(params, "adam")
        adam_step(params, ones, state, cfg)
        for name, p in params.named_arrays():
            np.testing.assert_allclose(p, before[name] - 0.001 / (1.0 + 1e-8), rtol=1e-9)

    def test_zero_gradient_fixed_point(self):
        params = _toy_params()
        before = {n: a.copy() for n, a in params.named_arrays()}
        cfg = TrainConfig(optimizer="adam", weight_decay=0.0)
        state = OptimizerState.for_params(params, "adam")
        for _ in range(5):
            adam_step(params, params.zeros_like(), state, cfg)
        for name, p in params.named_arrays():
            np.testing.assert_array_equal(p, before[name])

    def test_sign_equivariance(self):
        cfg = TrainConfig(optimizer="adam", weight_decay=0.0, bias_lr_multiplier=1.0)
        p1, p2 = _toy_params(), _toy_params()
        g = _toy_grads()
        neg = network.Parameters(
            [-w for w in g.conv_weights], [-b for b in g.conv_biases],
            -g.output_weight, -g.output_bias,
        )
        s1 = OptimizerState.for_params(p1, "adam")
        s2 = OptimizerState.for_params(p2, "adam")
        base = _toy_params()
        adam_step(p1, g, s1, cfg)
        adam_step(p2, neg, s2, cfg)
        for (n, a), (_, b), (_, o) in zip(
            p1.named_arrays(), p2.named_arrays(), base.named_arrays()
        ):
            np.testing.assert_allclose(a - o, -(b - o), rtol=1e-12, atol=1e-15)

    def test_state_shapes_mirror_params_after_steps(self):
        params, grads = _toy_params(), _toy_grads()
        cfg = TrainConfig(optimizer="adam")
        state = OptimizerState.for_params(params, "adam")
        for _ in range(3):
            adam_step(params, grads, state, cfg)
        for name, p in params.named_arrays():
            assert state.m[name].shape == p.shape
            assert state.v[name].shape == p.shape
        assert state.t == 3


class TestTrain:
    def test_zero_iterations_returns_initial_params(self):
        spec = small_net()
        si = ShortcutIndicator.zeros(2)
        data = make_synthetic("separable", 40, 8, seed=0)
        cfg = TrainConfig(batch_size=10, max_iterations=0, rng_seed=5)
        params, history = train(spec, si, data, cfg)
        want = init_params(spec, si, cfg.init, cfg.rng_seed)
        assert history == []
        for (_, a), (_, b) in zip(params.named_arrays(), want.named_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_identical_seeds_bit_identical_trajectories(self):
        spec = small_net()
        si = ShortcutIndicator.from_string("010")
        data = make_synthetic("separable", 60, 8, seed=1)
        cfg = TrainConfig(batch_size=12, max_iterations=25, rng_seed=9, deterministic=True)
        p1, h1 = train(spec, si, data, cfg)
        p2, h2 = train(spec, si, data, cfg)
        assert [r.mean_loss for r in h1] == [r.mean_loss for r in h2]
        for (_, a), (_, b) in zip(p1.named_arrays(), p2.named_arrays()):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("opt", ["sgd_momentum", "adam"])
    def test_loss_decreases_on_separable_data(self, opt):
        spec = small_net()
        si = ShortcutIndicator.zeros(2)
        data = make_synthetic("separable", 100, 8, seed=2)
        cfg = TrainConfig(
            batch_size=20, max_iterations=100, rng_seed=3, optimizer=opt,
            base_lr=0.01 if opt == "sgd_momentum" else 0.002,
        )
        _, history = train(spec, si, data, cfg)
        first = np.mean([r.mean_loss for r in history[:20]])
        last = np.mean([r.mean_loss for r in history[-20:]])
        assert last < first

    def test_converges_to_perfect_training_accuracy(self):
        spec = small_net()
        si = ShortcutIndicator.zeros(2)
        data = make_synthetic("separable", 200, 8, seed=4)
        cfg = TrainConfig(batch_size=20, max_iterations=300, rng_seed=6, base_lr=0.01)
        params, _ = train(spec, si, data, cfg)
        acc, _ = evaluate(spec, si, params, data)
        assert acc == 1.0

    def test_eval_interval_fills_history(self):
        spec = small_net()
        si = ShortcutIndicator.zeros(2)
        data = make_synthetic("separable", 40, 8, seed=5)
        test = make_synthetic("separable", 20, 8, seed=6)
        cfg = TrainConfig(batch_size=10, max_iterations=10, rng_seed=7)
        _, history = train(spec, si, data, cfg, eval_dataset=test, eval_interval=5)
        evaluated = [r for r in history if r.test_accuracy is not None]
        assert [r.iteration for r in evaluated] == [5, 10]

    def test_dataset_shape_mismatch(self):
        spec = small_net()
        data = make_synthetic("separable", 10, 12, seed=8)
        with pytest.raises(Exception):
            train(spec, ShortcutIndicator.zeros(2), data, TrainConfig(max_iterations=1))


class TestEvaluate:
    def test_untrained_uniform_net_predicts_lowest_class(self):
        spec = small_net()
        si = ShortcutIndicator.zeros(2)
        params = init_params(spec, si, "xavier", 0)
        zeroed = params.zeros_like()
        data = make_synthetic("separable", 50, 8, seed=9)
        acc, confusion = evaluate(spec, si, zeroed, data)
        # uniform outputs tie-break to class 0, so accuracy equals class-0 frequency
        assert acc == pytest.approx((data.labels == 0).mean())
        assert confusion[:, 1:].sum() == 0

    def test_confusion_counts_sum_to_n(self):
        spec = small_net()
        si = ShortcutIndicator.zeros(2)
        params = init_params(spec, si, "xavier", 1)
        data = make_synthetic("separable", 30, 8, seed=10)
        _, confusion = evaluate(spec, si, params, data)
        assert confusion.sum() == 30

    def test_perfect_predictor_scores_one(self):
        spec = small_net()
        si = ShortcutIndicator.zeros(2)
        data = make_synthetic("separable", 200, 8, seed=11)
        cfg = TrainConfig(batch_size=20, max_iterations=300, rng_seed=12, base_lr=0.01)
        params, _ = train(spec, si, data, cfg)
        acc, confusion = evaluate(spec, si, params, data)
        assert acc == 1.0
        assert np.trace(confusion) == 200


class TestTenClassSmoke:
    def test_learns_held_out_digit_images(self):
        """End-to-end sanity on real 10-class data: the bundled 8x8 digit
        images from scikit-learn, small net, held-out split."""
        from sklearn.datasets import load_digits

        digits = load_digits()
        images = (digits.images / 16.0)[:, None, :, :]
        labels = digits.target.astype(np.int64)
        train_ds = Dataset(images[:1400], labels[:1400], 10, "memory")
        test_ds = Dataset(images[1400:], labels[1400:], 10, "memory")
        spec = NetworkSpec(
            input_shape=(1, 8, 8), num_classes=10,
            pairs=(
                (ConvSpec(8, (3, 3)), PoolSpec(2, 2, "max", ceil_mode=True)),
                (ConvSpec(16, (2, 2)), PoolSpec(2, 2, "max", ceil_mode=True)),
            ),
        )
        si = ShortcutIndicator.from_string("010")
        cfg = TrainConfig(batch_size=50, max_iterations=600, base_lr=0.01, momentum=0.9, rng_seed=0)
        params, _ = train(spec, si, train_ds, cfg)
        acc, _ = evaluate(spec, si, params, test_ds)
        assert acc > 0.85


class TestTrainConfigValidation:
    @pytest.mark.parametrize(
        "kwargs", [
            {"batch_size": 0},
            {"momentum": 1.0},
            {"base_lr": 0.0},
            {"optimizer": "lbfgs"},
            {"init": "orthogonal"},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
