import math

import numpy as np
import pytest

from scnn import autograd, network, ops, presets
from scnn.autograd import backward, cross_entropy, grad_check, output_delta, split_fcl_delta
from scnn.network import ShortcutIndicator, fcl_size
from scnn.optimize import init_params
from reference import StandardCNN


class TestCrossEntropy:
    def test_perfect_prediction(self):
        assert cross_entropy(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0

    def test_uniform_two_class(self):
        got = cross_entropy(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        assert got == pytest.approx(math.log(2), rel=1e-12)

    def test_nonnegative_on_random_softmax(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            o = network.softmax(rng.standard_normal(5))
            y = np.eye(5)[rng.integers(5)]
            assert cross_entropy(o, y) >= 0.0

    def test_batch_is_mean_over_samples(self):
        o = np.array([[0.5, 0.5], [1.0, 0.0]])
        y = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert cross_entropy(o, y) == pytest.approx(math.log(2) / 2, rel=1e-12)

    def test_clamp_keeps_loss_finite(self):
        assert np.isfinite(cross_entropy(np.array([0.0, 1.0]), np.array([1.0, 0.0])))

    def test_length_mismatch(self):
        with pytest.raises(ops.ShapeError):
            cross_entropy(np.ones(3) / 3, np.eye(4)[0])


class TestOutputDelta:
    def test_equal_inputs_give_zero(self):
        o = np.array([0.2, 0.8])
        np.testing.assert_array_equal(output_delta(o, o), np.zeros(2))

    def test_arithmetic(self):
        got = output_delta(np.array([0.7, 0.3]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(got, [-0.3, 0.3], rtol=1e-15)

    def test_sums_to_zero_for_distributions(self):
        rng = np.random.default_rng(1)
        o = network.softmax(rng.standard_normal(6))
        y = np.eye(6)[2]
        assert output_delta(o, y).sum() == pytest.approx(0.0, abs=1e-12)


class TestSplitFclDelta:
    def test_no_shortcuts_single_slice(self):
        spec = presets.tiny_gradcheck_net()
        si = ShortcutIndicator.zeros(2)
        delta = np.arange(fcl_size(spec, si), dtype=float)
        slices = split_fcl_delta(delta, spec, si)
        assert list(slices) == [4]
        np.testing.assert_array_equal(slices[4], delta)

    def test_small_gray32_slice_lengths(self):
        spec = presets.small_gray32()
        si = ShortcutIndicator.from_string("10000")
        delta = np.zeros(4768)
        slices = split_fcl_delta(delta, spec, si)
        assert [s.shape[-1] for s in slices.values()] == [4704, 64]
        assert list(slices) == [1, 6]

    def test_round_trip(self):
        spec = presets.tiny_gradcheck_net()
        rng = np.random.default_rng(2)
        for si in ShortcutIndicator.all_styles(2):
            delta = rng.standard_normal((3, fcl_size(spec, si)))
            slices = split_fcl_delta(delta, spec, si)
            np.testing.assert_array_equal(
                np.concatenate(list(slices.values()), axis=-1), delta
            )

    def test_length_mismatch(self):
        spec = presets.tiny_gradcheck_net()
        with pytest.raises(ops.ShapeError):
            split_fcl_delta(np.zeros(99), spec, ShortcutIndicator.zeros(2))


def _random_batch(spec, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, *spec.input_shape))
    labels = rng.integers(0, spec.num_classes, size=n)
    return x, np.eye(spec.num_classes)[labels]


class TestBackward:
    def test_zero_output_delta_gives_zero_gradients(self):
        spec = presets.tiny_gradcheck_net()
        si = ShortcutIndicator.from_string("101")
        params = init_params(spec, si, "xavier", seed=3)
        x, _ = _random_batch(spec, 2, seed=4)
        cache = network.forward(spec, params, si, x)
        _, grads = backward(spec, params, si, cache, cache.probs.copy())
        for _, arr in grads.named_arrays():
            np.testing.assert_allclose(arr, np.zeros_like(arr), atol=1e-15)

    def test_no_shortcut_gradients_match_reference_standard_cnn(self):
        spec = presets.tiny_gradcheck_net(activation="sigmoid")
        si = ShortcutIndicator.zeros(2)
        params = init_params(spec, si, "xavier", seed=5)
        x, y = _random_batch(spec, 3, seed=6)
        cache = network.forward(spec, params, si, x)
        _, grads = backward(spec, params, si, cache, y)
        probs, gw, gb, g_out_w, g_out_b = StandardCNN(spec, params).batch_grads(x, y)
        np.testing.assert_allclose(cache.probs, probs, rtol=1e-12)
        for k in range(2):
            np.testing.assert_allclose(grads.conv_weights[k], gw[k], rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(grads.conv_biases[k], gb[k], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(grads.output_weight, g_out_w, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(grads.output_bias, g_out_b, rtol=1e-12, atol=1e-15)

    def test_shortcut_additivity_of_sensitivities(self):
        """A selected layer's sensitivity is the plain backprop path plus
        its FCL slice (through the activation derivative for conv layers)."""
        spec = presets.tiny_gradcheck_net(activation="sigmoid")
        si = ShortcutIndicator.from_string("110")
        params = init_params(spec, si, "xavier", seed=7)
        x, y = _random_batch(spec, 2, seed=8)
        cache = network.forward(spec, params, si, x)
        sens, _ = backward(spec, params, si, cache, y)

        conv1, pool1 = spec.pairs[0]
        # layer 2 (pooling, bit set): conv2 input-gradient term + slice
        d_u2 = sens.layers[2]
        plain = ops.conv_backward(
            cache.pool_act[0], params.conv_weights[1], d_u2,
            spec.pairs[1][0].pad, spec.pairs[1][0].stride,
        )[0]
        want2 = plain + sens.fc_slices[2].reshape(plain.shape)
        np.testing.assert_allclose(sens.layers[1], want2, rtol=1e-12, atol=1e-15)

        # layer 1 (conv, bit set): f'(u) * (unpooled term + slice)
        unpooled = ops.pool_backward(
            sens.layers[1], cache.pool_routes[0], cache.conv_act[0].shape[-2:],
            pool1.window, pool1.stride, pool1.mode,
        )
        fprime = network.activation_deriv(cache.conv_pre[0], conv1.activation)
        want1 = fprime * (unpooled + sens.fc_slices[1].reshape(unpooled.shape))
        np.testing.assert_allclose(sens.layers[0], want1, rtol=1e-12, atol=1e-15)

    def test_sensitivity_shapes_match_layer_shapes(self):
        spec = presets.tiny_gradcheck_net()
        si = ShortcutIndicator.from_string("111")
        params = init_params(spec, si, "xavier", seed=9)
        x, y = _random_batch(spec, 2, seed=10)
        cache = network.forward(spec, params, si, x)
        sens, _ = backward(spec, params, si, cache, y)
        for layer in range(1, 5):
            assert sens.layers[layer - 1].shape == cache.layer_value(layer).shape

    @pytest.mark.parametrize("si_str", [format(v, "03b") for v in range(8)])
    def test_gradients_match_finite_differences_every_si(self, si_str):
        spec = presets.tiny_gradcheck_net()
        report = grad_check(spec, ShortcutIndicator.from_string(si_str), seed=11)
        assert report.passed(1e-5), report.as_text(1e-5)


class TestGradCheck:
    def test_all_zero_relu_net_reports_dead_not_failing(self):
        spec = presets.tiny_gradcheck_net(activation="relu")
        si = ShortcutIndicator.zeros(2)
        params = init_params(spec, si, "xavier", seed=0)
        zeroed = params.zeros_like()
        report = grad_check(spec, si, seed=12, params=zeroed)
        assert report.passed(1e-5)
        by_name = {g.name: g for g in report.groups}
        assert by_name["conv1.weight"].n_dead == by_name["conv1.weight"].n_params

    @pytest.mark.parametrize("si_str", [format(v, "03b") for v in range(8)])
    def test_sigmoid_net_tight_tolerance(self, si_str):
        spec = presets.tiny_gradcheck_net(activation="sigmoid")
        report = grad_check(spec, ShortcutIndicator.from_string(si_str), seed=13)
        assert report.max_rel_err <= 1e-6, report.as_text()

    def test_lrn_enabled(self):
        spec = presets.tiny_gradcheck_net(lrn_last=True)
        report = grad_check(spec, ShortcutIndicator.from_string("010"), seed=14)
        assert report.passed(1e-5), report.as_text(1e-5)

    def test_errors_shrink_with_epsilon(self):
        """Central differences are second order: errors at eps=1e-3 should
        dominate those at eps=1e-5."""
        spec = presets.tiny_gradcheck_net(activation="sigmoid")
        si = ShortcutIndicator.from_string("001")
        coarse = grad_check(spec, si, seed=15, epsilon=1e-3)
        fine = grad_check(spec, si, seed=15, epsilon=1e-5)
        assert coarse.max_rel_err > fine.max_rel_err * 10

    def test_report_text_mentions_groups(self):
        spec = presets.tiny_gradcheck_net()
        report = grad_check(spec, ShortcutIndicator.zeros(2), seed=16)
        text = report.as_text(1e-5)
        for name in ("conv1.weight", "output.bias", "PASS"):
            assert name in text
