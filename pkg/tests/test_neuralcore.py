import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcases
from iedkit.neuralcore import (
    OptimizerState,
    Parameter,
    RMSprop,
    ShapeMismatchError,
    Tensor,
    functional as F,
    grad_check,
    no_grad,
    rmsprop_step,
)
from iedkit.neuralcore.layers import LSTM, Conv1D, Dense


def t(values, grad=False):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad)


class TestConv:
    def test_identity_kernel(self):
        x = t([[[1.0, -2.0, 3.0]]])
        out = F.conv1d_same(x, t([[[1.0]]]), t([0.0]))
        np.testing.assert_array_equal(out.data, x.data)

    def test_box_kernel_with_zero_pads(self):
        out = F.conv1d_same(t([[[1.0, 2.0, 3.0]]]), t([[[1.0, 1.0, 1.0]]]), t([0.0]))
        np.testing.assert_array_equal(out.data, [[[3.0, 6.0, 5.0]]])

    def test_matches_direct_correlation(self):
        rng = np.random.default_rng(0)
        x, w, b = rng.normal(size=(2, 3, 11)), rng.normal(size=(4, 3, 5)), rng.normal(size=4)
        out = F.conv1d_same(t(x), t(w), t(b)).data
        padded = np.pad(x, ((0, 0), (0, 0), (2, 2)))
        ref = np.zeros((2, 4, 11))
        for n in range(2):
            for o in range(4):
                for i in range(11):
                    ref[n, o, i] = np.sum(padded[n, :, i:i + 5] * w[o]) + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeMismatchError):
            F.conv1d_same(t(np.zeros((1, 1, 4))), t(np.zeros((1, 1, 2))), t([0.0]))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            F.conv1d_same(t(np.zeros((1, 2, 4))), t(np.zeros((1, 3, 3))), t([0.0]))

    @pytest.mark.parametrize("cin,cout,k,expected", [(30, 128, 5, 19_328), (128, 128, 5, 82_048)])
    def test_param_count(self, cin, cout, k, expected):
        layer = Conv1D("c", cin, cout, k, "tanh", np.random.default_rng(0))
        assert layer.count() == expected == cout * (cin * k + 1)

    @settings(max_examples=25, deadline=None)
    @given(cin=st.integers(1, 6), cout=st.integers(1, 6), half=st.integers(0, 3),
           length=st.integers(1, 20))
    def test_property_length_and_count(self, cin, cout, half, length):
        k = 2 * half + 1
        layer = Conv1D("c", cin, cout, k, "relu", np.random.default_rng(0))
        assert layer.count() == cout * (cin * k + 1)
        assert layer(t(np.ones((1, cin, length)))).shape == (1, cout, length)


class TestPooling:
    def test_example(self):
        out = F.maxpool1d(t([[[1, 3, 2, 5, 4, 0]]]), 2)
        np.testing.assert_array_equal(out.data, [[[3, 5, 4]]])

    def test_remainder_dropped(self):
        assert F.maxpool1d(t(np.zeros((1, 1, 7))), 2).shape == (1, 1, 3)

    def test_pool_chain_lengths(self):
        x = t(np.zeros((1, 1, 7500)))
        lengths = []
        for pool in (5, 5, 5, 5, 3, 2, 2):
            x = F.maxpool1d(x, pool)
            lengths.append(x.shape[-1])
        assert lengths == [1500, 300, 60, 12, 4, 2, 1]

    def test_gradient_goes_to_first_max_on_ties(self):
        x = t([[[2.0, 2.0, 1.0, 1.0]]], grad=True)
        F.weighted_sum(F.maxpool1d(x, 2), np.ones((1, 1, 2))).backward()
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0, 1.0, 0.0]]])

    def test_pool_longer_than_input(self):
        with pytest.raises(ShapeMismatchError):
            F.maxpool1d(t(np.zeros((1, 1, 2))), 3)

    def test_upsample(self):
        out = F.upsample_repeat(t([[[1.0, 2.0]]]), 3)
        np.testing.assert_array_equal(out.data, [[[1, 1, 1, 2, 2, 2]]])
        x = t([[[1.0, 2.0]]])
        np.testing.assert_array_equal(F.upsample_repeat(x, 1).data, x.data)

    def test_residual_lengths_meet(self):
        b3 = F.upsample_repeat(t(np.zeros((1, 2, 1))), 300)
        b2 = F.upsample_repeat(t(np.zeros((1, 2, 12))), 25)
        assert b3.shape[-1] == b2.shape[-1] == 300

    def test_upsample_gradient_sums(self):
        x = t([[[1.0, 2.0]]], grad=True)
        F.weighted_sum(F.upsample_repeat(x, 3), np.arange(6.0).reshape(1, 1, 6)).backward()
        np.testing.assert_array_equal(x.grad, [[[3.0, 12.0]]])

    def test_global_avg_pool(self):
        np.testing.assert_array_equal(F.global_avg_pool(t([[1.0, 2.0, 3.0]])).data, [2.0])
        np.testing.assert_array_equal(F.global_avg_pool(t([[4.0, 4.0]])).data, [4.0])
        x = t([[1.0, 2.0, 3.0, 4.0]], grad=True)
        F.weighted_sum(F.global_avg_pool(x), np.array([2.0])).backward()
        np.testing.assert_array_equal(x.grad, [[0.5, 0.5, 0.5, 0.5]])


class TestDense:
    def test_identity(self):
        x = t([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(F.dense(x, t(np.eye(3)), t(np.zeros(3))).data, x.data)

    @pytest.mark.parametrize("f,h,expected", [
        (128, 128, 16_512), (128, 64, 8_256), (64, 1, 65), (2, 32, 96), (32, 32, 1_056), (32, 1, 33),
    ])
    def test_param_count(self, f, h, expected):
        assert Dense("d", f, h, None, np.random.default_rng(0)).count() == expected == h * (f + 1)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            F.dense(t(np.zeros((2, 3))), t(np.zeros((4, 2))), t(np.zeros(2)))


class TestActivations:
    def test_values(self):
        assert F.sigmoid(t([0.0])).data[0] == 0.5
        assert F.tanh(t([0.0])).data[0] == 0.0
        assert F.relu(t([-3.0])).data[0] == 0.0
        assert F.activation(t([2.0]), "relu").data[0] == 2.0

    def test_sigmoid_saturates_without_overflow(self):
        with np.errstate(over="raise"):
            out = F.sigmoid(t([-800.0, 800.0])).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_tanh_gradient(self):
        x = t([0.5], grad=True)
        F.weighted_sum(F.tanh(x), np.ones(1)).backward()
        assert x.grad[0] == pytest.approx(1 - math.tanh(0.5) ** 2, rel=1e-15)
        assert x.grad[0] == pytest.approx(0.786448, abs=1e-6)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            F.activation(t([0.0]), "gelu")


def lstm_reference(x, kernel, recurrent, bias):
    """Textbook per-step recurrence, one sample at a time."""
    hidden = recurrent.shape[0]
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    out = np.zeros((x.shape[0], x.shape[1], hidden))
    for n in range(x.shape[0]):
        h = np.zeros(hidden)
        c = np.zeros(hidden)
        for step in range(x.shape[1]):
            z = x[n, step] @ kernel + h @ recurrent + bias
            i, f, g, o = np.split(z, 4)
            c = sig(f) * c + sig(i) * np.tanh(g)
            h = sig(o) * np.tanh(c)
            out[n, step] = h
    return out


class TestLSTM:
    def test_zero_weights_give_zero_output(self):
        x = t(np.random.default_rng(0).normal(size=(2, 5, 3)))
        out = F.lstm(x, t(np.zeros((3, 8))), t(np.zeros((2, 8))), t(np.zeros(8)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_matches_reference(self):
        rng = np.random.default_rng(1)
        x, k, u, b = (rng.normal(size=s) for s in ((2, 6, 3), (3, 16), (4, 16), (16,)))
        out = F.lstm(t(x), t(k), t(u), t(b)).data
        np.testing.assert_allclose(out, lstm_reference(x, k, u, b), rtol=1e-12, atol=1e-14)

    def test_reverse_is_flipped_forward(self):
        rng = np.random.default_rng(2)
        x, k, u, b = (rng.normal(size=s) for s in ((2, 6, 3), (3, 16), (4, 16), (16,)))
        out = F.lstm(t(x), t(k), t(u), t(b), reverse=True).data
        ref = lstm_reference(x[:, ::-1], k, u, b)[:, ::-1]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-14)

    def test_param_counts(self):
        rng = np.random.default_rng(0)
        assert LSTM("l", 32, 64, "forward", rng).count() == 24_832 == 4 * 64 * (32 + 64 + 1)
        assert LSTM("l", 32, 64, "bidirectional", rng).count() == 49_664
        assert LSTM("l", 64, 32, "forward", rng).count() == 12_416

    def test_bidirectional_concatenates(self):
        layer = LSTM("l", 3, 4, "bidirectional", np.random.default_rng(0))
        out = layer(t(np.ones((2, 5, 3))))
        assert out.shape == (2, 5, 8) and layer.out_features == 8

    def test_forget_bias_is_one(self):
        layer = LSTM("l", 3, 4, "forward", np.random.default_rng(0))
        bias = [p for p in layer.params if p.name.endswith("bias")][0].data
        np.testing.assert_array_equal(bias, [0] * 4 + [1] * 4 + [0] * 8)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            F.lstm(t(np.zeros((1, 2, 3))), t(np.zeros((4, 8))), t(np.zeros((2, 8))), t(np.zeros(8)))


class TestDropout:
    def test_infer_and_zero_rate_are_identity(self):
        x = t(np.arange(10.0))
        assert F.dropout(x, 0.5, False) is x
        assert F.dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_law_of_large_numbers(self):
        x = t(np.full(1_000_000, 2.0))
        out = F.dropout(x, 0.5, True, np.random.default_rng(0)).data
        survivors = np.mean(out != 0.0)
        assert abs(survivors - 0.5) < 0.002
        assert abs(out.mean() - 2.0) / 2.0 < 0.005
        assert set(np.unique(out)) == {0.0, 4.0}

    def test_seeded_masks_repeat(self):
        x = t(np.ones(100))
        a = F.dropout(x, 0.3, True, np.random.default_rng(9)).data
        b = F.dropout(x, 0.3, True, np.random.default_rng(9)).data
        np.testing.assert_array_equal(a, b)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            F.dropout(t([1.0]), 1.0, True, np.random.default_rng(0))


class TestLoss:
    def test_half(self):
        assert F.bce_loss(t([0.5]), [1]).data == pytest.approx(math.log(2), rel=1e-15)

    def test_exact_prediction_hits_clip_floor(self):
        loss = float(F.bce_loss(t([1.0, 0.0]), [1, 0]).data)
        assert 0.0 < loss <= -math.log(1 - 1e-7) * (1 + 1e-9)

    def test_hand_example(self):
        loss = float(F.bce_loss(t([0.9, 0.2]), [1, 0]).data)
        assert loss == pytest.approx((-math.log(0.9) - math.log(0.8)) / 2, rel=1e-14)
        assert loss == pytest.approx(0.164252, abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.0, 1.0), st.integers(0, 1)), min_size=1, max_size=20))
    def test_property_non_negative(self, pairs):
        p, y = zip(*pairs)
        assert float(F.bce_loss(t(p), y).data) >= 0.0


class TestRMSprop:
    def test_hand_example(self):
        p = Parameter("w", [1.0])
        state = OptimizerState()
        rmsprop_step([p], {"w": np.array([2.0])}, state)
        assert state.accumulators["w"][0] == pytest.approx(0.4, rel=1e-15)
        expected = 1 - 0.002 / (math.sqrt(0.4) + 1e-7)
        assert p.data[0] == pytest.approx(expected, rel=1e-15)
        assert p.data[0] == pytest.approx(0.996838, abs=1e-6)

    def test_zero_gradient(self):
        p = Parameter("w", [1.5, -2.0])
        state = OptimizerState(accumulators={"w": np.array([1.0, 4.0])})
        before = p.data.copy()
        rmsprop_step([p], {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(p.data, before)
        np.testing.assert_allclose(state.accumulators["w"], [0.9, 3.6])

    def test_frozen_parameter_untouched(self):
        p = Parameter("w", [1.0, 2.0], trainable=False)
        before = p.data.tobytes()
        state = OptimizerState()
        rmsprop_step([p], {"w": np.array([5.0, -5.0])}, state)
        assert p.data.tobytes() == before
        assert "w" not in state.accumulators

    def test_frozen_parameters_get_no_gradient(self):
        w = Parameter("w", [[1.0], [2.0]], trainable=False)
        x = t([[1.0, 1.0]], grad=True)
        F.weighted_sum(F.dense(x, w, Parameter("b", [0.0])), np.ones((1, 1))).backward()
        assert w.grad is None
        np.testing.assert_array_equal(x.grad, [[1.0, 2.0]])

    def test_accumulator_non_negative(self):
        rng = np.random.default_rng(0)
        p = Parameter("w", rng.normal(size=5))
        opt = RMSprop([p])
        for _ in range(20):
            p.grad = rng.normal(size=5)
            opt.step()
            assert np.all(opt.state.accumulators["w"] >= 0)


class TestAutodiff:
    def test_no_grad_builds_no_graph(self):
        x = t([1.0], grad=True)
        with no_grad():
            y = F.tanh(x)
        assert not y.requires_grad and y._parents == ()

    def test_shared_subgraph_accumulates(self):
        x = t([3.0], grad=True)
        y = F.add(x, x, x)
        F.weighted_sum(y, np.ones(1)).backward()
        assert x.grad[0] == 3.0

    def test_grad_check_rejects_single_precision(self):
        x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        with pytest.raises(TypeError):
            grad_check(lambda: F.weighted_sum(x, np.ones(2)), [x])

    def test_grad_check_detects_wrong_gradient(self):
        x = t([0.3, -0.2], grad=True)

        def broken():
            out = F.tanh(x)
            out._backward = lambda g: x.accumulate(2.0 * g)
            return F.weighted_sum(out, np.ones(2))

        assert grad_check(broken, [x]) > 0.1


@pytest.mark.parametrize("name", sorted(gradcases.OP_CASES))
def test_operation_gradients(name):
    fn, inputs = gradcases.OP_CASES[name]()
    assert grad_check(fn, inputs) < 1e-4


@pytest.mark.parametrize("name", sorted(gradcases.MODEL_CASES))
def test_model_gradients(name):
    fn, inputs = gradcases.MODEL_CASES[name]()
    error = grad_check(fn, inputs, max_coords=gradcases.MODEL_COORDS,
                       rng=np.random.default_rng(0))
    assert error < 1e-4
