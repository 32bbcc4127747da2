import numpy as np
import pytest

from alganvc.blocks import (
    ACTIVATION_ORDER,
    ELU_ALPHA,
    INSTANCE_NORM_EPS,
    LRELU_SLOPE,
    SELU_ALPHA,
    SELU_LAMBDA,
    ActivationKind,
    Conv1dLayer,
    Conv2dLayer,
    ConvSpec,
    GatedConv1d,
    GatedConv2d,
    GatedConvNorm1d,
    GatedConvNorm2d,
    InstanceNorm,
    UpsampleBlock1d,
    apply_activation,
    conv1d,
    conv2d,
    elu,
    glu,
    instance_norm,
    leaky_relu,
    pixel_shuffle_1d,
    relu,
    same_pad,
    selu,
    sigmoid,
)
from alganvc.tensor import Tensor, grad_check


def _t(values, requires_grad=False):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=requires_grad)


class TestConv1d:
    def test_identity_kernel(self):
        x = _t([[1.0, 2.0, 3.0, 4.0]])
        w = _t([[[0.0, 1.0, 0.0]]])
        np.testing.assert_array_equal(conv1d(x, w).data, [[1.0, 2.0, 3.0, 4.0]])

    def test_box_kernel_boundaries(self):
        x = _t([[1.0, 2.0, 3.0, 4.0]])
        w = _t([[[1.0, 1.0, 1.0]]])
        np.testing.assert_array_equal(conv1d(x, w).data, [[3.0, 6.0, 9.0, 7.0]])

    def test_stride_two_width(self):
        x = _t(np.zeros((1, 4)))
        w = _t(np.zeros((1, 1, 3)))
        assert conv1d(x, w, stride=2).shape == (1, 2)

    def test_channel_mismatch(self):
        x = _t(np.zeros((2, 4)))
        w = _t(np.zeros((1, 3, 3)))
        with pytest.raises(ValueError):
            conv1d(x, w)

    def test_bias_broadcast(self):
        x = _t(np.zeros((1, 4)))
        w = _t(np.zeros((2, 1, 3)))
        b = _t([1.0, -1.0])
        out = conv1d(x, w, b)
        np.testing.assert_array_equal(out.data, [[1.0] * 4, [-1.0] * 4])

    def test_grad(self):
        rng = np.random.default_rng(3)
        w = Tensor(rng.normal(0, 0.5, (3, 2, 5)), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 8)))
        assert grad_check(lambda t: conv1d(x, t).square().sum(), w) < 1e-4

    def test_grad_strided_input(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.normal(0, 0.5, (3, 2, 5)))
        x = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
        assert grad_check(lambda t: conv1d(t, w, stride=2).square().sum(), x) < 1e-4


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(1, 3, 3)))
        w = _t(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(conv2d(x, w).data, x.data)

    def test_ones_kernel_stride_two(self):
        x = _t(np.ones((1, 4, 4)))
        w = _t(np.ones((1, 1, 2, 2)))
        out = conv2d(x, w, stride=(2, 2))
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 4.0))

    def test_stride_1x2_halves_width(self):
        x = _t(np.zeros((1, 24, 128)))
        w = _t(np.zeros((1, 1, 4, 4)))
        assert conv2d(x, w, stride=(1, 2)).shape == (1, 24, 64)

    def test_grad(self):
        rng = np.random.default_rng(6)
        w = Tensor(rng.normal(0, 0.5, (2, 1, 3, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(1, 5, 6)))
        assert grad_check(lambda t: conv2d(x, t, stride=(1, 2)).square().sum(), w) < 1e-4


class TestGlu:
    def test_hand_values(self):
        x = _t([[1.0], [-1.0], [0.0], [0.0]])  # A=[1,-1], B=[0,0]
        np.testing.assert_allclose(glu(x).data, [[0.5], [-0.5]])

    def test_gate_saturation(self):
        x = _t([[3.0], [100.0]])
        np.testing.assert_allclose(glu(x).data, [[3.0]], atol=1e-12)

    def test_zero_linear_branch(self):
        x = _t([[0.0], [-7.0]])
        np.testing.assert_array_equal(glu(x).data, [[0.0]])

    def test_odd_channels_rejected(self):
        with pytest.raises(ValueError, match="even"):
            glu(_t(np.zeros((3, 2))))

    def test_grad(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        assert grad_check(lambda t: glu(t).square().sum(), x) < 1e-4


class TestInstanceNorm:
    def test_constant_channel_centers_to_zero(self):
        x = _t(np.full((1, 5), 3.7))
        out = instance_norm(x, _t([1.0]), _t([0.0]))
        np.testing.assert_array_equal(out.data, np.zeros((1, 5)))

    def test_two_point_channel(self):
        out = instance_norm(_t([[1.0, 3.0]]), _t([1.0]), _t([0.0]))
        expected = 1.0 / np.sqrt(1.0 + INSTANCE_NORM_EPS)  # mean 2, population var 1
        np.testing.assert_allclose(out.data, [[-expected, expected]], atol=1e-15)

    def test_affine_collapse(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 7)))
        out = instance_norm(x, _t([0.0, 0.0]), _t([5.0, -5.0]))
        np.testing.assert_array_equal(out.data, [[5.0] * 7, [-5.0] * 7])

    def test_grad_all_inputs(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(3, 9)), requires_grad=True)
        gamma = Tensor(rng.normal(size=3), requires_grad=True)
        beta = Tensor(rng.normal(size=3), requires_grad=True)
        assert grad_check(lambda t: instance_norm(t, gamma, beta).square().sum(), x) < 1e-4
        assert grad_check(lambda t: instance_norm(x, t, beta).square().sum(), gamma) < 1e-4
        assert grad_check(lambda t: instance_norm(x, gamma, t).square().sum(), beta) < 1e-4

    def test_2d_spatial(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(2, 4, 6)), requires_grad=True)
        out = instance_norm(x, _t([1.0, 1.0]), _t([0.0, 0.0]))
        # standardized over both spatial axes per channel
        np.testing.assert_allclose(out.data.mean(axis=(1, 2)), [0.0, 0.0], atol=1e-12)
        assert grad_check(
            lambda t: instance_norm(t, _t([1.0, 1.0]), _t([0.0, 0.0])).square().sum(), x
        ) < 1e-4


class TestPixelShuffle:
    def test_hand_example(self):
        out = pixel_shuffle_1d(_t([[1.0, 2.0], [3.0, 4.0]]), 2)
        np.testing.assert_array_equal(out.data, [[1.0, 3.0, 2.0, 4.0]])

    def test_factor_one_identity(self):
        x = _t(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(pixel_shuffle_1d(x, 1).data, x.data)

    def test_bijection(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 4))
        shuffled = pixel_shuffle_1d(Tensor(x), 3).data
        # inverse: gather strided columns back into channel groups
        restored = np.stack(
            [shuffled[c // 3, (c % 3)::3] for c in range(6)], axis=0
        )
        np.testing.assert_array_equal(restored, x)

    def test_indivisible_channels(self):
        with pytest.raises(ValueError):
            pixel_shuffle_1d(_t(np.zeros((3, 2))), 2)

    def test_grad(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        assert grad_check(lambda t: pixel_shuffle_1d(t, 2).square().sum(), x) < 1e-4


class TestActivations:
    def test_enumeration_fixed(self):
        names = [k.name for k in ACTIVATION_ORDER]
        assert names == ["RELU", "ELU", "SELU", "LRELU", "SIGMOID"]
        assert len(set(ACTIVATION_ORDER)) == 5

    def test_hand_values(self):
        x = _t([-3.0])
        assert apply_activation(ActivationKind.RELU, x).data[0] == 0.0
        assert apply_activation(ActivationKind.LRELU, x).data[0] == pytest.approx(-0.6)
        assert apply_activation(ActivationKind.SIGMOID, _t([0.0])).data[0] == 0.5
        assert apply_activation(ActivationKind.SELU, _t([1.0])).data[0] == 1.0507009873554805

    def test_negative_branch_values(self):
        v = -1.0
        assert elu(_t([v])).data[0] == pytest.approx(ELU_ALPHA * (np.exp(v) - 1.0), abs=1e-15)
        assert selu(_t([v])).data[0] == pytest.approx(
            SELU_LAMBDA * SELU_ALPHA * (np.exp(v) - 1.0), abs=1e-15)
        assert leaky_relu(_t([v])).data[0] == pytest.approx(LRELU_SLOPE * v, abs=1e-15)

    def test_constants(self):
        assert SELU_LAMBDA == 1.0507009873554805
        assert SELU_ALPHA == 1.6732632423543772
        assert LRELU_SLOPE == 0.2
        assert ELU_ALPHA == 1.0

    @pytest.mark.parametrize("fn", [relu, elu, selu, leaky_relu, sigmoid])
    def test_grads(self, fn):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(3, 5)) + 0.01, requires_grad=True)  # avoid kinks
        assert grad_check(lambda t: fn(t).square().sum(), x) < 1e-4

    def test_sigmoid_stable_at_extremes(self):
        out = sigmoid(_t([-800.0, 800.0]))
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-300)


class TestSamePad:
    def test_stride_one_preserves(self):
        left, right, out = same_pad(128, 5, 1)
        assert out == 128 and left + right == 4

    def test_stride_two_halves(self):
        assert same_pad(128, 5, 2)[2] == 64

    def test_ceil_rule(self):
        for size in (4, 5, 7, 128):
            for k in (3, 4, 5):
                for s in (1, 2, 3):
                    assert same_pad(size, k, s)[2] == -(-size // s)

    def test_no_padding_when_exact(self):
        left, right, out = same_pad(4, 2, 2)
        assert (left, right, out) == (0, 0, 2)


class TestCompositeBlocks:
    def test_downsample_order_is_norm_of_glu_of_conv(self):
        # 2-channel hand check: wrong composition orders must disagree
        rng = np.random.default_rng(21)
        block = GatedConvNorm1d(2, 1, 3, 1, rng)
        x = Tensor(rng.normal(size=(2, 6)))
        got = block.forward(x).data

        conv_out = block.gated.conv.forward(x)
        manual = instance_norm(glu(conv_out), block.norm.gamma, block.norm.beta).data
        np.testing.assert_array_equal(got, manual)

        # permuting IN and GLU changes the result on this input
        halves_first = glu(instance_norm(
            conv_out,
            Tensor(np.ones(2)), Tensor(np.zeros(2)),
        )).data
        assert not np.allclose(halves_first, got)

    def test_downsample_stride_two(self):
        block = GatedConvNorm1d(3, 4, 5, 2, np.random.default_rng(0))
        out = block.forward(Tensor(np.random.default_rng(1).normal(size=(3, 128))))
        assert out.shape == (4, 64)

    def test_upsample_doubles_width(self):
        block = UpsampleBlock1d(3, 2, 5, np.random.default_rng(0))
        out = block.forward(Tensor(np.random.default_rng(1).normal(size=(3, 4))))
        assert out.shape == (2, 8)

    def test_upsample_order_includes_shuffle_before_norm(self):
        rng = np.random.default_rng(22)
        block = UpsampleBlock1d(2, 1, 3, rng)
        x = Tensor(rng.normal(size=(2, 4)))
        manual = instance_norm(
            pixel_shuffle_1d(glu(block.gated.conv.forward(x)), 2),
            block.norm.gamma, block.norm.beta,
        ).data
        np.testing.assert_array_equal(block.forward(x).data, manual)

    def test_zero_weights_zero_output(self):
        block = GatedConvNorm1d(2, 3, 5, 2, np.random.default_rng(0))
        for p in block.gated.params():
            p.data[...] = 0.0
        out = block.forward(Tensor(np.random.default_rng(3).normal(size=(2, 8))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_gated_conv_emits_double_channels_internally(self):
        block = GatedConv1d(2, 3, 3, 1, np.random.default_rng(0))
        assert block.conv.weight.shape[0] == 6
        out = block.forward(Tensor(np.zeros((2, 4))))
        assert out.shape == (3, 4)

    def test_2d_blocks_shapes(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(1, 8, 16)))
        plain = GatedConv2d(1, 2, (4, 4), (1, 1), rng)
        normed = GatedConvNorm2d(2, 3, (4, 4), (1, 2), rng)
        mid = plain.forward(x)
        assert mid.shape == (2, 8, 16)
        assert normed.forward(mid).shape == (3, 8, 8)

    @pytest.mark.parametrize("make", [
        lambda rng: (GatedConvNorm1d(2, 3, 5, 2, rng), (2, 8)),
        lambda rng: (UpsampleBlock1d(2, 3, 5, rng), (2, 8)),
        lambda rng: (GatedConv1d(2, 3, 5, 1, rng), (2, 8)),
        lambda rng: (GatedConvNorm2d(2, 3, (3, 3), (1, 2), rng), (2, 6, 8)),
    ])
    def test_block_gradients(self, make):
        rng = np.random.default_rng(13)
        block, in_shape = make(rng)
        x = Tensor(rng.normal(size=in_shape), requires_grad=True)
        assert grad_check(lambda t: block.forward(t).square().sum(), x) < 1e-4

    def test_layer_params_are_leaves(self):
        layer = Conv2dLayer(ConvSpec(1, 2, (3, 3), (1, 1)), np.random.default_rng(0))
        assert all(p.requires_grad for p in layer.params())
        layer1 = Conv1dLayer(ConvSpec(1, 2, 3, 1), np.random.default_rng(0))
        assert [p.shape for p in layer1.params()] == [(2, 1, 3), (2,)]

    def test_instance_norm_layer_init(self):
        layer = InstanceNorm(3)
        np.testing.assert_array_equal(layer.gamma.data, np.ones(3))
        np.testing.assert_array_equal(layer.beta.data, np.zeros(3))
