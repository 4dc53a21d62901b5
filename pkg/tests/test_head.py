import numpy as np
import pytest

from tests.test_tensor import naive_conv
from tokentrack.errors import ConfigurationError, ContractError, UnsupportedKernelError
from tokentrack.head import (
    BatchNormStats, MergedConv, PredictionHead, RepConvBlock, channel_schedule, fold_bn, head_forward,
    merge_branches, pad_kernel, reparameterize_block,
)
from tokentrack.tensor import Tensor, conv2d, no_grad, tensor
from tokentrack.verification import randomize_batch_norm, reparam_deviation


def naive_block(x: np.ndarray, block: RepConvBlock) -> np.ndarray:
    """Inference-mode block evaluated branch by branch."""
    s = sum(naive_conv(x, block.branch(k)[0].data, block.branch(k)[1].data, (k - 1) // 2)
            for k in block.kernel_sizes)
    bn = block.bn_stats()
    y = (s - bn.mean[:, None, None]) / np.sqrt(bn.var[:, None, None] + bn.eps) * bn.gamma[:, None, None] \
        + bn.beta[:, None, None]
    return np.maximum(y, 0.0)


class TestRepConvBlock:
    def test_zero_weights_give_zero_output(self, rng: np.random.Generator):
        block = RepConvBlock(3, 2, rng).eval()
        assert isinstance(block, RepConvBlock)
        for size in block.kernel_sizes:
            kernel, bias = block.branch(size)
            kernel.assign(np.zeros(kernel.shape))
            bias.assign(np.zeros(bias.shape))
        out = block(tensor(rng.normal(size=(3, 6, 6))))
        np.testing.assert_array_equal(out.numpy(), np.zeros((2, 6, 6)))

    def test_unit_kernel_with_identity_norm_is_relu(self, rng: np.random.Generator):
        block = RepConvBlock(4, 4, rng, kernel_sizes=(1,), eps=0.0)
        _ = block.eval()
        block.k1.assign(np.eye(4).reshape(4, 4, 1, 1))  # pyright: ignore[reportAttributeAccessIssue]
        x = tensor(rng.normal(size=(4, 5, 5)))
        np.testing.assert_array_equal(block(x).numpy(), np.maximum(x.numpy(), 0.0))

    def test_against_naive_oracle(self, rng: np.random.Generator, float64: None):
        block = RepConvBlock(3, 4, rng)
        head = PredictionHead(8, rng, num_blocks=1)
        head.cls_blocks = [block]
        _ = randomize_batch_norm(head, rng).eval()
        x = rng.normal(size=(3, 7, 7))
        np.testing.assert_allclose(block(tensor(x)).numpy(), naive_block(x, block), atol=1e-10)

    def test_even_branch_rejected(self, rng: np.random.Generator):
        with pytest.raises(UnsupportedKernelError):
            _ = RepConvBlock(2, 2, rng, kernel_sizes=(1, 2))
        with pytest.raises(UnsupportedKernelError):
            _ = RepConvBlock(2, 2, rng, kernel_sizes=(7,))

    def test_running_statistics_update(self, rng: np.random.Generator, float64: None):
        block = RepConvBlock(2, 3, rng, momentum=0.1)
        x = tensor(rng.normal(size=(2, 6, 6)))
        with no_grad():
            s = block.branch_sum(x).numpy()
            _ = block(x)
        np.testing.assert_allclose(block.bn_mean.data, 0.1 * s.mean(axis=(1, 2)), atol=1e-12)
        unbiased = s.var(axis=(1, 2)) * 36 / 35
        np.testing.assert_allclose(block.bn_var.data, 0.9 + 0.1 * unbiased, atol=1e-12)

    def test_eval_mode_leaves_statistics(self, rng: np.random.Generator):
        block = RepConvBlock(2, 3, rng)
        _ = block.eval()
        _ = block(tensor(rng.normal(size=(2, 6, 6))))
        np.testing.assert_array_equal(block.bn_mean.data, np.zeros(3))
        np.testing.assert_array_equal(block.bn_var.data, np.ones(3))


class TestPadKernel:
    def test_unit_kernel_lands_in_centre(self):
        padded = pad_kernel(np.full((2, 3, 1, 1), 7.0))
        assert padded.shape == (2, 3, 5, 5)
        expected = np.zeros((5, 5))
        expected[2, 2] = 7.0
        np.testing.assert_array_equal(padded[1, 2], expected)

    def test_three_by_three(self, rng: np.random.Generator):
        kernel = rng.normal(size=(1, 1, 3, 3))
        padded = pad_kernel(kernel)
        np.testing.assert_array_equal(padded[:, :, 1:4, 1:4], kernel)
        assert np.count_nonzero(padded) == np.count_nonzero(kernel)

    def test_full_size_is_copied(self, rng: np.random.Generator):
        kernel = rng.normal(size=(1, 1, 5, 5))
        padded = pad_kernel(kernel)
        np.testing.assert_array_equal(padded, kernel)
        assert padded is not kernel

    @pytest.mark.parametrize("shape", [(1, 1, 2, 2), (1, 1, 7, 7), (1, 1, 3, 1)])
    def test_rejected(self, shape: tuple[int, ...]):
        with pytest.raises(UnsupportedKernelError):
            _ = pad_kernel(np.zeros(shape))

    @pytest.mark.parametrize("size", [1, 3, 5])
    def test_padded_conv_matches_natural(self, rng: np.random.Generator, float64: None, size: int):
        x = tensor(rng.normal(size=(2, 8, 6)))
        kernel = rng.normal(size=(3, 2, size, size))
        natural = conv2d(x, Tensor(kernel), pad=(size - 1) // 2).numpy()
        padded = conv2d(x, Tensor(pad_kernel(kernel)), pad=2).numpy()
        np.testing.assert_allclose(natural, padded, atol=1e-12)


class TestMergeAndFold:
    def test_merge_sums_padded_kernels_and_biases(self, rng: np.random.Generator):
        block = RepConvBlock(2, 3, rng)
        for size in block.kernel_sizes:
            block.branch(size)[1].assign(rng.normal(size=3))
        kernel, bias = merge_branches(block)
        expected = sum(pad_kernel(block.branch(s)[0].data) for s in (1, 3, 5))
        np.testing.assert_allclose(kernel, expected, rtol=1e-6)
        np.testing.assert_allclose(bias, sum(block.branch(s)[1].data for s in (1, 3, 5)), rtol=1e-6)

    def test_identity_statistics_fold_to_same_kernel(self, rng: np.random.Generator):
        kernel = rng.normal(size=(2, 2, 5, 5))
        bias = rng.normal(size=2)
        bn = BatchNormStats(np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), eps=0.0)
        merged = fold_bn(kernel, bias, bn)
        np.testing.assert_allclose(merged.kernel.data, kernel, rtol=1e-6)
        np.testing.assert_allclose(merged.bias.data, bias, rtol=1e-6)

    def test_scale_and_shift(self):
        kernel = np.ones((1, 1, 5, 5))
        bn = BatchNormStats(np.array([2.0]), np.array([1.0]), np.array([3.0]), np.array([4.0]), eps=0.0)
        merged = fold_bn(kernel, np.array([5.0]), bn)
        np.testing.assert_allclose(merged.kernel.data, np.ones((1, 1, 5, 5)))
        np.testing.assert_allclose(merged.bias.data, [1.0 + 2.0 * (5.0 - 3.0) / 2.0])

    def test_non_positive_variance(self):
        bn = BatchNormStats(np.ones(1), np.zeros(1), np.zeros(1), np.array([-1.0]), eps=0.0)
        with pytest.raises(ContractError):
            _ = fold_bn(np.zeros((1, 1, 5, 5)), np.zeros(1), bn)

    def test_folded_block_matches_training_form(self, rng: np.random.Generator, float64: None):
        head = randomize_batch_norm(PredictionHead(8, rng, num_blocks=1), rng)
        _ = head.eval()
        block = head.cls_blocks[0]
        assert isinstance(block, RepConvBlock)
        merged = reparameterize_block(block)
        assert isinstance(merged, MergedConv)
        assert merged.kernel.shape == (4, 8, 5, 5)
        x = tensor(rng.normal(size=(8, 6, 6)))
        np.testing.assert_allclose(merged(x).numpy(), block(x).numpy(), atol=1e-10)


class TestPredictionHead:
    def test_channel_schedule(self):
        assert channel_schedule(16, 2) == [16, 8, 4]
        assert channel_schedule(768, 4) == [768, 384, 192, 96, 48]
        with pytest.raises(ConfigurationError):
            _ = channel_schedule(12, 3)

    def test_output_shapes_and_ranges(self, rng: np.random.Generator):
        head = PredictionHead(16, rng, num_blocks=2)
        out = head_forward(tensor(rng.normal(size=(16, 4, 5))), head)
        assert out.score.shape == (4, 5)
        assert out.offset.shape == (2, 4, 5)
        assert out.size.shape == (2, 4, 5)
        assert out.grid == (4, 5)
        for part in (out.score, out.offset, out.size):
            values = part.numpy()
            assert np.all((values > 0.0) & (values < 1.0))

    @pytest.mark.parametrize("bias", [-200.0, 200.0])
    def test_saturated_outputs_stay_strictly_inside_unit_interval(self, rng: np.random.Generator, bias: float):
        head = PredictionHead(16, rng, num_blocks=2)
        head.cls_proj.bias.assign(np.full(1, bias))
        head.reg_proj.bias.assign(np.full(4, bias))
        out = head_forward(tensor(rng.normal(size=(16, 4, 4))), head)
        for part in (out.score, out.offset, out.size):
            values = part.numpy()
            assert np.all((values > 0.0) & (values < 1.0))
            assert np.all(np.isfinite(np.log(values)) & np.isfinite(np.log1p(-values)))

    def test_rejects_token_layout(self, rng: np.random.Generator):
        with pytest.raises(ContractError):
            _ = PredictionHead(16, rng, num_blocks=2)(tensor(np.zeros((16, 16))))

    def test_reparameterize_returns_merged_copy(self, rng: np.random.Generator):
        head = PredictionHead(16, rng, num_blocks=2)
        merged = head.reparameterize()
        assert merged.merged
        assert not head.merged
        assert not merged.training
        assert all(isinstance(b, RepConvBlock) for b in head.cls_blocks)

    def test_reparameterized_head_is_equivalent_in_float32(self):
        assert reparam_deviation(16, (4, 4), 2, 20, np.random.default_rng(7)) < 1e-4

    def test_reparameterized_head_is_equivalent_in_float64(self, float64: None):
        assert reparam_deviation(16, (4, 4), 2, 20, np.random.default_rng(7)) < 1e-8

    def test_single_branch_head(self):
        assert reparam_deviation(8, (3, 3), 1, 5, np.random.default_rng(3), kernel_sizes=(3,)) < 1e-4
