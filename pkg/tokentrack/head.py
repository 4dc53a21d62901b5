"""
Multi-scale prediction head built from RepConv blocks, and its exact
re-parameterization into single 5×5 convolutions.

Training form of a block: ReLU(BN(conv1(x) + conv3(x) + conv5(x))), every
branch with its own bias and "same" padding. Inference form: ReLU(conv5(x; K̂, b̂)),
where the branch kernels are zero-padded to 5×5 around their centre, summed
with their biases, and the shared BN is folded in.
"""
import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tokentrack.errors import ConfigurationError, ContractError, UnsupportedKernelError
from tokentrack.layers import Module
from tokentrack.tensor import Array, Parameter, Tensor, clip, conv2d, relu, sigmoid, sqrt

MERGED_KERNEL_SIZE = 5


@dataclass
class BatchNormStats:
    gamma: Array
    beta: Array
    mean: Array
    var: Array
    eps: float


@dataclass
class HeadOutput:
    score: Tensor
    offset: Tensor
    size: Tensor

    @property
    def grid(self) -> tuple[int, int]:
        return self.score.shape[0], self.score.shape[1]


class RepConvBlock(Module):
    """Parallel k×k convolutions (k in ``kernel_sizes``) summed, one shared BN, ReLU."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_sizes: Sequence[int] = (1, 3, 5), eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        for size in kernel_sizes:
            if size % 2 == 0 or size > MERGED_KERNEL_SIZE:
                raise UnsupportedKernelError(f"RepConv branch size {size} must be odd and at most {MERGED_KERNEL_SIZE}")
        self.kernel_sizes = tuple(kernel_sizes)
        for size in self.kernel_sizes:
            std = np.sqrt(2.0 / (in_channels * size * size * len(self.kernel_sizes)))
            setattr(self, f"k{size}", Parameter(rng.normal(0.0, std, size=(out_channels, in_channels, size, size))))
            setattr(self, f"b{size}", Parameter(np.zeros(out_channels)))
        self.bn_gamma = Parameter(np.ones(out_channels))
        self.bn_beta = Parameter(np.zeros(out_channels))
        self.bn_mean = Parameter(np.zeros(out_channels), trainable=False)
        self.bn_var = Parameter(np.ones(out_channels), trainable=False)
        self.eps = eps
        self.momentum = momentum

    def branch(self, size: int) -> tuple[Parameter, Parameter]:
        return getattr(self, f"k{size}"), getattr(self, f"b{size}")

    def branch_sum(self, x: Tensor) -> Tensor:
        out: Tensor | None = None
        for size in self.kernel_sizes:
            kernel, bias = self.branch(size)
            y = conv2d(x, kernel, bias, pad=(size - 1) // 2)
            out = y if out is None else out + y
        assert out is not None
        return out

    def batch_norm(self, s: Tensor) -> Tensor:
        channels = s.shape[0]
        gamma = self.bn_gamma.reshape(channels, 1, 1)
        beta = self.bn_beta.reshape(channels, 1, 1)
        if self.training:
            mu = s.mean(axis=(1, 2), keepdims=True)
            centered = s - mu
            var = (centered * centered).mean(axis=(1, 2), keepdims=True)
            count = s.shape[1] * s.shape[2]
            unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
            m = self.momentum
            self.bn_mean.data = ((1 - m) * self.bn_mean.data + m * mu.data.reshape(-1)).astype(self.bn_mean.dtype)
            self.bn_var.data = ((1 - m) * self.bn_var.data + m * unbiased).astype(self.bn_var.dtype)
            return centered / sqrt(var + self.eps) * gamma + beta
        mean = Tensor(self.bn_mean.data.reshape(channels, 1, 1))
        inv_std = Tensor(1.0 / np.sqrt(self.bn_var.data.reshape(channels, 1, 1) + self.eps))
        return (s - mean) * inv_std * gamma + beta

    def bn_stats(self) -> BatchNormStats:
        return BatchNormStats(self.bn_gamma.data, self.bn_beta.data, self.bn_mean.data, self.bn_var.data, self.eps)

    def forward(self, x: Tensor) -> Tensor:
        return block_forward_train(x, self)


def block_forward_train(x: Tensor, block: RepConvBlock) -> Tensor:
    return relu(block.batch_norm(block.branch_sum(x)))


class MergedConv(Module):
    """Single-kernel inference form of a RepConvBlock."""
    export_prefix = "merged."

    def __init__(self, kernel: Array, bias: Array):
        super().__init__()
        self.kernel = Parameter(kernel)
        self.bias = Parameter(bias)

    def forward(self, x: Tensor) -> Tensor:
        return relu(conv2d(x, self.kernel, self.bias, pad=(self.kernel.shape[-1] - 1) // 2))


def pad_kernel(kernel: Array, size: int = MERGED_KERNEL_SIZE) -> Array:
    """Embed an s×s kernel at the centre of a zero size×size kernel."""
    s = kernel.shape[-1]
    if kernel.ndim != 4 or kernel.shape[-2] != s or s % 2 == 0 or s > size:
        raise UnsupportedKernelError(f"cannot pad kernel of shape {kernel.shape} to {size}x{size}")
    if s == size:
        return kernel.copy()
    out = np.zeros(kernel.shape[:2] + (size, size), dtype=kernel.dtype)
    offset = (size - s) // 2
    out[:, :, offset:offset + s, offset:offset + s] = kernel
    return out


def merge_branches(block: RepConvBlock, size: int = MERGED_KERNEL_SIZE) -> tuple[Array, Array]:
    """K_merged = Σ pad(K_s), b_merged = Σ b_s."""
    kernel: Array | None = None
    bias: Array | None = None
    for s in block.kernel_sizes:
        k, b = block.branch(s)
        padded = pad_kernel(k.data, size)
        kernel = padded if kernel is None else kernel + padded
        bias = b.data.copy() if bias is None else bias + b.data
    assert kernel is not None and bias is not None
    return kernel, bias


def fold_bn(kernel: Array, bias: Array, bn: BatchNormStats) -> MergedConv:
    """K̂ = γ/√(σ²+ε)·K, b̂ = β + γ(b − μ)/√(σ²+ε), per output channel."""
    denom = bn.var + bn.eps
    if np.any(denom <= 0):
        raise ContractError("batch-norm variance plus eps must be positive to fold")
    scale = bn.gamma / np.sqrt(denom)
    return MergedConv(kernel * scale[:, None, None, None], bn.beta + (bias - bn.mean) * scale)


def reparameterize_block(block: RepConvBlock) -> MergedConv:
    kernel, bias = merge_branches(block)
    return fold_bn(kernel, bias, block.bn_stats())


class PointwiseConv(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, bias_init: float = 0.0):
        super().__init__()
        std = np.sqrt(1.0 / in_channels)
        self.kernel = Parameter(rng.normal(0.0, std, size=(out_channels, in_channels, 1, 1)))
        self.bias = Parameter(np.full(out_channels, bias_init))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, pad=0)


def channel_schedule(channels: int, num_blocks: int) -> list[int]:
    """C → C/2 → … → C/2^num_blocks."""
    if channels % (2 ** num_blocks) != 0:
        raise ConfigurationError(f"head width {channels} cannot be halved {num_blocks} times")
    return [channels // (2 ** i) for i in range(num_blocks + 1)]


class PredictionHead(Module):
    """
    Classification branch → 1 sigmoid score channel; regression branch →
    2 sigmoid offset channels and 2 sigmoid size channels. Each branch is a
    stack of blocks followed by a 1×1 projection.
    """

    def __init__(self, channels: int, rng: np.random.Generator, num_blocks: int = 4,
                 kernel_sizes: Sequence[int] = (1, 3, 5), eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        widths = channel_schedule(channels, num_blocks)
        self.cls_blocks: list[RepConvBlock | MergedConv] = [
            RepConvBlock(widths[i], widths[i + 1], rng, kernel_sizes, eps, momentum) for i in range(num_blocks)]
        # Score prior of ~0.1 so early focal-loss gradients are not swamped by negatives.
        self.cls_proj = PointwiseConv(widths[-1], 1, rng, bias_init=-2.19)
        self.reg_blocks: list[RepConvBlock | MergedConv] = [
            RepConvBlock(widths[i], widths[i + 1], rng, kernel_sizes, eps, momentum) for i in range(num_blocks)]
        self.reg_proj = PointwiseConv(widths[-1], 4, rng)

    @property
    def merged(self) -> bool:
        return all(isinstance(b, MergedConv) for b in self.cls_blocks + self.reg_blocks)

    def forward(self, features: Tensor) -> HeadOutput:
        return head_forward(features, self)

    def reparameterize(self) -> "PredictionHead":
        """A copy of this head with every RepConvBlock replaced by its MergedConv."""
        head = copy.deepcopy(self)
        head.cls_blocks = [reparameterize_block(b) if isinstance(b, RepConvBlock) else b for b in head.cls_blocks]
        head.reg_blocks = [reparameterize_block(b) if isinstance(b, RepConvBlock) else b for b in head.reg_blocks]
        _ = head.eval()
        return head


# Head probabilities stay strictly inside (0, 1).
PROB_EPS = 1e-6


def head_forward(features: Tensor, head: PredictionHead) -> HeadOutput:
    if features.ndim != 3:
        raise ContractError(f"head expects [C, H, W] features, got {features.shape}")
    cls = features
    for block in head.cls_blocks:
        cls = block(cls)
    reg = features
    for block in head.reg_blocks:
        reg = block(reg)
    height, width = features.shape[1], features.shape[2]
    score = clip(sigmoid(head.cls_proj(cls)), PROB_EPS, 1.0 - PROB_EPS).reshape(height, width)
    regression = clip(sigmoid(head.reg_proj(reg)), PROB_EPS, 1.0 - PROB_EPS)
    return HeadOutput(score=score, offset=regression[0:2], size=regression[2:4])


def reparameterize(head: PredictionHead) -> PredictionHead:
    return head.reparameterize()
