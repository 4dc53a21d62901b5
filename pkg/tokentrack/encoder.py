"""Patch embedding and the joint transformer encoder over [spatiotemporal; template; search] tokens."""
from dataclasses import dataclass

import numpy as np

from tokentrack.config import ModelConfig
from tokentrack.errors import ConfigurationError, DimensionError
from tokentrack.layers import LayerNorm, Linear, Mlp, Module, MultiHeadAttention
from tokentrack.tensor import Array, Parameter, Tensor, concat


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int
    dim: int
    depth: int
    heads: int
    template_height: int
    template_width: int
    search_height: int
    search_width: int
    mlp_ratio: int = 4
    norm_eps: float = 1e-5
    pixel_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    pixel_std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        p = self.patch_size
        if p < 1 or self.dim < 1 or self.depth < 0:
            raise ConfigurationError(f"invalid encoder sizes: patch {p}, dim {self.dim}, depth {self.depth}")
        for label, size in (("template height", self.template_height), ("template width", self.template_width),
                            ("search height", self.search_height), ("search width", self.search_width)):
            if size < p or size % p != 0:
                raise ConfigurationError(f"{label} {size} is not a positive multiple of patch size {p}")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigurationError(f"embedding width {self.dim} is not divisible by {self.heads} heads")

    @classmethod
    def from_config(cls, model: ModelConfig) -> "EncoderConfig":
        mean = model["pixel_mean"]
        std = model["pixel_std"]
        return cls(
            patch_size=model["patch_size"],
            dim=model["dim"],
            depth=model["depth"],
            heads=model["heads"],
            template_height=model["template_size"],
            template_width=model["template_size"],
            search_height=model["search_size"],
            search_width=model["search_size"],
            mlp_ratio=model["mlp_ratio"],
            norm_eps=model["norm_eps"],
            pixel_mean=(mean[0], mean[1], mean[2]),
            pixel_std=(std[0], std[1], std[2]),
        )

    @property
    def n_z(self) -> int:
        return self.template_height * self.template_width // self.patch_size ** 2

    @property
    def n_x(self) -> int:
        return self.search_height * self.search_width // self.patch_size ** 2

    @property
    def search_grid(self) -> tuple[int, int]:
        return self.search_height // self.patch_size, self.search_width // self.patch_size


@dataclass
class FrameTokens:
    st: Tensor | None
    z: Tensor
    x: Tensor


def standardize(pixels: Array, config: EncoderConfig) -> Array:
    """[3, H, W] intensities in [0, 255] → [0, 1] → per-channel standardized."""
    mean = np.asarray(config.pixel_mean, dtype=pixels.dtype)[:, None, None]
    std = np.asarray(config.pixel_std, dtype=pixels.dtype)[:, None, None]
    return (pixels / 255.0 - mean) / std


def extract_patches(image: Tensor, patch_size: int) -> Tensor:
    """[C, H, W] → [(H/P)·(W/P), C·P·P], patches in row-major order, each flattened as (c, row, col)."""
    channels, height, width = image.shape
    if height % patch_size or width % patch_size:
        raise ConfigurationError(f"image {height}x{width} is not divisible into {patch_size}x{patch_size} patches")
    rows, cols = height // patch_size, width // patch_size
    grid = image.reshape(channels, rows, patch_size, cols, patch_size).transpose(1, 3, 0, 2, 4)
    return grid.reshape(rows * cols, channels * patch_size * patch_size)


class PatchEmbed(Module):
    def __init__(self, patch_size: int, dim: int, rng: np.random.Generator, channels: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.proj = Linear(channels * patch_size * patch_size, dim, rng)

    def forward(self, image: Tensor) -> Tensor:
        return self.proj(extract_patches(image, self.patch_size))


def patch_embed(image: Tensor, config: EncoderConfig, embed: PatchEmbed) -> Tensor:
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"patch_embed expects a [3, H, W] image, got {image.shape}")
    if image.shape[1] % config.patch_size or image.shape[2] % config.patch_size:
        raise ConfigurationError(
            f"image {image.shape[1]}x{image.shape[2]} is not divisible by patch size {config.patch_size}")
    return embed(image)


class LearnableInitToken(Module):
    """Spatiotemporal token used when no propagated token exists yet."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.value = Parameter(rng.normal(0.0, 0.02, size=(1, dim)))

    def forward(self) -> Tensor:
        return self.value


class EncoderBlock(Module):
    """Pre-norm transformer block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, eps: float, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(dim, eps)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim, eps)
        self.mlp = Mlp(dim, dim * mlp_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        return x + self.mlp(self.norm2(x))


class Encoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.patch_embed = PatchEmbed(config.patch_size, config.dim, rng)
        self.pos_st = Parameter(np.zeros((1, config.dim)))
        self.pos_z = Parameter(np.zeros((config.n_z, config.dim)))
        self.pos_x = Parameter(np.zeros((config.n_x, config.dim)))
        self.blocks = [
            EncoderBlock(config.dim, config.heads, config.mlp_ratio, config.norm_eps, rng)
            for _ in range(config.depth)
        ]

    def embed(self, image: Tensor) -> Tensor:
        return patch_embed(image, self.config, self.patch_embed)

    def forward(self, st_in: Tensor | None, z: Tensor, x: Tensor) -> FrameTokens:
        return encode(st_in, z, x, self)


def encode(st_in: Tensor | None, z: Tensor, x: Tensor, weights: Encoder) -> FrameTokens:
    """
    Add positional tables, run the blocks over [st; z; x] and split the result back.
    With ``st_in=None`` the blocks see only [z; x] and ``FrameTokens.st`` is None.
    """
    dim = weights.config.dim
    blocks = [("template", z), ("search", x)]
    if st_in is not None:
        blocks.insert(0, ("spatiotemporal", st_in))
    for label, block in blocks:
        if block.ndim != 2 or block.shape[1] != dim:
            raise DimensionError(f"{label} tokens have shape {block.shape}, expected width {dim}")
    n_st = 0 if st_in is None else st_in.shape[0]
    if (st_in is not None and n_st != 1) or z.shape[0] != weights.pos_z.shape[0] \
            or x.shape[0] != weights.pos_x.shape[0]:
        raise DimensionError(
            f"token counts ({n_st}, {z.shape[0]}, {x.shape[0]}) do not match "
            f"(1, {weights.pos_z.shape[0]}, {weights.pos_x.shape[0]})")

    parts = [z + weights.pos_z, x + weights.pos_x]
    if st_in is not None:
        parts.insert(0, st_in + weights.pos_st)
    tokens = concat(parts, axis=0)
    for block in weights.blocks:
        tokens = block(tokens)

    n_z = z.shape[0]
    st = tokens[0:1] if n_st else None
    return FrameTokens(st=st, z=tokens[n_st:n_st + n_z], x=tokens[n_st + n_z:])
