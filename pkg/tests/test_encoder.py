import math

import numpy as np
import pytest

from tokentrack.encoder import (
    Encoder, EncoderBlock, EncoderConfig, LearnableInitToken, PatchEmbed, encode, extract_patches, patch_embed,
    standardize,
)
from tokentrack.errors import ConfigurationError, DimensionError
from tokentrack.tensor import tensor


def small_config(depth: int = 2, **overrides: int) -> EncoderConfig:
    values = dict(patch_size=8, dim=16, depth=depth, heads=2, template_height=16, template_width=16,
                  search_height=32, search_width=32, mlp_ratio=2)
    values.update(overrides)
    return EncoderConfig(**values)  # pyright: ignore[reportArgumentType]


def naive_layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def naive_block(x: np.ndarray, block: EncoderBlock, heads: int, eps: float) -> np.ndarray:
    def linear(v: np.ndarray, layer) -> np.ndarray:  # pyright: ignore[reportMissingParameterType]
        return v @ layer.weight.data + layer.bias.data

    h = naive_layer_norm(x, block.norm1.gamma.data, block.norm1.beta.data, eps)
    dim = x.shape[1]
    head_dim = dim // heads
    q, k, v = linear(h, block.attn.q_proj), linear(h, block.attn.k_proj), linear(h, block.attn.v_proj)
    context = np.zeros_like(x)
    for head in range(heads):
        cols = slice(head * head_dim, (head + 1) * head_dim)
        scores = q[:, cols] @ k[:, cols].T / math.sqrt(head_dim)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        context[:, cols] = weights @ v[:, cols]
    x = x + linear(context, block.attn.out_proj)

    h = naive_layer_norm(x, block.norm2.gamma.data, block.norm2.beta.data, eps)
    u = linear(h, block.mlp.fc1)
    u = 0.5 * u * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (u + 0.044715 * u ** 3)))
    return x + linear(u, block.mlp.fc2)


class TestEncoderConfig:
    def test_token_counts(self):
        config = small_config()
        assert config.n_z == 16 * 16 // 64
        assert config.n_x == 32 * 32 // 64
        assert config.search_grid == (4, 4)

    @pytest.mark.parametrize("overrides", [
        {"template_height": 12}, {"search_width": 36}, {"heads": 3}, {"patch_size": 0},
    ])
    def test_invalid_layouts(self, overrides: dict[str, int]):
        with pytest.raises(ConfigurationError):
            _ = small_config(**overrides)

    def test_from_config(self, tiny_config):  # pyright: ignore[reportMissingParameterType]
        config = EncoderConfig.from_config(tiny_config)
        assert (config.patch_size, config.dim, config.search_height) == (8, 16, 32)


class TestPatchEmbed:
    def test_single_patch(self, rng: np.random.Generator):
        config = small_config(template_height=8, template_width=8, search_height=8, search_width=8)
        embed = PatchEmbed(8, 16, rng)
        tokens = patch_embed(tensor(rng.normal(size=(3, 8, 8))), config, embed)
        assert tokens.shape == (1, 16)

    def test_zero_image_gives_zero_tokens(self, rng: np.random.Generator):
        config = small_config()
        tokens = patch_embed(tensor(np.zeros((3, 32, 32))), config, PatchEmbed(8, 16, rng))
        np.testing.assert_array_equal(tokens.numpy(), np.zeros((16, 16)))

    def test_identity_projection_matches_naive_patches(self, rng: np.random.Generator):
        embed = PatchEmbed(2, 12, rng)
        embed.proj.weight.assign(np.eye(12))
        image = rng.normal(size=(3, 4, 6)).astype(np.float32)
        tokens = embed(tensor(image)).numpy()

        expected = []
        for r in range(2):
            for c in range(3):
                expected.append(image[:, 2 * r:2 * r + 2, 2 * c:2 * c + 2].reshape(-1))
        np.testing.assert_array_equal(tokens, np.stack(expected))

    def test_indivisible_image(self, rng: np.random.Generator):
        with pytest.raises(ConfigurationError):
            _ = patch_embed(tensor(np.zeros((3, 30, 32))), small_config(), PatchEmbed(8, 16, rng))
        with pytest.raises(ConfigurationError):
            _ = extract_patches(tensor(np.zeros((3, 10, 10))), 4)

    def test_wrong_channel_count(self, rng: np.random.Generator):
        with pytest.raises(DimensionError):
            _ = patch_embed(tensor(np.zeros((1, 32, 32))), small_config(), PatchEmbed(8, 16, rng))

    def test_standardize(self):
        config = small_config()
        pixels = np.full((3, 2, 2), 255.0)
        out = standardize(pixels, config)
        expected = (1.0 - np.array(config.pixel_mean)) / np.array(config.pixel_std)
        np.testing.assert_allclose(out[:, 0, 0], expected)


class TestEncode:
    def test_empty_encoder_adds_positions(self, rng: np.random.Generator):
        encoder = Encoder(small_config(depth=0), rng)
        for pos in (encoder.pos_st, encoder.pos_z, encoder.pos_x):
            pos.assign(rng.normal(size=pos.shape))
        st, z, x = (tensor(rng.normal(size=(n, 16))) for n in (1, 4, 16))
        out = encode(st, z, x, encoder)
        assert out.st is not None
        np.testing.assert_array_equal(out.st.numpy(), (st + encoder.pos_st).numpy())
        np.testing.assert_array_equal(out.z.numpy(), (z + encoder.pos_z).numpy())
        np.testing.assert_array_equal(out.x.numpy(), (x + encoder.pos_x).numpy())

    def test_block_lengths(self, rng: np.random.Generator):
        encoder = Encoder(small_config(), rng)
        out = encoder(tensor(rng.normal(size=(1, 16))), tensor(rng.normal(size=(4, 16))),
                      tensor(rng.normal(size=(16, 16))))
        assert out.st is not None
        assert (out.st.shape, out.z.shape, out.x.shape) == ((1, 16), (4, 16), (16, 16))

    def test_width_mismatch(self, rng: np.random.Generator):
        encoder = Encoder(small_config(), rng)
        with pytest.raises(DimensionError):
            _ = encoder(tensor(np.zeros((1, 8))), tensor(np.zeros((4, 16))), tensor(np.zeros((16, 16))))
        with pytest.raises(DimensionError):
            _ = encoder(tensor(np.zeros((1, 16))), tensor(np.zeros((5, 16))), tensor(np.zeros((16, 16))))

    def test_without_spatiotemporal_token(self, rng: np.random.Generator, float64: None):
        encoder = Encoder(small_config(depth=0), rng)
        encoder.pos_z.assign(rng.normal(size=encoder.pos_z.shape))
        z, x = (tensor(rng.normal(size=(n, 16))) for n in (4, 16))
        out = encode(None, z, x, encoder)
        assert out.st is None
        np.testing.assert_array_equal(out.z.numpy(), (z + encoder.pos_z).numpy())
        assert out.x.shape == (16, 16)

    def test_without_token_matches_naive_oracle(self, rng: np.random.Generator, float64: None):
        config = small_config(depth=1)
        encoder = Encoder(config, rng)
        z, x = (tensor(rng.normal(size=(n, 16))) for n in (4, 16))
        out = encoder(None, z, x)
        tokens = np.concatenate([z.numpy() + encoder.pos_z.numpy(), x.numpy() + encoder.pos_x.numpy()])
        for block in encoder.blocks:
            tokens = naive_block(tokens, block, config.heads, config.norm_eps)
        np.testing.assert_allclose(out.z.numpy(), tokens[:4], atol=1e-5)
        np.testing.assert_allclose(out.x.numpy(), tokens[4:], atol=1e-5)

    def test_two_row_token_rejected(self, rng: np.random.Generator):
        encoder = Encoder(small_config(), rng)
        with pytest.raises(DimensionError):
            _ = encoder(tensor(np.zeros((2, 16))), tensor(np.zeros((4, 16))), tensor(np.zeros((16, 16))))

    def test_tiny_config_against_naive_oracle(self, rng: np.random.Generator, float64: None):
        config = small_config(depth=2)
        encoder = Encoder(config, rng)
        for pos in (encoder.pos_st, encoder.pos_z, encoder.pos_x):
            pos.assign(rng.normal(0.0, 0.1, size=pos.shape))
        init = LearnableInitToken(16, rng)
        template = tensor(rng.uniform(0, 255, size=(3, 16, 16)))
        search = tensor(rng.uniform(0, 255, size=(3, 32, 32)))
        z, x = encoder.embed(template), encoder.embed(search)
        out = encoder(init.value, z, x)

        tokens = np.concatenate([
            init.value.numpy() + encoder.pos_st.numpy(),
            z.numpy() + encoder.pos_z.numpy(),
            x.numpy() + encoder.pos_x.numpy(),
        ])
        for block in encoder.blocks:
            tokens = naive_block(tokens, block, config.heads, config.norm_eps)
        assert out.st is not None
        np.testing.assert_allclose(out.st.numpy(), tokens[:1], atol=1e-5)
        np.testing.assert_allclose(out.z.numpy(), tokens[1:5], atol=1e-5)
        np.testing.assert_allclose(out.x.numpy(), tokens[5:], atol=1e-5)
