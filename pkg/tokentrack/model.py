"""
The tracking network: encoder, learnable initial token, multi-frame fusion,
mask-based enhancement and the prediction head, wired per frame.
"""
import copy
from dataclasses import dataclass

import numpy as np

from tokentrack.config import ModelConfig
from tokentrack.encoder import Encoder, EncoderConfig, FrameTokens, LearnableInitToken, standardize
from tokentrack.errors import ConfigurationError, DimensionError
from tokentrack.fusion import MultiFrameFusion
from tokentrack.head import HeadOutput, PredictionHead, head_forward
from tokentrack.layers import Module
from tokentrack.tensor import Array, Parameter, Tensor, get_default_dtype, sigmoid


def mask_enhance(x: Tensor, st: Tensor) -> Tensor:
    """x'_i = x_i + sigmoid(st · x_i / √D) · x_i."""
    if x.ndim != 2 or st.shape != (1, x.shape[1]):
        raise DimensionError(f"mask_enhance: search tokens {x.shape} and token {st.shape} widths differ")
    scores = (x @ st.T) * (1.0 / np.sqrt(x.shape[1]))
    return x + sigmoid(scores) * x


@dataclass
class FrameOutput:
    tokens: FrameTokens
    fused: Tensor
    enhanced: Tensor
    head: HeadOutput


class TokenTrackModel(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, bn_momentum: float = 0.1):
        super().__init__()
        self.encoder_config = EncoderConfig.from_config(config)
        dim = self.encoder_config.dim
        self.use_st_token = config["use_st_token"]
        self.use_fusion = config["use_fusion"]
        self.use_mask_enhancement = config["use_mask_enhancement"]
        if not self.use_st_token and (self.use_fusion or self.use_mask_enhancement):
            raise ConfigurationError("use_fusion and use_mask_enhancement need use_st_token")
        self.encoder = Encoder(self.encoder_config, rng)
        self.init_token = LearnableInitToken(dim, rng)
        self.fusion = MultiFrameFusion(dim, self.encoder_config.heads, rng, config["norm_eps"],
                                       residual=config["fusion_residual"],
                                       positional=config["fusion_positional"])
        kernel_sizes = (1, 3, 5) if config["multiscale_head"] else (3,)
        self.head = PredictionHead(dim, rng, num_blocks=config["head_blocks"],
                                   kernel_sizes=kernel_sizes, momentum=bn_momentum)

    @property
    def search_grid(self) -> tuple[int, int]:
        return self.encoder_config.search_grid

    def to_tensor(self, pixels: Array) -> Tensor:
        """[3, S, S] intensities → standardized Tensor in the working dtype."""
        dtype = get_default_dtype()
        return Tensor(standardize(pixels.astype(dtype), self.encoder_config).astype(dtype))

    def embed_template(self, pixels: Array) -> Tensor:
        """Template patch embeddings; the tracker caches these for the whole sequence."""
        return self.encoder.embed(self.to_tensor(pixels))

    def encoder_parameters(self) -> list[Parameter]:
        return self.encoder.parameters(trainable_only=True)

    def rest_parameters(self) -> list[Parameter]:
        own = {id(p) for p in self.encoder_parameters()}
        return [p for p in self.parameters(trainable_only=True) if id(p) not in own]

    def num_parameters(self) -> int:
        """Parameters the configured forward pass reads; disabled components are not counted."""
        count = self.encoder.num_parameters() + self.head.num_parameters()
        if self.use_st_token:
            count += self.init_token.num_parameters()
        else:
            count -= self.encoder.pos_st.size
        if self.use_fusion:
            count += self.fusion.num_parameters()
        return count

    def forward(self, st_in: Tensor, z: Tensor, search_pixels: Array,
                history: Tensor | None = None) -> FrameOutput:
        return forward_frame(self, st_in, z, search_pixels, history)

    def reparameterize(self) -> "TokenTrackModel":
        """Shallow copy sharing every weight except the head, which is merged."""
        merged = copy.copy(self)
        merged.head = self.head.reparameterize()
        return merged


def forward_frame(model: TokenTrackModel, st_in: Tensor, z: Tensor, search_pixels: Array,
                  history: Tensor | None = None) -> FrameOutput:
    """Encode, fuse with history, enhance the search tokens and run the head on one frame."""
    x = model.encoder.embed(model.to_tensor(search_pixels))
    if model.use_st_token:
        tokens = model.encoder(st_in, z, x)
        assert tokens.st is not None
        fused = model.fusion(tokens.st, history) if model.use_fusion else tokens.st
    else:
        # Baseline: the encoder never sees the token, which is handed on unchanged.
        tokens = model.encoder(None, z, x)
        fused = st_in
    enhanced = mask_enhance(tokens.x, fused) if model.use_mask_enhancement else tokens.x

    rows, cols = model.search_grid
    dim = enhanced.shape[1]
    features = enhanced.transpose(1, 0).reshape(dim, rows, cols)
    return FrameOutput(tokens=tokens, fused=fused, enhanced=enhanced, head=head_forward(features, model.head))
