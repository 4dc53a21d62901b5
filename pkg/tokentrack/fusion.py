"""
Multi-frame fusion of the current spatiotemporal token with stored history.

    tokens   = norm_in(stack + fixed positions)
    mixed    = norm_self(self_attention(tokens))
    enhanced = norm_out(cross_attention(query=mixed[-1], keys=mixed, values=mixed))

The stack is [history (oldest first); current], so the current token sits last
and carries the largest position. There are no residual paths and no
feed-forward sublayer unless ``residual`` is switched on.
"""
from dataclasses import dataclass

import numpy as np

from tokentrack.errors import ConfigurationError, DimensionError
from tokentrack.layers import LayerNorm, Module, MultiHeadAttention
from tokentrack.tensor import Array, Tensor, concat, get_default_dtype


def fixed_positional_encoding(length: int, dim: int) -> Array:
    """Sinusoidal table: pe[p, 2i] = sin(p / 10000^(2i/D)), pe[p, 2i+1] = cos(same)."""
    if dim % 2 != 0:
        raise ConfigurationError(f"sinusoidal encoding needs an even width, got {dim}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions / rates)
    table[:, 1::2] = np.cos(positions / rates)
    return table.astype(get_default_dtype())


@dataclass
class FusionInput:
    current: Tensor
    history: Tensor | None = None

    @property
    def history_length(self) -> int:
        return 0 if self.history is None else self.history.shape[0]


class MultiFrameFusion(Module):
    """One self-attention layer, one cross-attention layer, three layer norms."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 eps: float = 1e-5, residual: bool = False, positional: bool = True):
        super().__init__()
        self.norm_in = LayerNorm(dim, eps)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_self = LayerNorm(dim, eps)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_out = LayerNorm(dim, eps)
        self.residual = residual
        self.positional = positional

    def forward(self, current: Tensor, history: Tensor | None = None) -> Tensor:
        return fuse(FusionInput(current, history), self)


def fuse(inputs: FusionInput, weights: MultiFrameFusion) -> Tensor:
    """Return the enhanced current token, shape [1, D]."""
    current = inputs.current
    if current.ndim != 2 or current.shape[0] != 1:
        raise DimensionError(f"current token must be [1, D], got {current.shape}")
    dim = current.shape[1]
    if inputs.history is not None and inputs.history.shape[0] > 0:
        if inputs.history.ndim != 2 or inputs.history.shape[1] != dim:
            raise DimensionError(f"history tokens {inputs.history.shape} do not have width {dim}")
        stack = concat([inputs.history, current], axis=0)
    else:
        stack = current

    if weights.positional:
        stack = stack + Tensor(fixed_positional_encoding(stack.shape[0], dim).astype(stack.dtype))
    f_in = weights.norm_in(stack)

    attended = weights.self_attn(f_in, f_in, f_in)
    if weights.residual:
        attended = f_in + attended
    enhanced = weights.norm_self(attended)

    query = enhanced[-1:]
    fused = weights.cross_attn(query, enhanced, enhanced)
    if weights.residual:
        fused = query + fused
    return weights.norm_out(fused)
