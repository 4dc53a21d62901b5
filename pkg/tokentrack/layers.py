from typing import Any, ClassVar, Iterator, overload, Literal

import numpy as np

from tokentrack.errors import ConfigurationError, DimensionError, WeightsFormatError, WeightsShapeError
from tokentrack.tensor import Array, Parameter, Tensor, gelu, layer_norm, softmax


class Module:
    """
    Container of parameters and sub-modules.

    Parameters are discovered from instance attributes (``Parameter``,
    ``Module`` or lists of modules) in assignment order, which fixes the
    names used by ``state_dict`` and the weights file.
    """
    # Prepended once to the full name of every parameter below this module.
    export_prefix: ClassVar[str] = ""

    training: bool

    def __init__(self):
        self.training = True

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):  # pyright: ignore[reportUnknownArgumentType, reportUnknownVariableType]
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
        for name, child in self.children():
            for full_name, param in child.named_parameters(f"{prefix}{name}."):
                if child.export_prefix and not full_name.startswith(child.export_prefix):
                    full_name = child.export_prefix + full_name
                yield full_name, param

    def parameters(self, trainable_only: bool = False) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype: type[np.floating[Any]]) -> "Module":
        for p in self.parameters():
            p.astype(dtype)
        return self

    def state_dict(self) -> dict[str, Array]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, Array], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise WeightsFormatError(
                    f"weights do not match model: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, values in state.items():
            if name not in own:
                continue
            if own[name].shape != values.shape:
                raise WeightsShapeError(f"{name}: stored shape {values.shape}, model expects {own[name].shape}")
            own[name].assign(values)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters(trainable_only=True))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> Array:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    """y = x @ weight + bias, weight stored as [in, out]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, in_features, out_features, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Query/key/value projections, per-head scaled dot-product attention, output projection."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or dim % heads != 0:
            raise ConfigurationError(f"attention width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        return multi_head_attention(q, k, v, self)


@overload
def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, weights: MultiHeadAttention,
                         return_weights: Literal[False] = False) -> Tensor: ...
@overload
def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, weights: MultiHeadAttention,
                         return_weights: Literal[True]) -> tuple[Tensor, Tensor]: ...
def multi_head_attention(
    q: Tensor, k: Tensor, v: Tensor, weights: MultiHeadAttention, return_weights: bool = False,
) -> Tensor | tuple[Tensor, Tensor]:
    """
    softmax(Q Kᵀ / sqrt(D/h)) V per head on the projected inputs, heads
    concatenated and output-projected. With ``return_weights`` the
    [h, L_q, L_k] attention weights are returned as well.
    """
    dim = q.shape[-1]
    heads = weights.heads
    if dim % heads != 0:
        raise ConfigurationError(f"attention width {dim} is not divisible by {heads} heads")
    if k.shape[-1] != dim or v.shape != k.shape:
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} widths disagree")
    head_dim = dim // heads
    len_q, len_k = q.shape[0], k.shape[0]

    queries = weights.q_proj(q).reshape(len_q, heads, head_dim).transpose(1, 0, 2)
    keys = weights.k_proj(k).reshape(len_k, heads, head_dim).transpose(1, 2, 0)
    values = weights.v_proj(v).reshape(len_k, heads, head_dim).transpose(1, 0, 2)

    attn = softmax((queries @ keys) * (1.0 / np.sqrt(head_dim)), axis=-1)
    context = (attn @ values).transpose(1, 0, 2).reshape(len_q, dim)
    out = weights.out_proj(context)
    if return_weights:
        return out, attn
    return out


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))
