"""AdamW with per-group learning rates and the step-count decay schedule."""
from dataclasses import dataclass, field

import numpy as np

from tokentrack.tensor import Array, Parameter


@dataclass
class AdamState:
    m: Array
    v: Array
    step: int = 0

    @classmethod
    def zeros_like(cls, value: Array) -> "AdamState":
        return cls(np.zeros_like(value), np.zeros_like(value))


def adamw_update(param: Array, grad: Array, state: AdamState, lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0) -> tuple[Array, AdamState]:
    """One decoupled-weight-decay Adam step with bias correction."""
    beta1, beta2 = betas
    step = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    updated = param * (1 - lr * weight_decay)
    updated = updated - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated.astype(param.dtype), AdamState(m, v, step)


@dataclass
class ParamGroup:
    name: str
    params: list[Parameter]
    lr: float


@dataclass
class AdamW:
    groups: list[ParamGroup]
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    states: dict[int, AdamState] = field(default_factory=dict[int, AdamState])

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.zero_grad()

    def step(self, lr_scale: float = 1.0) -> None:
        for group in self.groups:
            lr = group.lr * lr_scale
            for p in group.params:
                state = self.states.get(id(p)) or AdamState.zeros_like(p.data)
                p.data, self.states[id(p)] = adamw_update(
                    p.data, p.grad, state, lr, self.betas, self.eps, self.weight_decay)


def lr_scale(step: int, total_steps: int, decay_start: float = 0.8, floor: float = 0.1) -> float:
    """1 until ``decay_start``·total, then linear down to ``floor`` at the last step."""
    start = int(decay_start * total_steps)
    if step < start or total_steps <= start:
        return 1.0
    progress = (step - start) / max(total_steps - start, 1)
    return 1.0 - (1.0 - floor) * min(progress, 1.0)
