"""Central finite-difference checks for the analytic gradients of the tensor core."""
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from tokentrack.tensor import Array, Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    max_relative_error: float
    checked_entries: int
    worst_tensor: int
    worst_index: tuple[int, ...]

    def passed(self, tolerance: float) -> bool:
        return self.max_relative_error < tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)


def default_step(dtype: np.dtype) -> float:
    return 1e-6 if dtype == np.float64 else 1e-3


def numerical_gradient(loss_fn: Callable[[], Tensor], target: Tensor, index: tuple[int, ...], step: float) -> float:
    """d loss / d target[index] by central differences; ``target`` is restored afterwards."""
    original = target.data[index].copy()
    try:
        with no_grad():
            target.data[index] = original + step
            plus = float(loss_fn().data.sum())
            target.data[index] = original - step
            minus = float(loss_fn().data.sum())
    finally:
        target.data[index] = original
    return (plus - minus) / (2.0 * step)


def analytic_gradients(loss_fn: Callable[[], Tensor], targets: Sequence[Tensor]) -> list[Array]:
    for t in targets:
        t.grad = np.zeros_like(t.data)
    backward(loss_fn())
    return [np.array(t.grad) if t.grad is not None else np.zeros_like(t.data) for t in targets]


def gradient_check(
    loss_fn: Callable[[], Tensor],
    targets: Sequence[Tensor],
    step: float | None = None,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """
    Compare analytic and numeric gradients of ``loss_fn()`` w.r.t. ``targets``.

    Every entry is checked unless ``max_entries`` is given, in which case that
    many entries are drawn at random across all targets.
    """
    analytic = analytic_gradients(loss_fn, targets)
    entries = [(i, idx) for i, t in enumerate(targets) for idx in np.ndindex(t.shape)]
    if max_entries is not None and max_entries < len(entries):
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[p] for p in sorted(picks)]

    worst = GradCheckResult(0.0, len(entries), -1, ())
    for tensor_index, idx in entries:
        target = targets[tensor_index]
        h = step if step is not None else default_step(target.data.dtype)
        numeric = numerical_gradient(loss_fn, target, idx, h)
        err = relative_error(float(analytic[tensor_index][idx]), numeric)
        if err > worst.max_relative_error:
            worst = GradCheckResult(err, len(entries), tensor_index, tuple(int(i) for i in idx))
    return worst
