"""
Tracking losses: center focal loss on the score map, GIoU and L1 on the box
read at the groundtruth cell, combined as
λ_cls·L_cls + λ_giou·L_giou + λ_l1·L_1 and averaged over the frames of a clip.
"""
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from tokentrack.config import TrainingConfig
from tokentrack.errors import ConfigurationError, InvalidBoxError
from tokentrack.head import HeadOutput
from tokentrack.tensor import Array, Tensor, absolute, concat, log, maximum, minimum, relu

LOG_FLOOR = 1e-12


def _clamped_log(x: Tensor) -> Tensor:
    return log(maximum(x, Tensor(np.asarray(LOG_FLOOR, dtype=x.dtype))))


def focal_loss(score: Tensor, target: Array, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """
    Center focal loss, normalized by the number of positive cells:
    −(1−p)^α log p where target == 1, −(1−t)^β p^α log(1−p) elsewhere.
    """
    target = np.asarray(target, dtype=score.dtype)
    positive = (target == 1.0).astype(score.dtype)
    num_pos = max(float(positive.sum()), 1.0)

    pos_term = ((1.0 - score) ** alpha) * _clamped_log(score) * Tensor(positive)
    neg_weight = Tensor(((1.0 - target) ** beta) * (1.0 - positive))
    neg_term = (score ** alpha) * _clamped_log(1.0 - score) * neg_weight
    return -(pos_term + neg_term).sum() * (1.0 / num_pos)


def _corners(box: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    cx, cy, w, h = box[0], box[1], box[2], box[3]
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou_loss(pred: Tensor, gt: Tensor | Array) -> Tensor:
    """1 − GIoU for two (cx, cy, w, h) boxes."""
    gt_t = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=pred.dtype))
    for label, box in (("predicted", pred), ("groundtruth", gt_t)):
        if box.shape != (4,) or box.data[2] <= 0 or box.data[3] <= 0:
            raise InvalidBoxError(f"{label} box {box.data} must be (cx, cy, w, h) with positive extent")

    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1, gx2, gy2 = _corners(gt_t)
    inter_w = relu(minimum(px2, gx2) - maximum(px1, gx1))
    inter_h = relu(minimum(py2, gy2) - maximum(py1, gy1))
    inter = inter_w * inter_h
    union = pred[2] * pred[3] + gt_t[2] * gt_t[3] - inter
    enclose = (maximum(px2, gx2) - minimum(px1, gx1)) * (maximum(py2, gy2) - minimum(py1, gy1))
    giou = inter / union - (enclose - union) / enclose
    return 1.0 - giou


def l1_loss(pred: Tensor, gt: Tensor | Array) -> Tensor:
    gt_t = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=pred.dtype))
    return absolute(pred - gt_t).mean()


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_giou: float = 2.0
    lambda_l1: float = 5.0

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_giou, self.lambda_l1) < 0:
            raise ConfigurationError(f"loss weights must be non-negative, got {self}")

    @classmethod
    def from_config(cls, training: TrainingConfig) -> "LossWeights":
        weights = cls(training["lambda_cls"], training["lambda_giou"], training["lambda_l1"])
        if weights.lambda_cls == weights.lambda_giou == weights.lambda_l1 == 0:
            raise ConfigurationError("at least one loss weight must be positive to train")
        return weights


@dataclass
class LossParts:
    cls: Tensor
    giou: Tensor
    l1: Tensor


def total_loss(parts: Sequence[LossParts], weights: LossWeights) -> Tensor:
    """Weighted sum per frame, averaged over frames."""
    total: Tensor | None = None
    for p in parts:
        frame = p.cls * weights.lambda_cls + p.giou * weights.lambda_giou + p.l1 * weights.lambda_l1
        total = frame if total is None else total + frame
    if total is None:
        raise ConfigurationError("total_loss needs at least one frame")
    return total * (1.0 / len(parts))


def gaussian_target(grid: tuple[int, int], center: tuple[float, float], sigma: float = 1.0) -> Array:
    """Gaussian bump at the cell containing the normalized (x, y) centre; exactly 1 at that cell only."""
    rows, cols = grid
    j = min(max(int(center[0] * cols), 0), cols - 1)
    i = min(max(int(center[1] * rows), 0), rows - 1)
    r, c = np.mgrid[0:rows, 0:cols]
    target = np.exp(-((r - i) ** 2 + (c - j) ** 2) / (2.0 * sigma ** 2))
    return target


def box_at_cell(out: HeadOutput, cell: tuple[int, int]) -> Tensor:
    """Normalized (cx, cy, w, h) predicted at grid cell (i, j)."""
    i, j = cell
    rows, cols = out.grid
    dtype = out.score.dtype
    center = (out.offset[:, i, j] + Tensor(np.asarray([j, i], dtype=dtype))) * Tensor(
        np.asarray([1.0 / cols, 1.0 / rows], dtype=dtype))
    return concat([center, out.size[:, i, j]], axis=0)


def frame_loss(out: HeadOutput, gt_norm: Array, sigma: float = 1.0,
               alpha: float = 2.0, beta: float = 4.0) -> LossParts:
    """Losses of one frame against a groundtruth box normalized to the search crop."""
    rows, cols = out.grid
    target = gaussian_target((rows, cols), (float(gt_norm[0]), float(gt_norm[1])), sigma)
    i, j = np.unravel_index(int(np.argmax(target)), target.shape)
    pred = box_at_cell(out, (int(i), int(j)))
    gt = np.asarray(gt_norm, dtype=out.score.dtype)
    return LossParts(
        cls=focal_loss(out.score, target, alpha, beta),
        giou=giou_loss(pred, gt),
        l1=l1_loss(pred, gt),
    )
