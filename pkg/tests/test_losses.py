import math

import numpy as np
import pytest

from tokentrack.config import default_config
from tokentrack.errors import ConfigurationError, InvalidBoxError
from tokentrack.head import HeadOutput
from tokentrack.losses import (
    LossParts, LossWeights, box_at_cell, focal_loss, frame_loss, gaussian_target, giou_loss, l1_loss, total_loss,
)
from tokentrack.tensor import Parameter, Tensor, backward, tensor


class TestFocalLoss:
    def test_perfect_prediction(self, float64: None):
        target = np.zeros((4, 4))
        target[1, 2] = 1.0
        score = np.clip(target, 1e-15, 1.0)
        score[1, 2] = 1.0
        assert focal_loss(tensor(score), target).item() == pytest.approx(0.0, abs=1e-12)

    def test_reduces_to_cross_entropy(self, rng: np.random.Generator, float64: None):
        p = rng.uniform(0.05, 0.95, size=(5, 5))
        t = np.zeros((5, 5))
        t[3, 1] = 1.0
        bce = float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).sum())
        assert focal_loss(tensor(p), t, alpha=0.0, beta=0.0).item() == pytest.approx(bce, abs=1e-9)

    def test_single_positive_cell(self, float64: None):
        loss = focal_loss(tensor([[0.5]]), np.array([[1.0]]), alpha=2.0, beta=4.0).item()
        assert loss == pytest.approx(0.25 * math.log(2.0), abs=1e-9)
        assert loss == pytest.approx(0.173287, abs=1e-6)

    def test_normalized_by_positive_count(self, float64: None):
        one = focal_loss(tensor([[0.5, 0.5]]), np.array([[1.0, 0.0]]), beta=0.0).item()
        two = focal_loss(tensor([[0.5, 0.5]]), np.array([[1.0, 1.0]]), beta=0.0).item()
        assert two == pytest.approx(0.25 * math.log(2.0), abs=1e-9)
        assert one == pytest.approx(2 * 0.25 * math.log(2.0), abs=1e-9)


class TestBoxLosses:
    def test_identical_boxes(self, float64: None):
        box = np.array([0.5, 0.5, 0.2, 0.3])
        assert giou_loss(tensor(box), box).item() == pytest.approx(0.0, abs=1e-12)
        assert l1_loss(tensor(box), box).item() == 0.0

    def test_corner_contact(self, float64: None):
        loss = giou_loss(tensor([0.5, 0.5, 1.0, 1.0]), np.array([1.5, 1.5, 1.0, 1.0])).item()
        assert loss == pytest.approx(1.5, abs=1e-12)

    def test_far_apart_approaches_two(self, float64: None):
        loss = giou_loss(tensor([0.0, 0.0, 1.0, 1.0]), np.array([1000.0, 1000.0, 1.0, 1.0])).item()
        assert 1.99 < loss < 2.0

    def test_zero_area_rejected(self):
        with pytest.raises(InvalidBoxError):
            _ = giou_loss(tensor([0.5, 0.5, 0.0, 0.2]), np.array([0.5, 0.5, 0.2, 0.2]))

    def test_l1_mean(self, float64: None):
        loss = l1_loss(tensor([0.5, 0.5, 0.2, 0.2]), np.array([0.6, 0.4, 0.2, 0.6])).item()
        assert loss == pytest.approx(0.15, abs=1e-12)

    def test_giou_gradient_flows(self, float64: None):
        pred = Parameter(np.array([0.4, 0.5, 0.3, 0.3]))
        backward(giou_loss(pred, np.array([0.5, 0.5, 0.3, 0.3])))
        assert pred.grad[0] < 0.0


class TestTotalLoss:
    def test_weighted_sum(self, float64: None):
        parts = [LossParts(Tensor(np.float64(0.1)), Tensor(np.float64(0.2)), Tensor(np.float64(0.04)))]
        assert total_loss(parts, LossWeights(1.0, 2.0, 5.0)).item() == pytest.approx(0.7, abs=1e-12)

    def test_zero_weights(self, float64: None):
        parts = [LossParts(Tensor(np.float64(0.1)), Tensor(np.float64(0.2)), Tensor(np.float64(0.04)))]
        assert total_loss(parts, LossWeights(0.0, 0.0, 0.0)).item() == 0.0

    def test_single_weight(self, float64: None):
        parts = [LossParts(Tensor(np.float64(0.1)), Tensor(np.float64(0.2)), Tensor(np.float64(0.04)))]
        assert total_loss(parts, LossWeights(0.0, 1.0, 0.0)).item() == pytest.approx(0.2, abs=1e-12)

    def test_averaged_over_frames(self, float64: None):
        parts = [
            LossParts(Tensor(np.float64(1.0)), Tensor(np.float64(0.0)), Tensor(np.float64(0.0))),
            LossParts(Tensor(np.float64(3.0)), Tensor(np.float64(0.0)), Tensor(np.float64(0.0))),
        ]
        assert total_loss(parts, LossWeights()).item() == pytest.approx(2.0, abs=1e-12)

    def test_empty_clip(self):
        with pytest.raises(ConfigurationError):
            _ = total_loss([], LossWeights())

    def test_negative_weight(self):
        with pytest.raises(ConfigurationError):
            _ = LossWeights(1.0, -2.0, 5.0)

    def test_training_needs_a_positive_weight(self):
        training = default_config()["training"]
        training.update({"lambda_cls": 0.0, "lambda_giou": 0.0, "lambda_l1": 0.0})
        with pytest.raises(ConfigurationError):
            _ = LossWeights.from_config(training)
        assert LossWeights.from_config(default_config()["training"]) == LossWeights(1.0, 2.0, 5.0)


class TestTargets:
    def test_gaussian_peak(self):
        target = gaussian_target((4, 6), (0.55, 0.3))
        assert target.shape == (4, 6)
        assert target[1, 3] == 1.0
        assert np.count_nonzero(target == 1.0) == 1
        assert target[1, 4] == pytest.approx(math.exp(-0.5))

    def test_centre_on_far_edge_is_clamped(self):
        target = gaussian_target((4, 4), (1.0, 1.0))
        assert target[3, 3] == 1.0

    def test_box_at_cell(self, float64: None):
        offset = np.zeros((2, 4, 4))
        offset[:, 1, 2] = (0.5, 0.25)
        size = np.full((2, 4, 4), 0.3)
        out = HeadOutput(tensor(np.full((4, 4), 0.5)), tensor(offset), tensor(size))
        np.testing.assert_allclose(box_at_cell(out, (1, 2)).numpy(), [2.5 / 4, 1.25 / 4, 0.3, 0.3])

    def test_frame_loss_at_exact_prediction(self, float64: None):
        gt = np.array([0.6, 0.35, 0.3, 0.2])
        rows = cols = 4
        offset = np.zeros((2, rows, cols))
        offset[:, 1, 2] = (0.6 * 4 - 2, 0.35 * 4 - 1)
        size = np.zeros((2, rows, cols))
        size[:, 1, 2] = (0.3, 0.2)
        out = HeadOutput(tensor(np.full((rows, cols), 0.1)), tensor(offset), tensor(size))
        parts = frame_loss(out, gt)
        assert parts.giou.item() == pytest.approx(0.0, abs=1e-9)
        assert parts.l1.item() == pytest.approx(0.0, abs=1e-12)
        assert parts.cls.item() > 0.0
