import math

import numpy as np
import pytest

from tokentrack.errors import ConfigurationError, DimensionError
from tokentrack.fusion import FusionInput, MultiFrameFusion, fixed_positional_encoding, fuse
from tokentrack.layers import LayerNorm, Linear, MultiHeadAttention
from tokentrack.tensor import tensor


class TestPositionalEncoding:
    def test_first_row_alternates(self):
        table = fixed_positional_encoding(4, 8)
        np.testing.assert_array_equal(table[0], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_values_bounded(self):
        table = fixed_positional_encoding(50, 16)
        assert table.shape == (50, 16)
        assert np.all(np.abs(table) <= 1.0)

    def test_second_row_first_column(self, float64: None):
        table = fixed_positional_encoding(2, 4)
        assert table[1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)
        assert table[1, 1] == pytest.approx(math.cos(1.0), abs=1e-12)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigurationError):
            _ = fixed_positional_encoding(3, 7)


class TestFusion:
    @pytest.fixture
    def fusion(self, rng: np.random.Generator) -> MultiFrameFusion:
        return MultiFrameFusion(16, 2, rng)

    def test_structure(self, fusion: MultiFrameFusion):
        modules = list(fusion.modules())
        assert sum(isinstance(m, MultiHeadAttention) for m in modules) == 2
        assert sum(isinstance(m, LayerNorm) for m in modules) == 3
        assert sum(isinstance(m, Linear) for m in modules) == 8

    def test_empty_history(self, fusion: MultiFrameFusion, rng: np.random.Generator):
        out = fusion(tensor(rng.normal(size=(1, 16))))
        assert out.shape == (1, 16)
        assert np.all(np.isfinite(out.numpy()))

    @pytest.mark.parametrize("history", [0, 1, 3, 6])
    def test_output_shape_for_any_history(self, fusion: MultiFrameFusion, rng: np.random.Generator, history: int):
        stored = tensor(rng.normal(size=(history, 16))) if history else None
        inputs = FusionInput(tensor(rng.normal(size=(1, 16))), stored)
        assert inputs.history_length == history
        assert fuse(inputs, fusion).shape == (1, 16)

    def test_history_order_ignored_without_positions(self, rng: np.random.Generator, float64: None):
        fusion = MultiFrameFusion(16, 2, rng, positional=False)
        current = tensor(rng.normal(size=(1, 16)))
        history = rng.normal(size=(4, 16))
        a = fusion(current, tensor(history)).numpy()
        b = fusion(current, tensor(history[[2, 0, 3, 1]])).numpy()
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_history_order_matters_with_positions(self, rng: np.random.Generator, float64: None):
        fusion = MultiFrameFusion(16, 2, rng)
        current = tensor(rng.normal(size=(1, 16)))
        history = rng.normal(size=(4, 16))
        a = fusion(current, tensor(history)).numpy()
        b = fusion(current, tensor(history[[2, 0, 3, 1]])).numpy()
        assert np.max(np.abs(a - b)) > 1e-5

    def test_output_is_normalized(self, fusion: MultiFrameFusion, rng: np.random.Generator):
        out = fusion(tensor(rng.normal(size=(1, 16))), tensor(rng.normal(size=(3, 16)))).numpy()
        assert abs(float(out.mean())) < 1e-4
        assert float(out.std()) == pytest.approx(1.0, abs=1e-2)

    def test_residual_variant_differs(self, rng: np.random.Generator):
        plain = MultiFrameFusion(16, 2, np.random.default_rng(5))
        residual = MultiFrameFusion(16, 2, np.random.default_rng(5), residual=True)
        current = tensor(rng.normal(size=(1, 16)))
        history = tensor(rng.normal(size=(2, 16)))
        assert not np.allclose(plain(current, history).numpy(), residual(current, history).numpy())

    def test_shape_errors(self, fusion: MultiFrameFusion):
        with pytest.raises(DimensionError):
            _ = fusion(tensor(np.zeros((2, 16))))
        with pytest.raises(DimensionError):
            _ = fusion(tensor(np.zeros((1, 16))), tensor(np.zeros((2, 8))))
