import numpy as np
import pytest

from tokentrack.errors import SequenceFormatError
from tokentrack.metrics import EvalReport, center_error, evaluate, evaluate_sequence, iou, summarize
from tokentrack.pipeline import BBox


def unit(x: float, y: float) -> BBox:
    return BBox.from_xywh(x, y, 1.0, 1.0)


class TestIoU:
    def test_identical(self):
        assert iou(unit(3, 4), unit(3, 4)) == 1.0

    def test_disjoint(self):
        assert iou(unit(0, 0), unit(5, 5)) == 0.0

    def test_touching(self):
        assert iou(unit(0, 0), unit(1, 0)) == 0.0

    def test_half_offset(self):
        assert iou(unit(0, 0), unit(0.5, 0)) == pytest.approx(1 / 3, abs=1e-12)

    def test_symmetric(self, rng: np.random.Generator):
        for _ in range(20):
            a = BBox.from_xywh(*rng.uniform(0, 10, 2), *rng.uniform(1, 5, 2))
            b = BBox.from_xywh(*rng.uniform(0, 10, 2), *rng.uniform(1, 5, 2))
            assert iou(a, b) == pytest.approx(iou(b, a))
            assert 0.0 <= iou(a, b) <= 1.0

    def test_center_error(self):
        assert center_error(unit(0, 0), unit(3, 4)) == 5.0


class TestEvaluate:
    @pytest.fixture
    def groundtruth(self) -> list[BBox]:
        return [BBox.from_xywh(10.0 * i, 0.0, 10.0, 10.0) for i in range(4)]

    def test_perfect(self, groundtruth: list[BBox]):
        report = evaluate({"seq": groundtruth}, {"seq": groundtruth})
        assert (report.ao, report.sr50, report.sr75) == (1.0, 1.0, 1.0)
        assert report.precision == 1.0

    def test_mixed(self, groundtruth: list[BBox]):
        results = [
            groundtruth[0],
            groundtruth[1],
            BBox.from_xywh(22.5, 0.0, 10.0, 10.0),
            BBox.from_xywh(100.0, 100.0, 10.0, 10.0),
        ]
        report = evaluate({"seq": results}, {"seq": groundtruth})
        assert report.ao == pytest.approx(1.6 / 3, abs=1e-12)
        assert report.sr50 == pytest.approx(2 / 3, abs=1e-12)
        assert report.sr75 == pytest.approx(1 / 3, abs=1e-12)
        assert report.sequences[0].frames == 3

    def test_first_frame_not_scored(self, groundtruth: list[BBox]):
        results = [BBox.from_xywh(500.0, 500.0, 1.0, 1.0)] + groundtruth[1:]
        assert evaluate_sequence("seq", results, groundtruth).ao == 1.0

    def test_all_misses(self, groundtruth: list[BBox]):
        results = [BBox.from_xywh(500.0, 500.0, 5.0, 5.0)] * 4
        report = evaluate_sequence("seq", results, groundtruth)
        assert (report.ao, report.sr50, report.auc) == (0.0, 0.0, 0.0)

    def test_length_mismatch(self, groundtruth: list[BBox]):
        with pytest.raises(SequenceFormatError):
            _ = evaluate({"seq": groundtruth[:3]}, {"seq": groundtruth})

    def test_missing_groundtruth(self, groundtruth: list[BBox]):
        with pytest.raises(SequenceFormatError):
            _ = evaluate({"other": groundtruth}, {"seq": groundtruth})

    def test_nothing_to_score(self):
        with pytest.raises(SequenceFormatError):
            _ = summarize("seq", [])

    def test_success_rates_ordered(self, rng: np.random.Generator):
        for _ in range(20):
            ious = list(rng.uniform(0.0, 1.0, size=30))
            report = summarize("seq", ious)
            assert 0.0 <= report.sr75 <= report.sr50 <= 1.0
            assert 0.0 <= report.ao <= 1.0

    def test_aggregate_averages_sequences(self):
        report = EvalReport([summarize("a", [1.0, 1.0]), summarize("b", [0.0, 0.0])])
        assert report.ao == 0.5

    def test_key_values(self, groundtruth: list[BBox]):
        lines = evaluate({"seq": groundtruth}, {"seq": groundtruth}).key_values()
        assert lines[0] == "AO=1.000000"
        assert "SR_0.5=1.000000" in lines
        assert "SEQUENCES=1" in lines
        assert all("=" in line for line in lines)

    def test_table_lists_each_sequence(self, groundtruth: list[BBox]):
        table = evaluate({"seq": groundtruth}, {"seq": groundtruth}).format_table()
        assert "seq" in table
        assert table.splitlines()[-1].startswith("mean")
