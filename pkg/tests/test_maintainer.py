import numpy as np
import pytest

from tokentrack.errors import ConfigurationError, ContractError
from tokentrack.maintainer import EVICTION_LOG_SIZE, TokenMaintainer, TokenRecord, UpdatePolicy, quality
from tokentrack.tensor import Parameter, backward, tensor
from tokentrack.verification import maintainer_matches_oracle, naive_retained


def record(q: float, frame: int, value: float = 0.0) -> TokenRecord:
    return TokenRecord(tensor(np.full((1, 4), value)), q, frame)


def fill(maintainer: TokenMaintainer, qualities: list[float]) -> TokenMaintainer:
    for frame, q in enumerate(qualities, start=1):
        _ = maintainer.insert(record(q, frame, value=float(frame)))
    return maintainer


class TestQuality:
    def test_one_hot_map(self):
        scores = np.zeros((16, 16))
        scores[3, 7] = 0.8
        assert quality(scores) == 1.0

    @pytest.mark.parametrize("constant", [0.01, 0.5, 1.0])
    def test_uniform_map(self, constant: float):
        assert quality(np.full((16, 16), constant)) == pytest.approx(1 / 256, abs=1e-12)

    def test_single_peak(self):
        scores = np.full((16, 16), 0.1)
        scores[0, 0] = 0.9
        assert quality(scores) == pytest.approx(0.9 / 26.4, abs=1e-9)

    def test_bounds(self, rng: np.random.Generator):
        scores = rng.uniform(0.01, 1.0, size=(8, 8))
        assert 1 / 64 <= quality(scores) <= 1.0

    def test_non_positive_sum(self):
        with pytest.raises(ContractError):
            _ = quality(np.zeros((4, 4)))


class TestInsert:
    def test_quality_policy_drops_lowest(self):
        maintainer = fill(TokenMaintainer(2, UpdatePolicy.QUALITY), [0.5, 0.3, 0.9])
        assert sorted(maintainer.qualities) == [0.5, 0.9]
        assert maintainer.frames == [1, 3]

    def test_fifo_drops_oldest(self):
        maintainer = fill(TokenMaintainer(2, UpdatePolicy.FIFO), [0.5, 0.3, 0.9])
        assert sorted(maintainer.qualities) == [0.3, 0.9]

    def test_new_low_quality_entry_survives(self):
        maintainer = fill(TokenMaintainer(2, UpdatePolicy.QUALITY), [0.5, 0.3, 0.1])
        assert sorted(maintainer.qualities) == [0.1, 0.5]

    def test_ties_drop_oldest(self):
        maintainer = fill(TokenMaintainer(2, "quality"), [0.4, 0.4, 0.9])  # pyright: ignore[reportArgumentType]
        assert maintainer.frames == [2, 3]

    def test_below_capacity_keeps_everything(self):
        maintainer = fill(TokenMaintainer(6), [0.2, 0.1, 0.3])
        assert len(maintainer) == 3
        assert not maintainer.evictions

    def test_non_increasing_frame_rejected(self):
        maintainer = fill(TokenMaintainer(3), [0.5, 0.6])
        with pytest.raises(ContractError):
            _ = maintainer.insert(record(0.9, 2))

    def test_zero_capacity_rejected(self):
        with pytest.raises(ConfigurationError):
            _ = TokenMaintainer(0)

    def test_eviction_log(self):
        maintainer = fill(TokenMaintainer(2), [0.5, 0.3, 0.9, 0.2])
        logged = [(e.step_frame, e.evicted_frame, e.evicted_quality) for e in maintainer.evictions]
        assert logged == [(3, 2, 0.3), (4, 1, 0.5)]

    def test_eviction_log_keeps_only_recent_entries(self):
        maintainer = fill(TokenMaintainer(1), [0.5] * (EVICTION_LOG_SIZE + 11))
        assert len(maintainer.evictions) == EVICTION_LOG_SIZE
        assert maintainer.evictions[0].step_frame == 12
        assert maintainer.evictions[-1].step_frame == EVICTION_LOG_SIZE + 11

    @pytest.mark.parametrize("policy", [UpdatePolicy.QUALITY, UpdatePolicy.FIFO])
    @pytest.mark.parametrize("capacity", [1, 2, 6])
    def test_random_streams_match_rescan(self, policy: UpdatePolicy, capacity: int):
        rng = np.random.default_rng(capacity)
        for n in range(20):
            qualities = [float(q) for q in rng.uniform(0.0, 1.0, size=40)]
            if n % 2:
                qualities = [round(q, 1) + 0.01 for q in qualities]
            assert maintainer_matches_oracle(qualities, capacity, policy)

    def test_rescan_oracle_capacity_one(self):
        assert naive_retained([0.9, 0.1, 0.5], 1, UpdatePolicy.QUALITY) == [[1], [2], [3]]


class TestSnapshot:
    def test_empty(self):
        assert TokenMaintainer(3).snapshot() is None

    def test_single(self):
        maintainer = fill(TokenMaintainer(3), [0.7])
        snapshot = maintainer.snapshot()
        assert snapshot is not None
        np.testing.assert_array_equal(snapshot.numpy(), np.full((1, 4), 1.0))

    def test_oldest_first(self):
        maintainer = fill(TokenMaintainer(3), [0.9, 0.1, 0.8, 0.7])
        snapshot = maintainer.snapshot()
        assert snapshot is not None
        np.testing.assert_array_equal(snapshot.numpy()[:, 0], [1.0, 3.0, 4.0])

    def test_reset(self):
        maintainer = fill(TokenMaintainer(2), [0.5, 0.3, 0.9])
        _ = maintainer.reset()
        assert len(maintainer) == 0
        assert not maintainer.evictions
        assert maintainer.snapshot() is None


class TestGradientFlow:
    def test_stored_tokens_keep_their_graph(self):
        p = Parameter(np.ones((1, 4)))
        maintainer = TokenMaintainer(2)
        _ = maintainer.insert(TokenRecord(p * 2.0, 0.5, 1))
        snapshot = maintainer.snapshot()
        assert snapshot is not None
        backward(snapshot.sum())
        np.testing.assert_array_equal(p.grad, np.full((1, 4), 2.0))

    def test_detached_tokens(self):
        p = Parameter(np.ones((1, 4)))
        maintainer = TokenMaintainer(2, detach_tokens=True)
        _ = maintainer.insert(TokenRecord(p * 2.0, 0.5, 1))
        snapshot = maintainer.snapshot()
        assert snapshot is not None
        assert not snapshot.requires_grad
