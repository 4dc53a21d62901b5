"""
Fixed-capacity store of enhanced spatiotemporal tokens.

Each record keeps its token, the quality of the frame that produced it and the
frame index. Once full, an insert always keeps the new record and drops one of
the previously stored ones: the lowest-quality one (oldest among ties) under
the quality policy, the oldest one under FIFO.
"""
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from tokentrack.errors import ConfigurationError, ContractError
from tokentrack.tensor import Array, Tensor, concat


# Most recent evictions kept for inspection; older ones fall off.
EVICTION_LOG_SIZE = 256


class UpdatePolicy(str, Enum):
    QUALITY = "quality"
    FIFO = "fifo"


def quality(score_map: Array) -> float:
    """max / sum of a positive score map; 1/(H·W) ≤ Q ≤ 1."""
    scores = np.asarray(score_map, dtype=np.float64)
    total = float(scores.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise ContractError(f"score map sum {total} is not positive; was the sigmoid bypassed?")
    return float(scores.max()) / total


@dataclass
class TokenRecord:
    token: Tensor
    quality: float
    frame: int


@dataclass
class Eviction:
    step_frame: int
    evicted_frame: int
    evicted_quality: float


@dataclass
class TokenMaintainer:
    capacity: int = 6
    policy: UpdatePolicy = UpdatePolicy.QUALITY
    detach_tokens: bool = False
    entries: list[TokenRecord] = field(default_factory=list[TokenRecord])
    evictions: deque[Eviction] = field(default_factory=lambda: deque(maxlen=EVICTION_LOG_SIZE))

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigurationError(f"maintainer capacity must be at least 1, got {self.capacity}")
        self.policy = UpdatePolicy(self.policy)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def frames(self) -> list[int]:
        return [e.frame for e in self.entries]

    @property
    def qualities(self) -> list[float]:
        return [e.quality for e in self.entries]

    def _select_victim(self) -> int:
        """Index among the previously stored entries to drop."""
        if self.policy is UpdatePolicy.FIFO:
            return 0
        # min() keeps the first of equal keys, and entries are oldest first.
        return min(range(len(self.entries)), key=lambda i: self.entries[i].quality)

    def insert(self, record: TokenRecord) -> "TokenMaintainer":
        if self.entries and record.frame <= self.entries[-1].frame:
            raise ContractError(f"frame {record.frame} is not after stored frame {self.entries[-1].frame}")
        if self.detach_tokens:
            record = TokenRecord(record.token.detach(), record.quality, record.frame)
        if len(self.entries) >= self.capacity:
            victim = self.entries.pop(self._select_victim())
            self.evictions.append(Eviction(record.frame, victim.frame, victim.quality))
        self.entries.append(record)
        return self

    def snapshot(self) -> Tensor | None:
        """Stored tokens oldest first as [M, D]; None when empty."""
        if not self.entries:
            return None
        ordered = sorted(self.entries, key=lambda e: e.frame)
        return concat([e.token for e in ordered], axis=0)

    def reset(self) -> "TokenMaintainer":
        self.entries.clear()
        self.evictions.clear()
        return self
