"""
Overlap metrics for tracking results.

Per sequence: AO (mean IoU), SR at 0.5 and 0.75 (fraction of frames with IoU
strictly above the threshold), success AUC (mean success rate over IoU
thresholds 0, 0.05, …, 1) and precision at a 20 px centre error. The first
frame is the initialization frame and is never scored. Aggregates average the
per-sequence values.
"""
from collections.abc import Sequence
from dataclasses import dataclass, field
import math

import numpy as np

from tokentrack.errors import SequenceFormatError
from tokentrack.pipeline import BBox

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_PIXELS = 20.0


def iou(a: BBox, b: BBox) -> float:
    ax, ay, aw, ah = a.to_xywh()
    bx, by, bw, bh = b.to_xywh()
    inter_w = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    inter_h = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = inter_w * inter_h
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def center_error(a: BBox, b: BBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


@dataclass(frozen=True)
class SequenceReport:
    name: str
    frames: int
    ao: float
    sr50: float
    sr75: float
    auc: float
    precision: float


def summarize(name: str, ious: Sequence[float], errors: Sequence[float] | None = None) -> SequenceReport:
    """Metrics from already-scored frames."""
    if not ious:
        raise SequenceFormatError(f"{name}: no frames to evaluate")
    values = np.asarray(ious, dtype=np.float64)
    success = [(values > thr).mean() for thr in SUCCESS_THRESHOLDS]
    precision = float((np.asarray(errors) <= PRECISION_PIXELS).mean()) if errors is not None else float("nan")
    return SequenceReport(
        name=name,
        frames=len(values),
        ao=float(values.mean()),
        sr50=float((values > 0.5).mean()),
        sr75=float((values > 0.75).mean()),
        auc=float(np.mean(success)),
        precision=precision,
    )


def evaluate_sequence(name: str, results: Sequence[BBox], groundtruth: Sequence[BBox]) -> SequenceReport:
    if len(results) != len(groundtruth):
        raise SequenceFormatError(f"{name}: {len(results)} result boxes for {len(groundtruth)} groundtruth boxes")
    pairs = list(zip(results, groundtruth))[1:]
    return summarize(name, [iou(r, g) for r, g in pairs], [center_error(r, g) for r, g in pairs])


@dataclass(frozen=True)
class EvalReport:
    sequences: list[SequenceReport] = field(default_factory=list[SequenceReport])

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(s, attr) for s in self.sequences])) if self.sequences else 0.0

    @property
    def ao(self) -> float:
        return self._mean("ao")

    @property
    def sr50(self) -> float:
        return self._mean("sr50")

    @property
    def sr75(self) -> float:
        return self._mean("sr75")

    @property
    def auc(self) -> float:
        return self._mean("auc")

    @property
    def precision(self) -> float:
        return self._mean("precision")

    def key_values(self) -> list[str]:
        return [
            f"AO={self.ao:.6f}",
            f"SR_0.5={self.sr50:.6f}",
            f"SR_0.75={self.sr75:.6f}",
            f"AUC={self.auc:.6f}",
            f"PRECISION_20={self.precision:.6f}",
            f"SEQUENCES={len(self.sequences)}",
        ]

    def format_table(self) -> str:
        header = f"{'sequence':<24} {'frames':>6} {'AO':>8} {'SR0.5':>8} {'SR0.75':>8} {'AUC':>8} {'P@20':>8}"
        lines = [header, "-" * len(header)]
        for s in self.sequences:
            lines.append(f"{s.name:<24} {s.frames:>6} {s.ao:>8.4f} {s.sr50:>8.4f} {s.sr75:>8.4f} "
                         f"{s.auc:>8.4f} {s.precision:>8.4f}")
        lines.append("-" * len(header))
        lines.append(f"{'mean':<24} {'':>6} {self.ao:>8.4f} {self.sr50:>8.4f} {self.sr75:>8.4f} "
                     f"{self.auc:>8.4f} {self.precision:>8.4f}")
        return "\n".join(lines)


def evaluate(results: dict[str, Sequence[BBox]], groundtruth: dict[str, Sequence[BBox]]) -> EvalReport:
    """Score every sequence present in ``results`` against its groundtruth."""
    missing = sorted(set(results) - set(groundtruth))
    if missing:
        raise SequenceFormatError(f"no groundtruth for {missing}")
    return EvalReport([evaluate_sequence(name, results[name], groundtruth[name]) for name in results])
