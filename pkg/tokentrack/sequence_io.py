"""
On-disk sequences: PPM frames named 000001.ppm…, a groundtruth.txt with one
"x,y,w,h" line per frame, an optional events.yaml occlusion sidecar, and
tracker result files with "frame_index,x,y,w,h,Q" lines.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, cast

import numpy as np
import numpy.typing as npt
import yaml
from PIL import Image

from tokentrack.errors import SequenceFormatError
from tokentrack.pipeline import BBox, TrackResult

GROUNDTRUTH_FILE = "groundtruth.txt"
EVENTS_FILE = "events.yaml"
FRAME_SUFFIX = ".ppm"

Frame = npt.NDArray[np.uint8]


def frame_name(index: int) -> str:
    return f"{index:06d}{FRAME_SUFFIX}"


def write_frame(path: Path, frame: Frame) -> None:
    """Binary (P6) 8-bit RGB."""
    Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8)).save(path, format="PPM")


def read_frame(path: Path) -> Frame:
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"), dtype=np.uint8)


def list_frames(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == FRAME_SUFFIX)


def _format_number(value: float) -> str:
    return repr(float(value))


def write_groundtruth(path: Path, rows: list[tuple[float, float, float, float]]) -> None:
    """One "x,y,w,h" line per frame, shortest round-trip float text."""
    lines = [",".join(_format_number(v) for v in row) for row in rows]
    _ = path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_groundtruth(path: Path) -> list[BBox]:
    boxes: list[BBox] = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            x, y, w, h = (float(v) for v in line.split(","))
        except ValueError as e:
            raise SequenceFormatError(f"{path}:{number}: expected 'x,y,w,h', got {line!r}") from e
        boxes.append(BBox.from_xywh(x, y, w, h))
    return boxes


def write_events(path: Path, name: str, occlusions: dict[int, float]) -> None:
    payload = {
        "sequence": name,
        "occlusions": [{"frame": frame, "coverage": round(cov, 6)} for frame, cov in sorted(occlusions.items())],
    }
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(payload, f, sort_keys=False)


def read_events(path: Path) -> dict[int, float]:
    """Frame → covered fraction of the target; empty when there is no sidecar."""
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as f:
        payload = cast(dict[str, Any] | None, yaml.safe_load(f)) or {}
    entries = cast(list[dict[str, Any]], payload.get("occlusions") or [])
    return {int(e["frame"]): float(e["coverage"]) for e in entries}


@dataclass
class SequenceData:
    name: str
    frames: list[Frame]
    boxes: list[BBox]
    occlusions: dict[int, float] = field(default_factory=dict[int, float])

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def fully_occluded(self) -> list[int]:
        return sorted(f for f, coverage in self.occlusions.items() if coverage >= 1.0)


def load_sequence(directory: Path) -> SequenceData:
    if not directory.is_dir():
        raise SequenceFormatError(f"sequence directory {directory} does not exist")
    frame_paths = list_frames(directory)
    boxes = read_groundtruth(directory / GROUNDTRUTH_FILE)
    if len(frame_paths) != len(boxes):
        raise SequenceFormatError(
            f"{directory}: {len(frame_paths)} frames but {len(boxes)} groundtruth lines")
    if not frame_paths:
        raise SequenceFormatError(f"{directory}: no frames")
    return SequenceData(
        name=directory.name,
        frames=[read_frame(p) for p in frame_paths],
        boxes=boxes,
        occlusions=read_events(directory / EVENTS_FILE),
    )


def save_sequence(directory: Path, sequence: SequenceData) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(sequence.frames, start=1):
        write_frame(directory / frame_name(index), frame)
    write_groundtruth(directory / GROUNDTRUTH_FILE, [b.to_xywh() for b in sequence.boxes])
    write_events(directory / EVENTS_FILE, sequence.name, sequence.occlusions)


def write_results(path: Path, results: list[TrackResult]) -> None:
    lines: list[str] = []
    for r in results:
        x, y, w, h = r.box.to_xywh()
        lines.append(f"{r.frame},{x:.6f},{y:.6f},{w:.6f},{h:.6f},{r.quality:.6f}")
    _ = path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results(path: Path) -> list[TrackResult]:
    results: list[TrackResult] = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise SequenceFormatError(f"{path}:{number}: expected 'frame_index,x,y,w,h,Q', got {line!r}")
        try:
            frame = int(parts[0])
            x, y, w, h, q = (float(v) for v in parts[1:])
        except ValueError as e:
            raise SequenceFormatError(f"{path}:{number}: {e}") from e
        results.append(TrackResult(frame, BBox.from_xywh(x, y, w, h), q))
    return results
