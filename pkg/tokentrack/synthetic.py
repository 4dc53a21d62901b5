"""
Synthetic video sequences with exact groundtruth.

A scene file (YAML) describes one sequence or a ``sequences:`` list of them:

    name: square-linear
    frames: 32
    width: 160
    height: 120
    background: [40, 60, 80]
    noise: 4.0                   # std of per-frame pixel noise
    object: {kind: rect, width: 20, height: 16, color: [220, 40, 40], texture: 20.0}
    motion: {kind: linear, start: [20, 30], velocity: [2.0, 1.0]}
    occluders:
      - {start_frame: 12, end_frame: 12, color: [90, 90, 90], margin: 2}
    distractors:
      - object: {kind: ellipse, width: 14, height: 14, color: [40, 200, 40]}
        motion: {kind: sinusoidal, start: [100, 60], amplitude: [20, 10], period: 16}

Motion gives the top-left corner of the object per frame. Linear motion is an
exact arithmetic progression; positions are clamped to keep the box inside
the frame.
"""
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, cast

import numpy as np
import yaml

from tokentrack.errors import ConfigurationError
from tokentrack.pipeline import BBox
from tokentrack.sequence_io import (
    EVENTS_FILE, GROUNDTRUTH_FILE, Frame, SequenceData, frame_name, write_events, write_frame,
    write_groundtruth,
)

ObjectKind = Literal["rect", "ellipse"]
MotionKind = Literal["static", "linear", "sinusoidal", "random_walk"]
Color = tuple[int, int, int]


@dataclass(frozen=True)
class ObjectSpec:
    kind: ObjectKind = "rect"
    width: float = 16.0
    height: float = 16.0
    color: Color = (220, 40, 40)
    texture: float = 0.0


@dataclass(frozen=True)
class MotionSpec:
    kind: MotionKind = "static"
    start: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 16.0
    step_std: float = 1.0


@dataclass(frozen=True)
class OccluderSpec:
    """Rectangle drawn over the target (plus ``margin``) on frames start..end inclusive."""
    start_frame: int
    end_frame: int
    color: Color = (128, 128, 128)
    margin: float = 2.0


@dataclass(frozen=True)
class DistractorSpec:
    object: ObjectSpec
    motion: MotionSpec


@dataclass(frozen=True)
class SceneSpec:
    name: str = "synthetic"
    frames: int = 32
    width: int = 160
    height: int = 120
    background: Color = (40, 60, 80)
    noise: float = 0.0
    object: ObjectSpec = ObjectSpec()
    motion: MotionSpec = MotionSpec()
    occluders: tuple[OccluderSpec, ...] = ()
    distractors: tuple[DistractorSpec, ...] = ()

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigurationError(f"scene {self.name!r}: frame count must be at least 1, got {self.frames}")
        if self.width < 2 or self.height < 2:
            raise ConfigurationError(f"scene {self.name!r}: resolution {self.width}x{self.height} is too small")
        if not (0 < self.object.width <= self.width and 0 < self.object.height <= self.height):
            raise ConfigurationError(f"scene {self.name!r}: object does not fit in the frame")


@dataclass
class RenderedSequence:
    name: str
    frames: list[Frame]
    rows: list[tuple[float, float, float, float]]
    occlusions: dict[int, float] = field(default_factory=dict[int, float])

    def to_sequence(self) -> SequenceData:
        return SequenceData(self.name, self.frames, [BBox.from_xywh(*r) for r in self.rows], dict(self.occlusions))


# --- Scene file parsing ---

def _pair(value: Any, label: str) -> tuple[float, float]:
    items = cast(Sequence[Any], value)
    if len(items) != 2:
        raise ConfigurationError(f"{label} must have two values, got {value!r}")
    return float(items[0]), float(items[1])


def _color(value: Any, label: str) -> Color:
    items = cast(Sequence[Any], value)
    if len(items) != 3 or not all(0 <= int(c) <= 255 for c in items):
        raise ConfigurationError(f"{label} must be three 0..255 values, got {value!r}")
    return int(items[0]), int(items[1]), int(items[2])


def _object(data: dict[str, Any]) -> ObjectSpec:
    kind = data.get("kind", "rect")
    if kind not in ("rect", "ellipse"):
        raise ConfigurationError(f"unknown object kind {kind!r}")
    return ObjectSpec(
        kind=kind,
        width=float(data.get("width", 16)),
        height=float(data.get("height", 16)),
        color=_color(data.get("color", (220, 40, 40)), "object color"),
        texture=float(data.get("texture", 0.0)),
    )


def _motion(data: dict[str, Any]) -> MotionSpec:
    kind = data.get("kind", "static")
    if kind not in ("static", "linear", "sinusoidal", "random_walk"):
        raise ConfigurationError(f"unknown motion kind {kind!r}")
    period = float(data.get("period", 16.0))
    if period <= 0:
        raise ConfigurationError(f"motion period must be positive, got {period}")
    return MotionSpec(
        kind=kind,
        start=_pair(data.get("start", (0, 0)), "motion start"),
        velocity=_pair(data.get("velocity", (0, 0)), "motion velocity"),
        amplitude=_pair(data.get("amplitude", (0, 0)), "motion amplitude"),
        period=period,
        step_std=float(data.get("step_std", 1.0)),
    )


def scene_from_dict(data: dict[str, Any]) -> SceneSpec:
    """Build a scene from a parsed mapping; malformed entries raise ConfigurationError."""
    try:
        return _scene_from_dict(data)
    except ConfigurationError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        name = data.get("name", "?") if isinstance(data, dict) else "?"
        detail = f"missing key {e}" if isinstance(e, KeyError) else str(e)
        raise ConfigurationError(f"invalid scene {name!r}: {detail}") from e


def _scene_from_dict(data: dict[str, Any]) -> SceneSpec:
    occluders = tuple(
        OccluderSpec(
            start_frame=int(o["start_frame"]),
            end_frame=int(o.get("end_frame", o["start_frame"])),
            color=_color(o.get("color", (128, 128, 128)), "occluder color"),
            margin=float(o.get("margin", 2.0)),
        )
        for o in cast(list[dict[str, Any]], data.get("occluders") or [])
    )
    distractors = tuple(
        DistractorSpec(_object(d.get("object") or {}), _motion(d.get("motion") or {}))
        for d in cast(list[dict[str, Any]], data.get("distractors") or [])
    )
    return SceneSpec(
        name=str(data.get("name", "synthetic")),
        frames=int(data.get("frames", 32)),
        width=int(data.get("width", 160)),
        height=int(data.get("height", 120)),
        background=_color(data.get("background", (40, 60, 80)), "background"),
        noise=float(data.get("noise", 0.0)),
        object=_object(data.get("object") or {}),
        motion=_motion(data.get("motion") or {}),
        occluders=occluders,
        distractors=distractors,
    )


def load_scene_file(path: Path) -> list[SceneSpec]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"cannot parse scene file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"scene file {path} must contain a mapping")
    data = cast(dict[str, Any], data)
    if "sequences" in data:
        if not isinstance(data["sequences"], list):
            raise ConfigurationError(f"scene file {path}: 'sequences' must be a list")
        return [scene_from_dict(s) for s in cast(list[dict[str, Any]], data["sequences"])]
    return [scene_from_dict(data)]


# --- Rendering ---

def trajectory(motion: MotionSpec, frames: int, size: tuple[float, float], bounds: tuple[int, int],
               rng: np.random.Generator) -> list[tuple[float, float]]:
    """Top-left corner per frame, clamped so the box stays inside ``bounds`` (width, height)."""
    x0, y0 = motion.start
    max_x, max_y = bounds[0] - size[0], bounds[1] - size[1]
    points: list[tuple[float, float]] = []
    x, y = x0, y0
    for t in range(frames):
        match motion.kind:
            case "static":
                x, y = x0, y0
            case "linear":
                x, y = x0 + motion.velocity[0] * t, y0 + motion.velocity[1] * t
            case "sinusoidal":
                phase = 2.0 * np.pi * t / motion.period
                x = x0 + motion.amplitude[0] * float(np.sin(phase))
                y = y0 + motion.amplitude[1] * float(np.sin(phase + np.pi / 2.0))
            case "random_walk":
                if t > 0:
                    step = rng.normal(0.0, motion.step_std, size=2)
                    x, y = x + float(step[0]), y + float(step[1])
        x = min(max(x, 0.0), max_x)
        y = min(max(y, 0.0), max_y)
        points.append((x, y))
    return points


def _object_mask(obj: ObjectSpec, x: float, y: float, height: int, width: int) -> np.ndarray:
    """Pixels whose centres fall inside the object placed with top-left (x, y)."""
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    if obj.kind == "rect":
        in_x = (cols >= x) & (cols < x + obj.width)
        in_y = (rows >= y) & (rows < y + obj.height)
        return in_y[:, None] & in_x[None, :]
    cx, cy = x + obj.width / 2.0, y + obj.height / 2.0
    dx = (cols[None, :] - cx) / (obj.width / 2.0)
    dy = (rows[:, None] - cy) / (obj.height / 2.0)
    return dx * dx + dy * dy <= 1.0


def _paint(canvas: np.ndarray, obj: ObjectSpec, x: float, y: float, texture: np.ndarray) -> np.ndarray:
    height, width = canvas.shape[:2]
    mask = _object_mask(obj, x, y, height, width)
    color = np.asarray(obj.color, dtype=np.float64)
    if obj.texture > 0:
        rows, cols = np.nonzero(mask)
        th, tw = texture.shape
        local = texture[(rows - int(np.floor(y))) % th, (cols - int(np.floor(x))) % tw]
        canvas[rows, cols] = color + obj.texture * local[:, None]
    else:
        canvas[mask] = color
    return mask


def render_sequence(spec: SceneSpec, seed: int) -> RenderedSequence:
    """Deterministic under ``seed``; groundtruth is exact by construction."""
    rng = np.random.default_rng(seed)
    size = (spec.object.width, spec.object.height)
    path = trajectory(spec.motion, spec.frames, size, (spec.width, spec.height), rng)
    texture = rng.uniform(-1.0, 1.0, size=(max(int(np.ceil(size[1])), 1), max(int(np.ceil(size[0])), 1)))
    distractor_paths = [
        trajectory(d.motion, spec.frames, (d.object.width, d.object.height), (spec.width, spec.height), rng)
        for d in spec.distractors
    ]
    distractor_textures = [
        rng.uniform(-1.0, 1.0, size=(max(int(np.ceil(d.object.height)), 1), max(int(np.ceil(d.object.width)), 1)))
        for d in spec.distractors
    ]

    frames: list[Frame] = []
    rows: list[tuple[float, float, float, float]] = []
    occlusions: dict[int, float] = {}
    for t in range(spec.frames):
        index = t + 1
        canvas = np.empty((spec.height, spec.width, 3), dtype=np.float64)
        canvas[:] = np.asarray(spec.background, dtype=np.float64)
        for d, d_path, d_tex in zip(spec.distractors, distractor_paths, distractor_textures):
            _ = _paint(canvas, d.object, d_path[t][0], d_path[t][1], d_tex)

        x, y = path[t]
        target = _paint(canvas, spec.object, x, y, texture)
        covered = np.zeros_like(target)
        for occ in spec.occluders:
            if occ.start_frame <= index <= occ.end_frame:
                occ_obj = ObjectSpec("rect", spec.object.width + 2 * occ.margin,
                                     spec.object.height + 2 * occ.margin, occ.color)
                covered |= _paint(canvas, occ_obj, x - occ.margin, y - occ.margin, texture)
        if covered.any() and target.any():
            occlusions[index] = float((covered & target).sum() / target.sum())

        if spec.noise > 0:
            canvas += rng.normal(0.0, spec.noise, size=canvas.shape)
        frames.append(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
        rows.append((x, y, spec.object.width, spec.object.height))
    return RenderedSequence(spec.name, frames, rows, occlusions)


def generate_synthetic(spec: SceneSpec, seed: int, directory: Path) -> RenderedSequence:
    """Render ``spec`` and write frames, groundtruth.txt and the occlusion sidecar to ``directory``."""
    rendered = render_sequence(spec, seed)
    directory.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(rendered.frames, start=1):
        write_frame(directory / frame_name(index), frame)
    write_groundtruth(directory / GROUNDTRUTH_FILE, rendered.rows)
    write_events(directory / EVENTS_FILE, spec.name, rendered.occlusions)
    return rendered


def moving_square_scene(name: str = "moving-square", frames: int = 32, width: int = 160, height: int = 120,
                        size: float = 24.0, velocity: tuple[float, float] = (2.0, 1.0),
                        occluded_frames: Sequence[int] = (), noise: float = 2.0) -> SceneSpec:
    """Textured square on linear motion, optionally fully covered on ``occluded_frames``."""
    return SceneSpec(
        name=name,
        frames=frames,
        width=width,
        height=height,
        noise=noise,
        object=ObjectSpec("rect", size, size, (220, 40, 40), texture=25.0),
        motion=MotionSpec("linear", start=(width / 8.0, height / 4.0), velocity=velocity),
        occluders=tuple(OccluderSpec(f, f, (128, 128, 128), margin=2.0) for f in occluded_frames),
    )
