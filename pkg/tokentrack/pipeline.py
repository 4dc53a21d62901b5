"""
Frame-by-frame tracking: crop the search region around the previous box, run
the network, decode a box from the (optionally Hanning-windowed) score map and
feed the enhanced spatiotemporal token back into the maintainer.
"""
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field, replace
import math

import numpy as np

from tokentrack.config import TrackerConfig
from tokentrack.errors import ConfigurationError, InvalidBoxError
from tokentrack.head import HeadOutput
from tokentrack.maintainer import TokenMaintainer, TokenRecord, UpdatePolicy, quality
from tokentrack.model import TokenTrackModel, forward_frame
from tokentrack.tensor import Array, Tensor, get_default_dtype


@dataclass(frozen=True)
class BBox:
    """Center/extent box in image pixels, origin at the top-left corner."""
    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def to_xywh(self) -> tuple[float, float, float, float]:
        return self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def validate(self) -> "BBox":
        values = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in values) or self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"invalid box (cx={self.cx}, cy={self.cy}, w={self.w}, h={self.h})")
        return self


@dataclass(frozen=True)
class CropParams:
    """Square crop of ``side`` image pixels centred on (center_x, center_y), resized to ``out_side``."""
    center_x: float
    center_y: float
    side: float
    out_side: int

    @property
    def scale(self) -> float:
        return self.out_side / self.side

    @property
    def origin(self) -> tuple[float, float]:
        return self.center_x - self.side / 2.0, self.center_y - self.side / 2.0

    def to_image(self, u: float, v: float) -> tuple[float, float]:
        x0, y0 = self.origin
        return x0 + u / self.scale, y0 + v / self.scale

    def to_crop(self, x: float, y: float) -> tuple[float, float]:
        x0, y0 = self.origin
        return (x - x0) * self.scale, (y - y0) * self.scale

    def box_to_image(self, u: float, v: float, w: float, h: float) -> BBox:
        x, y = self.to_image(u, v)
        return BBox(x, y, w / self.scale, h / self.scale)

    def box_to_crop(self, box: BBox) -> tuple[float, float, float, float]:
        u, v = self.to_crop(box.cx, box.cy)
        return u, v, box.w * self.scale, box.h * self.scale


def crop_params(box: BBox, factor: float, out_side: int) -> CropParams:
    if factor <= 1:
        raise ConfigurationError(f"crop factor must exceed 1, got {factor}")
    _ = box.validate()
    return CropParams(box.cx, box.cy, factor * math.sqrt(box.w * box.h), out_side)


def crop_resize(frame: Array, box: BBox, factor: float, out_side: int) -> tuple[Array, CropParams]:
    """
    Bilinear crop of an [H, W, 3] frame into a [3, out_side, out_side] array of
    0..255 intensities. Samples falling outside the frame take the per-channel
    mean color of the frame.
    """
    params = crop_params(box, factor, out_side)
    height, width = frame.shape[:2]
    image = frame.astype(np.float64)
    mean = image.reshape(-1, 3).mean(axis=0)

    # Output pixel centres in image coordinates, then in pixel-index space.
    steps = (np.arange(out_side, dtype=np.float64) + 0.5) / params.scale
    x0, y0 = params.origin
    xs = x0 + steps - 0.5
    ys = y0 + steps - 0.5
    col0 = np.floor(xs).astype(np.int64)
    row0 = np.floor(ys).astype(np.int64)
    fx = (xs - col0)[None, :, None]
    fy = (ys - row0)[:, None, None]

    def gather(rows: Array, cols: Array) -> Array:
        inside = (rows[:, None] >= 0) & (rows[:, None] < height) & (cols[None, :] >= 0) & (cols[None, :] < width)
        values = image[np.clip(rows, 0, height - 1)[:, None], np.clip(cols, 0, width - 1)[None, :]]
        return np.where(inside[:, :, None], values, mean)

    top = gather(row0, col0) * (1 - fx) + gather(row0, col0 + 1) * fx
    bottom = gather(row0 + 1, col0) * (1 - fx) + gather(row0 + 1, col0 + 1) * fx
    patch = top * (1 - fy) + bottom * fy
    return np.ascontiguousarray(patch.transpose(2, 0, 1)).astype(get_default_dtype()), params


def hanning_window(height: int, width: int) -> Array:
    """Outer product of 1-D Hann windows, 0.5(1 − cos(2πi/(n−1))); a side of 1 is all ones."""
    if height < 1 or width < 1:
        raise ConfigurationError(f"Hanning window needs both sides >= 1, got {height}x{width}")
    return np.outer(np.hanning(height), np.hanning(width))


def decode_box(out: HeadOutput, crop: CropParams, window: Array | None = None) -> tuple[BBox, Array]:
    """
    Peak cell of score ⊙ window (first in row-major order on ties), centre
    refined by the offsets at that cell, size read at that cell, mapped back
    to image pixels. Returns the box and the score map the peak was taken on.
    """
    score = out.score.numpy()
    used = score * window if window is not None else score
    rows, cols = used.shape
    i, j = np.unravel_index(int(np.argmax(used)), used.shape)
    offset = out.offset.numpy()
    size = out.size.numpy()
    nx = (j + float(offset[0, i, j])) / cols
    ny = (i + float(offset[1, i, j])) / rows
    side = crop.out_side
    box = crop.box_to_image(nx * side, ny * side, float(size[0, i, j]) * side, float(size[1, i, j]) * side)
    return box, used


def clamp_box(box: BBox, frame_shape: tuple[int, ...]) -> BBox:
    """Keep the centre inside the frame and the extent between 1 px and the frame size."""
    height, width = frame_shape[0], frame_shape[1]
    return BBox(
        cx=min(max(box.cx, 0.0), float(width)),
        cy=min(max(box.cy, 0.0), float(height)),
        w=min(max(box.w, 1.0), float(width)),
        h=min(max(box.h, 1.0), float(height)),
    )


@dataclass(frozen=True)
class TrackerSettings:
    search_factor: float = 4.0
    template_factor: float = 2.0
    capacity: int = 6
    policy: UpdatePolicy = UpdatePolicy.QUALITY
    hanning_window: bool = True

    @classmethod
    def from_config(cls, tracker: TrackerConfig) -> "TrackerSettings":
        return cls(
            search_factor=tracker["search_factor"],
            template_factor=tracker["template_factor"],
            capacity=tracker["capacity"],
            policy=UpdatePolicy(tracker["policy"]),
            hanning_window=tracker["hanning_window"],
        )


# (search features [C, H, W], crop, 1-based frame index) -> head output
HeadPredictor = Callable[[Tensor, CropParams, int], HeadOutput]


@dataclass
class TrackerState:
    template: Tensor
    box: BBox
    token: Tensor
    maintainer: TokenMaintainer
    settings: TrackerSettings
    frame_index: int = 1
    last_quality: float | None = None
    predictor: HeadPredictor | None = field(default=None, repr=False)


@dataclass(frozen=True)
class TrackResult:
    frame: int
    box: BBox
    quality: float


def track_init(frame: Array, gt_box: BBox, model: TokenTrackModel, settings: TrackerSettings,
               predictor: HeadPredictor | None = None) -> TrackerState:
    _ = gt_box.validate()
    config = model.encoder_config
    pixels, _ = crop_resize(frame, gt_box, settings.template_factor, config.template_height)
    return TrackerState(
        template=model.embed_template(pixels),
        box=gt_box,
        token=model.init_token.value,
        maintainer=TokenMaintainer(settings.capacity, settings.policy),
        settings=settings,
        predictor=predictor,
    )


def track_step(state: TrackerState, frame: Array, model: TokenTrackModel) -> tuple[BBox, TrackerState]:
    t = state.frame_index + 1
    settings = state.settings
    pixels, crop = crop_resize(frame, state.box, settings.search_factor, model.encoder_config.search_height)

    out = forward_frame(model, state.token, state.template, pixels, state.maintainer.snapshot())
    head = out.head
    if state.predictor is not None:
        rows, cols = model.search_grid
        features = out.enhanced.transpose(1, 0).reshape(out.enhanced.shape[1], rows, cols)
        head = state.predictor(features, crop, t)

    window = hanning_window(*head.grid) if settings.hanning_window else None
    box, _ = decode_box(head, crop, window)
    box = clamp_box(box, frame.shape)

    # Stored quality comes from the raw map; the window only moves the peak.
    q = quality(head.score.numpy())
    _ = state.maintainer.insert(TokenRecord(out.fused, q, t))
    return box, replace(state, box=box, token=out.fused, frame_index=t, last_quality=q)


def run_sequence(frames: Iterable[Array], init_box: BBox, model: TokenTrackModel, settings: TrackerSettings,
                 predictor: HeadPredictor | None = None) -> Iterator[TrackResult]:
    """Yield one result per frame; frame 1 reports the initial box with quality 1."""
    state: TrackerState | None = None
    for frame in frames:
        if state is None:
            state = track_init(frame, init_box, model, settings, predictor)
            yield TrackResult(1, init_box, 1.0)
            continue
        box, state = track_step(state, frame, model)
        assert state.last_quality is not None
        yield TrackResult(state.frame_index, box, state.last_quality)


class OracleHead:
    """
    Head stand-in driven by groundtruth: a Gaussian bump on the groundtruth
    cell with exact offsets and size, or a flat score map on frames listed as
    fully occluded.
    """

    def __init__(self, groundtruth: list[BBox], grid: tuple[int, int],
                 occluded: Iterable[int] = (), sigma: float = 1.0):
        self.groundtruth = groundtruth
        self.grid = grid
        self.occluded = set(occluded)
        self.sigma = sigma

    def __call__(self, features: Tensor, crop: CropParams, frame: int) -> HeadOutput:
        rows, cols = self.grid
        dtype = np.float64
        gt = self.groundtruth[frame - 1]
        u, v, w, h = crop.box_to_crop(gt)
        side = crop.out_side
        size = np.empty((2, rows, cols), dtype=dtype)
        size[0] = min(max(w / side, 1e-6), 1 - 1e-6)
        size[1] = min(max(h / side, 1e-6), 1 - 1e-6)

        if frame in self.occluded:
            score = np.full((rows, cols), 0.5, dtype=dtype)
            offset = np.full((2, rows, cols), 0.5, dtype=dtype)
            return HeadOutput(Tensor(score), Tensor(offset), Tensor(size))

        gx = min(max(u / side * cols, 0.0), cols - 1e-9)
        gy = min(max(v / side * rows, 0.0), rows - 1e-9)
        j, i = int(gx), int(gy)
        r, c = np.mgrid[0:rows, 0:cols]
        score = np.exp(-((r - i) ** 2 + (c - j) ** 2) / (2 * self.sigma ** 2))
        score = np.clip(score, 1e-6, 1 - 1e-6)
        offset = np.zeros((2, rows, cols), dtype=dtype)
        offset[0] = gx - j
        offset[1] = gy - i
        return HeadOutput(Tensor(score), Tensor(offset), Tensor(size))
