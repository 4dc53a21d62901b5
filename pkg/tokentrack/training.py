"""
Clip-level training: the tracker runs over a sampled clip with
groundtruth-centred (jittered) search crops, spatiotemporal tokens are
propagated and stored exactly as at inference, and one loss over the whole
clip is backpropagated through every frame.
"""
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path
import math
import time

import numpy as np

from tokentrack.config import TrainingConfig
from tokentrack.errors import NonFiniteLossError
from tokentrack.losses import LossParts, LossWeights, frame_loss, total_loss
from tokentrack.maintainer import TokenMaintainer, TokenRecord, UpdatePolicy, quality
from tokentrack.model import TokenTrackModel, forward_frame
from tokentrack.optim import AdamW, ParamGroup, lr_scale
from tokentrack.pipeline import BBox, crop_resize
from tokentrack.sampler import ClipPrefetcher, ClipSample, clip_stream
from tokentrack.sequence_io import SequenceData
from tokentrack.tensor import Array, Tensor, backward

TRAINING_LOG_HEADER = "step,loss,loss_cls,loss_giou,loss_l1,lr"


@dataclass(frozen=True)
class TrainingSettings:
    steps: int = 500
    clip_length: int = 8
    max_interval: int = 200
    reverse_prob: float = 0.5
    lr_encoder: float = 2e-4
    lr_rest: float = 1e-3
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    decay_start: float = 0.8
    decay_floor: float = 0.1
    weights: LossWeights = LossWeights()
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    gaussian_sigma: float = 1.0
    center_jitter: float = 0.1
    scale_jitter: tuple[float, float] = (0.8, 1.25)
    search_factor: float = 4.0
    template_factor: float = 2.0
    detach_tokens: bool = False
    log_every: int = 10
    prefetch: int = 4

    @classmethod
    def from_config(cls, training: TrainingConfig, search_factor: float = 4.0,
                    template_factor: float = 2.0) -> "TrainingSettings":
        return cls(
            steps=training["steps"],
            clip_length=training["clip_length"],
            max_interval=training["max_interval"],
            reverse_prob=training["reverse_prob"],
            lr_encoder=training["lr_encoder"],
            lr_rest=training["lr_rest"],
            weight_decay=training["weight_decay"],
            betas=(training["beta1"], training["beta2"]),
            adam_eps=training["adam_eps"],
            decay_start=training["decay_start"],
            decay_floor=training["decay_floor"],
            weights=LossWeights.from_config(training),
            focal_alpha=training["focal_alpha"],
            focal_beta=training["focal_beta"],
            gaussian_sigma=training["gaussian_sigma"],
            center_jitter=training["center_jitter"],
            scale_jitter=(training["scale_jitter_min"], training["scale_jitter_max"]),
            search_factor=search_factor,
            template_factor=template_factor,
            detach_tokens=training["detach_tokens"],
            log_every=training["log_every"],
            prefetch=training["prefetch"],
        )


@dataclass(frozen=True)
class LossBreakdown:
    loss: float
    cls: float
    giou: float
    l1: float
    lr: float = 0.0

    def as_log_line(self, step: int) -> str:
        return f"{step},{self.loss:.6f},{self.cls:.6f},{self.giou:.6f},{self.l1:.6f},{self.lr:.8g}"


@dataclass
class PreparedClip:
    """Crops and crop-normalized groundtruth for one clip, fixed before the forward pass."""
    template: Array
    searches: list[Array]
    targets: list[Array]


def jitter_box(box: BBox, rng: np.random.Generator, side: float, center_jitter: float,
               scale_range: tuple[float, float]) -> BBox:
    """Shift the centre by up to ±center_jitter·side and scale the extent (so the crop side) log-uniformly."""
    dx, dy = rng.uniform(-center_jitter, center_jitter, size=2) * side
    low, high = scale_range
    scale = float(np.exp(rng.uniform(np.log(low), np.log(high))))
    return BBox(box.cx + dx, box.cy + dy, box.w * scale, box.h * scale)


def prepare_clip(clip: ClipSample, settings: TrainingSettings, rng: np.random.Generator,
                 template_size: int, search_size: int) -> PreparedClip:
    template, _ = crop_resize(clip.template_frame, clip.template_box, settings.template_factor, template_size)
    searches: list[Array] = []
    targets: list[Array] = []
    for frame, box in zip(clip.search_frames, clip.search_boxes):
        side = settings.search_factor * math.sqrt(box.w * box.h)
        centre = jitter_box(box, rng, side, settings.center_jitter, settings.scale_jitter)
        pixels, crop = crop_resize(frame, centre, settings.search_factor, search_size)
        u, v, w, h = crop.box_to_crop(box)
        target = np.clip(np.array([u, v, w, h]) / search_size, 1e-4, 1.0 - 1e-4)
        searches.append(pixels)
        targets.append(target)
    return PreparedClip(template, searches, targets)


def clip_loss(model: TokenTrackModel, clip: PreparedClip, settings: TrainingSettings,
              maintainer: TokenMaintainer) -> tuple[Tensor, list[LossParts]]:
    """Run the tracker over a prepared clip and return the clip loss with its per-frame parts."""
    _ = maintainer.reset()
    z = model.embed_template(clip.template)
    st: Tensor = model.init_token.value
    parts: list[LossParts] = []
    for step, (pixels, target) in enumerate(zip(clip.searches, clip.targets), start=1):
        out = forward_frame(model, st, z, pixels, maintainer.snapshot())
        parts.append(frame_loss(out.head, target, settings.gaussian_sigma,
                                settings.focal_alpha, settings.focal_beta))
        # Clip positions stand in for frame indices so reversed clips still insert in order.
        _ = maintainer.insert(TokenRecord(out.fused, quality(out.head.score.numpy()), step))
        st = out.fused
    return total_loss(parts, settings.weights), parts


def make_optimizer(model: TokenTrackModel, settings: TrainingSettings) -> AdamW:
    return AdamW(
        groups=[
            ParamGroup("encoder", model.encoder_parameters(), settings.lr_encoder),
            ParamGroup("rest", model.rest_parameters(), settings.lr_rest),
        ],
        betas=settings.betas,
        eps=settings.adam_eps,
        weight_decay=settings.weight_decay,
    )


def _mean(values: Sequence[Tensor]) -> float:
    return float(np.mean([v.item() for v in values]))


def train_step(model: TokenTrackModel, clip: ClipSample, optimizer: AdamW, settings: TrainingSettings,
               rng: np.random.Generator, maintainer: TokenMaintainer | None = None,
               scale: float = 1.0) -> LossBreakdown:
    """One optimizer update on one clip."""
    _ = model.train()
    if maintainer is None:
        maintainer = TokenMaintainer(detach_tokens=settings.detach_tokens)
    config = model.encoder_config
    prepared = prepare_clip(clip, settings, rng, config.template_height, config.search_height)

    optimizer.zero_grad()
    loss, parts = clip_loss(model, prepared, settings, maintainer)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(
            f"loss is {value} on clip {clip.sequence.name} frames {clip.indices}"
            f" (cls {_mean([p.cls for p in parts])}, giou {_mean([p.giou for p in parts])},"
            f" l1 {_mean([p.l1 for p in parts])})")
    backward(loss)
    optimizer.step(scale)
    return LossBreakdown(
        loss=value,
        cls=_mean([p.cls for p in parts]),
        giou=_mean([p.giou for p in parts]),
        l1=_mean([p.l1 for p in parts]),
        lr=settings.lr_rest * scale,
    )


def _clips(sequences: Sequence[SequenceData], settings: TrainingSettings,
           rng: np.random.Generator) -> tuple[Iterator[ClipSample], ClipPrefetcher | None]:
    stream = clip_stream(sequences, rng, settings.clip_length, settings.max_interval, settings.reverse_prob)
    if settings.prefetch > 0:
        prefetcher = ClipPrefetcher(stream, settings.prefetch)
        return prefetcher, prefetcher
    return stream, None


def train(model: TokenTrackModel, sequences: Sequence[SequenceData], settings: TrainingSettings,
          rng: np.random.Generator, log_path: Path | None = None, capacity: int = 6,
          policy: UpdatePolicy = UpdatePolicy.QUALITY,
          on_step: Callable[[int, LossBreakdown], None] | None = None) -> list[LossBreakdown]:
    """
    Train for ``settings.steps`` clips. Sampling and crop jitter draw from
    separate generators spawned from ``rng`` so a prefetch thread does not
    change the sequence of clips.
    """
    sample_rng, jitter_rng = rng.spawn(2)
    optimizer = make_optimizer(model, settings)
    maintainer = TokenMaintainer(capacity, policy, detach_tokens=settings.detach_tokens)
    history: list[LossBreakdown] = []

    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        if not log_path.exists() or log_path.stat().st_size == 0:
            _ = log_path.write_text(TRAINING_LOG_HEADER + "\n", encoding="utf-8")

    clips, prefetcher = _clips(sequences, settings, sample_rng)
    started = time.perf_counter()
    try:
        for step in range(1, settings.steps + 1):
            clip = next(clips)
            scale = lr_scale(step - 1, settings.steps, settings.decay_start, settings.decay_floor)
            result = train_step(model, clip, optimizer, settings, jitter_rng, maintainer, scale)
            history.append(result)
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as f:
                    _ = f.write(result.as_log_line(step) + "\n")
            if settings.log_every and (step % settings.log_every == 0 or step == settings.steps):
                elapsed = time.perf_counter() - started
                print(f"[i] step {step}/{settings.steps}  loss {result.loss:.4f}  "
                      f"(cls {result.cls:.4f}, giou {result.giou:.4f}, l1 {result.l1:.4f})  "
                      f"lr {result.lr:.2e}  {elapsed:.1f}s")
            if on_step is not None:
                on_step(step, result)
    finally:
        if prefetcher is not None:
            prefetcher.close()
    return history
