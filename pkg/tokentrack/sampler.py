"""
Dense clip sampling for training, plus an optional background producer.

A clip is a template frame followed by L search frames in temporal order,
with gaps drawn uniformly from [1, min(max_interval, (n−1)//L)]. With
probability ``reverse_prob`` the whole index list is reversed, which only
reorders frames.
"""
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
import queue
import threading

import numpy as np

from tokentrack.errors import SequenceTooShortError
from tokentrack.pipeline import BBox
from tokentrack.sequence_io import Frame, SequenceData


@dataclass(frozen=True)
class ClipSample:
    sequence: SequenceData
    template_index: int
    search_indices: tuple[int, ...]
    reversed: bool

    @property
    def template_frame(self) -> Frame:
        return self.sequence.frames[self.template_index]

    @property
    def template_box(self) -> BBox:
        return self.sequence.boxes[self.template_index]

    @property
    def search_frames(self) -> list[Frame]:
        return [self.sequence.frames[i] for i in self.search_indices]

    @property
    def search_boxes(self) -> list[BBox]:
        return [self.sequence.boxes[i] for i in self.search_indices]

    @property
    def indices(self) -> tuple[int, ...]:
        return (self.template_index, *self.search_indices)


def sample_indices(length: int, rng: np.random.Generator, clip_length: int = 8,
                   max_interval: int = 200, reverse_prob: float = 0.5) -> tuple[list[int], bool]:
    """Zero-based frame indices [template, search…] and whether they were reversed."""
    if length < 2 or length < clip_length + 1:
        raise SequenceTooShortError(f"a clip of {clip_length} search frames needs {clip_length + 1} frames, got {length}")
    g_max = min(max_interval, (length - 1) // clip_length)
    gaps = rng.integers(1, g_max + 1, size=clip_length)
    start = int(rng.integers(0, length - int(gaps.sum())))
    indices = [start, *(start + int(s) for s in np.cumsum(gaps))]
    flipped = bool(rng.random() < reverse_prob)
    if flipped:
        indices.reverse()
    return indices, flipped


def sample_clip(sequence: SequenceData, rng: np.random.Generator, clip_length: int = 8,
                max_interval: int = 200, reverse_prob: float = 0.5) -> ClipSample:
    indices, flipped = sample_indices(len(sequence), rng, clip_length, max_interval, reverse_prob)
    return ClipSample(sequence, indices[0], tuple(indices[1:]), flipped)


def clip_stream(sequences: Sequence[SequenceData], rng: np.random.Generator, clip_length: int = 8,
                max_interval: int = 200, reverse_prob: float = 0.5) -> Iterator[ClipSample]:
    """Endless clips from randomly chosen sequences; too-short sequences are skipped."""
    usable = [s for s in sequences if len(s) >= max(2, clip_length + 1)]
    if not usable:
        raise SequenceTooShortError(f"no sequence has the {clip_length + 1} frames a clip needs")
    while True:
        sequence = usable[int(rng.integers(len(usable)))]
        yield sample_clip(sequence, rng, clip_length, max_interval, reverse_prob)


class ClipPrefetcher:
    """
    Runs a clip stream in a producer thread feeding a bounded queue. One
    producer with its own generator keeps the order identical to the
    synchronous stream for the same seed.
    """

    def __init__(self, stream: Iterator[ClipSample], depth: int = 4):
        self._stream = stream
        self._queue: queue.Queue[ClipSample | BaseException] = queue.Queue(maxsize=max(depth, 1))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="clip-prefetch", daemon=True)
        self._thread.start()

    def _produce(self) -> None:
        try:
            for clip in self._stream:
                while not self._stop.is_set():
                    try:
                        self._queue.put(clip, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
        except BaseException as e:
            self._queue.put(e)

    def __iter__(self) -> "ClipPrefetcher":
        return self

    def __next__(self) -> ClipSample:
        item = self._queue.get()
        if isinstance(item, BaseException):
            raise item
        return item

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)

    def __enter__(self) -> "ClipPrefetcher":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
