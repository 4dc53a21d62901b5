"""
Binary weights file.

    "STDW" | version u32 | count u32 | count × (name_len u32, name utf-8,
    rank u32, dims u32 × rank, float32 values row-major)

Everything little-endian. Merged-head tensors are named with a "merged."
prefix, which is how a loader tells the two head forms apart.
"""
from pathlib import Path
import signal
import struct
import sys
import threading
from types import FrameType

import numpy as np

from tokentrack.errors import (
    MagicMismatchError, TruncatedWeightsError, UnsupportedVersionError, WeightsFormatError,
)
from tokentrack.head import MergedConv
from tokentrack.model import TokenTrackModel
from tokentrack.tensor import Array

MAGIC = b"STDW"
VERSION = 1
MERGED_PREFIX = MergedConv.export_prefix

_U32 = struct.Struct("<I")


def encode_weights(state: dict[str, Array]) -> bytes:
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(state))]
    for name, values in state.items():
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise TruncatedWeightsError(
                f"weights file ends at byte {len(self.payload)} while reading {what} (needs {end})")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_weights(payload: bytes) -> dict[str, Array]:
    reader = _Reader(payload)
    magic = payload[:4]
    if magic != MAGIC:
        raise MagicMismatchError(f"not a weights file: magic {magic!r}, expected {MAGIC!r}")
    reader.offset = 4
    version = reader.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"weights file version {version} is not supported (expected {VERSION})")
    count = reader.u32("tensor count")

    state: dict[str, Array] = {}
    for index in range(count):
        name_len = reader.u32(f"name length of tensor {index}")
        try:
            name = reader.take(name_len, f"name of tensor {index}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightsFormatError(f"tensor {index} name is not valid UTF-8") from e
        rank = reader.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"dims of {name}"))
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(reader.take(4 * size, f"values of {name}"), dtype="<f4")
        state[name] = values.reshape(dims).astype(np.float32)
    if reader.offset != len(payload):
        raise TruncatedWeightsError(
            f"header lists {count} tensors but {len(payload) - reader.offset} bytes follow them")
    return state


def save_weights(model: TokenTrackModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    _ = tmp.write_bytes(encode_weights(model.state_dict()))
    _ = tmp.replace(path)


def read_weights(path: Path) -> dict[str, Array]:
    return decode_weights(path.read_bytes())


def is_merged(state: dict[str, Array]) -> bool:
    return any(name.startswith(MERGED_PREFIX) for name in state)


def load_weights(model: TokenTrackModel, path: Path) -> TokenTrackModel:
    """
    Load ``path`` into ``model``. A merged-form file switches the model to
    the merged head first, so no re-parameterization is needed afterwards.
    """
    state = read_weights(path)
    if is_merged(state) and not model.head.merged:
        model = model.reparameterize()
    model.load_state_dict(state)
    return model


# --- Interrupt checkpointing ---
_checkpoint_lock = threading.Lock()
_checkpoint_model: TokenTrackModel | None = None
_checkpoint_path: Path | None = None


def register_checkpoint(model: TokenTrackModel | None, path: Path | None) -> None:
    """Model and path the signal handler saves to; pass None to clear."""
    global _checkpoint_model, _checkpoint_path
    with _checkpoint_lock:
        _checkpoint_model = model
        _checkpoint_path = path


def signal_handler(signum: int, _: FrameType | None):
    """Signal handler to save the registered weights and exit."""
    print(f"\n[!] Signal {signum} received. Saving weights before exiting...")
    with _checkpoint_lock:
        if _checkpoint_model is not None and _checkpoint_path is not None:
            save_weights(_checkpoint_model, _checkpoint_path)
            print(f"[+] Weights saved to {_checkpoint_path}")
        else:
            print("[i] No training in progress, nothing to save.")
    sys.exit(128 + signum if signum in (signal.SIGINT, signal.SIGTERM) else 1)
