from collections.abc import Iterator
from pathlib import Path
import signal

import numpy as np
import pytest

from tokentrack import config as app_config
from tokentrack.config import ModelConfig
from tokentrack.tensor import precision
from tokentrack.verification import tiny_model_config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def float64() -> Iterator[None]:
    """Create tensors and parameters in 64-bit for the duration of the test."""
    with precision(np.float64):
        yield


@pytest.fixture
def tiny_config() -> ModelConfig:
    return tiny_model_config()


@pytest.fixture
def app_dirs(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Iterator[Path]:
    """Point the user config, data and log directories at a temporary tree."""
    monkeypatch.setattr(app_config, "CONFIG_FILE_PATH", tmp_path / "config" / "config.toml")
    monkeypatch.setattr(app_config, "LOGS_PATH", tmp_path / "logs")
    monkeypatch.setattr(app_config, "DATA_PATH", tmp_path / "data")
    previous = signal.getsignal(signal.SIGINT), signal.getsignal(signal.SIGTERM)
    yield tmp_path
    _ = signal.signal(signal.SIGINT, previous[0])
    _ = signal.signal(signal.SIGTERM, previous[1])
