import copy
from pathlib import Path
import os
import tomllib
import tomli_w
from platformdirs import PlatformDirs
from typing import TypedDict, Literal, cast, Any

from tokentrack.errors import ConfigurationError

# --- Platform Directories ---
dirs = PlatformDirs("tokentrack", None)

USER_DATA_DIR = Path(dirs.user_data_dir)
USER_CONFIG_DIR = Path(dirs.user_config_dir)
USER_LOG_DIR = Path(dirs.user_log_dir)

CONFIG_FILE_PATH = USER_CONFIG_DIR / "config.toml"

Policy = Literal["quality", "fifo"]

# --- Type Definitions ---
class RunConfig(TypedDict):
    seed: int

class PathsConfig(TypedDict):
    logs: str
    data: str

class ModelConfig(TypedDict):
    preset: str
    patch_size: int
    dim: int
    depth: int
    heads: int
    mlp_ratio: int
    template_size: int
    search_size: int
    pixel_mean: list[float]
    pixel_std: list[float]
    norm_eps: float
    head_blocks: int
    multiscale_head: bool
    use_st_token: bool
    use_fusion: bool
    use_mask_enhancement: bool
    fusion_residual: bool
    fusion_positional: bool

class TrackerConfig(TypedDict):
    search_factor: float
    template_factor: float
    capacity: int
    policy: Policy
    hanning_window: bool

class TrainingConfig(TypedDict):
    steps: int
    clip_length: int
    max_interval: int
    reverse_prob: float
    lr_encoder: float
    lr_rest: float
    weight_decay: float
    beta1: float
    beta2: float
    adam_eps: float
    decay_start: float
    decay_floor: float
    lambda_cls: float
    lambda_giou: float
    lambda_l1: float
    focal_alpha: float
    focal_beta: float
    gaussian_sigma: float
    center_jitter: float
    scale_jitter_min: float
    scale_jitter_max: float
    bn_momentum: float
    detach_tokens: bool
    log_every: int
    prefetch: int

class Config(TypedDict):
    run: RunConfig
    paths: PathsConfig
    model: ModelConfig
    tracker: TrackerConfig
    training: TrainingConfig

# --- Path Interpolation ---
def interpolate_path(path_str: str) -> Path:
    """Interpolate placeholders like {user_data_dir} in path strings."""
    placeholders = {
        "user_data_dir": str(USER_DATA_DIR),
        "user_config_dir": str(USER_CONFIG_DIR),
        "user_log_dir": str(USER_LOG_DIR),
    }
    for key, value in placeholders.items():
        path_str = path_str.replace(f"{{{key}}}", value)
    return Path(path_str)

# --- Model presets ---
# "desk" trains on a CPU in minutes; "paper" is the ViT-tiny sized layout.
MODEL_PRESETS: dict[str, dict[str, Any]] = {
    "desk": {
        "patch_size": 8, "dim": 64, "depth": 4, "heads": 4,
        "template_size": 64, "search_size": 128,
    },
    "paper": {
        "patch_size": 16, "dim": 192, "depth": 12, "heads": 3,
        "template_size": 128, "search_size": 256,
    },
}

# --- Default Values ---
_DEFAULTS: Config = {
    "run": {
        "seed": 0,
    },
    "paths": {
        "logs": "{user_log_dir}",
        "data": os.path.join("{user_data_dir}", "sequences"),
    },
    "model": {
        "preset": "desk",
        "patch_size": 8,
        "dim": 64,
        "depth": 4,
        "heads": 4,
        "mlp_ratio": 4,
        "template_size": 64,
        "search_size": 128,
        "pixel_mean": [0.485, 0.456, 0.406],
        "pixel_std": [0.229, 0.224, 0.225],
        "norm_eps": 1e-5,
        "head_blocks": 4,
        "multiscale_head": True,
        "use_st_token": True,
        "use_fusion": True,
        "use_mask_enhancement": True,
        "fusion_residual": False,
        "fusion_positional": True,
    },
    "tracker": {
        "search_factor": 4.0,
        "template_factor": 2.0,
        "capacity": 6,
        "policy": "quality",
        "hanning_window": True,
    },
    "training": {
        "steps": 500,
        "clip_length": 8,
        "max_interval": 200,
        "reverse_prob": 0.5,
        "lr_encoder": 2e-4,
        "lr_rest": 1e-3,
        "weight_decay": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "decay_start": 0.8,
        "decay_floor": 0.1,
        "lambda_cls": 1.0,
        "lambda_giou": 2.0,
        "lambda_l1": 5.0,
        "focal_alpha": 2.0,
        "focal_beta": 4.0,
        "gaussian_sigma": 1.0,
        "center_jitter": 0.1,
        "scale_jitter_min": 0.8,
        "scale_jitter_max": 1.25,
        "bn_momentum": 0.1,
        "detach_tokens": False,
        "log_every": 10,
        "prefetch": 4,
    },
}


def default_config() -> Config:
    """Return a fresh deep copy of the defaults."""
    return copy.deepcopy(_DEFAULTS)


def save_default_config(path: Path = CONFIG_FILE_PATH) -> None:
    """Save the default configuration to the config file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(_DEFAULTS, f)


def save_config(config: Config, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(config, f)


def _check_value(section: str, key: str, value: Any, default: Any) -> Any:
    """Type-check one user value against its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"[{section}] {key} must be true or false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"[{section}] {key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"[{section}] {key} must be an integer, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or len(cast(list[Any], value)) != len(cast(list[Any], default)):
            raise ConfigurationError(f"[{section}] {key} must be a list of {len(cast(list[Any], default))} numbers")
        return [float(v) for v in cast(list[Any], value)]
    if not isinstance(value, type(default)):
        raise ConfigurationError(f"[{section}] {key} must be a {type(default).__name__}, got {value!r}")
    return value


def merge_config(user_config: dict[str, Any]) -> Config:
    """Deep-merge a parsed TOML document into the defaults, applying the model preset."""
    config = default_config()
    for section, values in user_config.items():
        if section not in _DEFAULTS:
            raise ConfigurationError(f"Unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigurationError(f"Config section [{section}] must be a table")
        defaults = cast(dict[str, Any], _DEFAULTS[section])
        for key, value in cast(dict[str, Any], values).items():
            if key not in defaults:
                raise ConfigurationError(f"Unknown config key [{section}] {key}")
            cast(dict[str, Any], config[section])[key] = _check_value(section, key, value, defaults[key])

    preset = config["model"]["preset"]
    if preset not in MODEL_PRESETS:
        raise ConfigurationError(f"Unknown model preset {preset!r}; choose one of {sorted(MODEL_PRESETS)}")
    # Explicit user keys win over the preset.
    user_model = cast(dict[str, Any], user_config.get("model", {}))
    for key, value in MODEL_PRESETS[preset].items():
        if key not in user_model:
            cast(dict[str, Any], config["model"])[key] = value

    if config["tracker"]["policy"] not in ("quality", "fifo"):
        raise ConfigurationError(f"[tracker] policy must be 'quality' or 'fifo', got {config['tracker']['policy']!r}")
    if config["tracker"]["capacity"] < 1:
        raise ConfigurationError("[tracker] capacity must be at least 1")
    return config


def load_config(path: Path | None = None) -> Config:
    """Load config from a TOML file, merging with defaults."""
    if path is None:
        path = CONFIG_FILE_PATH
        if not path.exists():
            return merge_config({})
    if not path.exists():
        raise ConfigurationError(f"Config file {path} not found")
    with open(path, "rb") as f:
        try:
            user_config: dict[str, Any] = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid TOML: {e}") from e
    return merge_config(user_config)


def _load_paths() -> PathsConfig:
    paths = _DEFAULTS["paths"].copy()
    if CONFIG_FILE_PATH.exists():
        try:
            with open(CONFIG_FILE_PATH, "rb") as f:
                user_paths = tomllib.load(f).get("paths", {})
            if isinstance(user_paths, dict):
                paths = {**paths, **cast(PathsConfig, user_paths)}
        except (OSError, tomllib.TOMLDecodeError):
            pass
    return paths


_paths = _load_paths()

LOGS_PATH = interpolate_path(_paths["logs"])
DATA_PATH = interpolate_path(_paths["data"])
