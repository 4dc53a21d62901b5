import argparse
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from tokentrack import config as app_config
from tokentrack.config import Config
from tokentrack.errors import ConfigurationError
from tokentrack.model import TokenTrackModel

# pyright: reportUninitializedInstanceVariable=false

RESULTS_FILE = "results.txt"

# Define a single, comprehensive Namespace for type hinting all possible argparse arguments.
# Command-specific arguments are marked as Optional.
class TokenTrackArgs(argparse.Namespace):
    # Global arguments
    command: str = ""
    seed: int | None = None
    config: str | None = None
    policy: Literal["quality", "fifo"] | None = None
    capacity: int | None = None
    jobs: int = 1
    func: Callable[..., int | None] | None = None

    # Command-specific arguments
    scene: str | None = None
    frames: int
    output: str | None = None
    sequences: list[str] | None = None
    steps: int | None = None
    log: str | None = None
    resume: str | None = None
    weights: str | None = None
    samples: int
    results_dir: str | None = None
    oracle_head: bool
    suites: list[str] | None = None
    quick: bool


def resolve_config(args: TokenTrackArgs) -> Config:
    """
    Load the run configuration and apply the command-line overrides.

    With no ``--config`` and no user config file yet, the defaults are
    written to the user config file first.
    """
    if args.config is not None:
        config = app_config.load_config(Path(args.config))
    else:
        if not app_config.CONFIG_FILE_PATH.exists():
            app_config.save_default_config(app_config.CONFIG_FILE_PATH)
            print(f"[i] Default configuration written to {app_config.CONFIG_FILE_PATH}")
        config = app_config.load_config()

    if args.seed is not None:
        config["run"]["seed"] = args.seed
    if args.policy is not None:
        config["tracker"]["policy"] = args.policy
    if args.capacity is not None:
        if args.capacity < 1:
            raise ConfigurationError(f"--capacity must be at least 1, got {args.capacity}")
        config["tracker"]["capacity"] = args.capacity
    if args.jobs < 1:
        raise ConfigurationError(f"--jobs must be at least 1, got {args.jobs}")
    return config


def describe_run(config: Config) -> str:
    model, tracker = config["model"], config["tracker"]
    return (f"seed {config['run']['seed']}, preset {model['preset']} (P={model['patch_size']}, D={model['dim']}, "
            f"depth {model['depth']}, search {model['search_size']}), policy {tracker['policy']}, "
            f"capacity {tracker['capacity']}")


def build_model(config: Config) -> TokenTrackModel:
    """Fresh model whose initial weights are fixed by the run seed."""
    return TokenTrackModel(config["model"], np.random.default_rng(config["run"]["seed"]),
                           bn_momentum=config["training"]["bn_momentum"])


def results_path(sequence_dir: Path, results_dir: Path | None) -> Path:
    """``<results_dir>/<sequence>.txt``, or ``results.txt`` inside the sequence directory."""
    if results_dir is None:
        return sequence_dir / RESULTS_FILE
    return results_dir / f"{sequence_dir.name}.txt"
