from pathlib import Path

import numpy as np

from tokentrack.data_utils import TokenTrackArgs, build_model, describe_run, resolve_config
from tokentrack.maintainer import UpdatePolicy
from tokentrack.sequence_io import SequenceData, load_sequence
from tokentrack.training import TrainingSettings, train
from tokentrack.utils import log_command
from tokentrack.weights_io import load_weights, register_checkpoint, save_weights


def _training_log_path(output: Path, log: str | None) -> Path:
    return Path(log) if log else output.with_name(f"{output.stem}-training.csv")


@log_command
def train_command(args: TokenTrackArgs) -> int:
    """Train on the given sequence directories and write training-form weights."""
    print("--- Starting Training ---")
    config = resolve_config(args)
    if args.steps is not None:
        config["training"]["steps"] = args.steps
    print(f"[i] {describe_run(config)}")

    assert args.output is not None and args.sequences
    output = Path(args.output)
    log_path = _training_log_path(output, args.log)

    sequences: list[SequenceData] = [load_sequence(Path(d)) for d in args.sequences]
    print(f"[i] {len(sequences)} sequence(s), {sum(len(s) for s in sequences)} frames")

    model = build_model(config)
    if args.resume:
        model = load_weights(model, Path(args.resume))
        print(f"[i] Resuming from {args.resume}")
    settings = TrainingSettings.from_config(config["training"], config["tracker"]["search_factor"],
                                            config["tracker"]["template_factor"])

    register_checkpoint(model, output)
    try:
        history = train(
            model, sequences, settings,
            rng=np.random.default_rng(config["run"]["seed"]),
            log_path=log_path,
            capacity=config["tracker"]["capacity"],
            policy=UpdatePolicy(config["tracker"]["policy"]),
        )
    finally:
        register_checkpoint(None, None)

    save_weights(model, output)
    print(f"[+] Weights saved to {output}")
    print(f"[+] Training log at {log_path}")
    if history:
        print(f"[i] Final loss {history[-1].loss:.4f}")
    print("--- Training Complete --- ✅")
    return 0
