from pathlib import Path

import numpy as np

from tokentrack.data_utils import TokenTrackArgs, build_model, resolve_config
from tokentrack.errors import ContractError
from tokentrack.tensor import tensor
from tokentrack.utils import log_command
from tokentrack.verification import head_max_deviation
from tokentrack.weights_io import is_merged, read_weights, load_weights, save_weights

REPARAM_TOLERANCE = 1e-4


@log_command
def reparam_command(args: TokenTrackArgs) -> int:
    """
    Merge the head of training-form weights into single convolutions and
    check the merged head against the original on random feature maps.
    """
    print("--- Starting Re-parameterization ---")
    config = resolve_config(args)
    model = build_model(config)
    if args.weights:
        weights = Path(args.weights)
        if is_merged(read_weights(weights)):
            raise ContractError(f"{weights} already holds a merged head")
        model = load_weights(model, weights)
        print(f"[i] Loaded training-form weights from {weights}")
    else:
        print("[i] No weights given, re-parameterizing a freshly initialized model")
    _ = model.eval()
    merged = model.reparameterize()

    rng = np.random.default_rng(config["run"]["seed"])
    rows, cols = model.search_grid
    channels = model.encoder_config.dim
    inputs = [tensor(rng.normal(0.0, 1.0, size=(channels, rows, cols))) for _ in range(args.samples)]
    deviation = head_max_deviation(model.head, merged.head, inputs)
    print(f"max-abs deviation over {args.samples} samples: {deviation:.3e}")

    if not deviation <= REPARAM_TOLERANCE:
        print(f"❌ Merged head deviates by {deviation:.3e} (> {REPARAM_TOLERANCE:.0e})")
        return 1

    if args.output:
        save_weights(merged, Path(args.output))
        print(f"[+] Merged weights saved to {args.output}")
    print("--- Re-parameterization Complete --- ✅")
    return 0
