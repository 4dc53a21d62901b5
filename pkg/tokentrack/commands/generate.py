from pathlib import Path

from tokentrack import config as app_config
from tokentrack.data_utils import TokenTrackArgs, resolve_config
from tokentrack.synthetic import SceneSpec, generate_synthetic, load_scene_file, moving_square_scene
from tokentrack.utils import log_command


@log_command
def generate_command(args: TokenTrackArgs) -> int:
    """
    Render synthetic sequences from a YAML scene file (or the built-in moving
    square) into ``<output>/<sequence name>/``.
    """
    print("--- Starting Sequence Generation ---")
    config = resolve_config(args)
    seed = config["run"]["seed"]
    output = Path(args.output) if args.output else app_config.DATA_PATH

    if args.scene:
        specs: list[SceneSpec] = load_scene_file(Path(args.scene))
        print(f"[i] {len(specs)} scene(s) read from {args.scene}")
    else:
        specs = [moving_square_scene(frames=args.frames)]
        print(f"[i] No scene file given, generating the default moving square ({args.frames} frames)")

    for index, spec in enumerate(specs):
        directory = output / spec.name
        rendered = generate_synthetic(spec, seed + index, directory)
        occluded = sorted(f for f, c in rendered.occlusions.items() if c >= 1.0)
        note = f", fully occluded frames {occluded}" if occluded else ""
        print(f"[+] {spec.name}: {len(rendered.frames)} frames {spec.width}x{spec.height} -> {directory}{note}")

    print("--- Sequence Generation Complete --- ✅")
    return 0
