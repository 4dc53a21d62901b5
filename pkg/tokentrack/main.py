import argparse
import signal
import sys


# Import configurations
from tokentrack.config import CONFIG_FILE_PATH, DATA_PATH, LOGS_PATH
from tokentrack.errors import TokenTrackError

# Weights checkpointing on interrupt
from tokentrack.weights_io import signal_handler

# Import command functions
from tokentrack.commands import (
    generate_command, train_command, reparam_command, track_command, eval_command, verify_command
)
from tokentrack.data_utils import TokenTrackArgs
from tokentrack.verification import SUITES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokentrack",
        description="Spatiotemporal token tracker CLI",
        formatter_class=argparse.RawTextHelpFormatter,
        epilog=f"""
Configuration file: {CONFIG_FILE_PATH}
Sequences: {DATA_PATH}
Logs: {LOGS_PATH}"""
    )

    # --- Global/Shared Arguments ---
    _ = parser.add_argument("--seed", type=int, default=None, help="Run seed. Default: [run] seed from the config.")
    _ = parser.add_argument("--config", default=None, help="Run configuration TOML file. Default: the user config file.")
    _ = parser.add_argument("--policy", choices=["quality", "fifo"], default=None,
                            help="Token maintainer update policy. Default: [tracker] policy.")
    _ = parser.add_argument("--capacity", type=int, default=None,
                            help="Token maintainer capacity N. Default: [tracker] capacity.")
    _ = parser.add_argument("--jobs", type=int, default=1, help="Sequences tracked in parallel. Default: 1.")

    # --- Subcommands ---
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # generate command
    generate_parser = subparsers.add_parser("generate", help="Render synthetic sequences from a YAML scene file.")
    _ = generate_parser.add_argument("scene", nargs="?", default=None,
                                     help="Scene file. Default: a single moving square.")
    _ = generate_parser.add_argument("--output", default=None, help=f"Parent directory for the sequences. Default: {DATA_PATH}.")
    _ = generate_parser.add_argument("--frames", type=int, default=32, help="Frames of the default scene. Default: 32.")
    generate_parser.set_defaults(func=generate_command)

    # train command
    train_parser = subparsers.add_parser("train", help="Train on sequence directories and write training-form weights.")
    _ = train_parser.add_argument("sequences", nargs="+", help="Sequence directories.")
    _ = train_parser.add_argument("--output", required=True, help="Weights file to write.")
    _ = train_parser.add_argument("--steps", type=int, default=None, help="Training steps. Default: [training] steps.")
    _ = train_parser.add_argument("--log", default=None, help="Training log. Default: <output stem>-training.csv.")
    _ = train_parser.add_argument("--resume", default=None, help="Weights file to start from.")
    train_parser.set_defaults(func=train_command)

    # reparam command
    reparam_parser = subparsers.add_parser("reparam", help="Merge the head of training-form weights.")
    _ = reparam_parser.add_argument("weights", nargs="?", default=None,
                                    help="Training-form weights. Default: a freshly initialized model.")
    _ = reparam_parser.add_argument("--output", default=None, help="Merged weights file to write.")
    _ = reparam_parser.add_argument("--samples", type=int, default=100, help="Random feature maps compared. Default: 100.")
    reparam_parser.set_defaults(func=reparam_command)

    # track command
    track_parser = subparsers.add_parser("track", help="Track sequence directories and write results files.")
    _ = track_parser.add_argument("sequences", nargs="+", help="Sequence directories.")
    _ = track_parser.add_argument("--weights", default=None, help="Weights file (training or merged form).")
    _ = track_parser.add_argument("--results-dir", default=None,
                                  help="Write <results-dir>/<sequence>.txt. Default: results.txt in each sequence.")
    _ = track_parser.add_argument("--oracle-head", action="store_true", help="Replace the head with a groundtruth oracle.")
    track_parser.set_defaults(func=track_command)

    # eval command
    eval_parser = subparsers.add_parser("eval", help="Score results files against groundtruth.")
    _ = eval_parser.add_argument("sequences", nargs="+", help="Sequence directories holding groundtruth.txt.")
    _ = eval_parser.add_argument("--results-dir", default=None,
                                 help="Read <results-dir>/<sequence>.txt. Default: results.txt in each sequence.")
    eval_parser.set_defaults(func=eval_command)

    # verify command
    verify_parser = subparsers.add_parser("verify", help="Run the property suites.")
    _ = verify_parser.add_argument("suites", nargs="*", default=None,
                                   help=f"Suites to run: {', '.join(SUITES)} or all. Default: all.")
    _ = verify_parser.add_argument("--weights", default=None, help="Weights for the capacity sweep.")
    _ = verify_parser.add_argument("--sequences", nargs="+", default=None,
                                   help="Sequence directories for the capacity sweep. Default: generated ones.")
    _ = verify_parser.add_argument("--quick", action="store_true", help="Fewer samples and shorter sequences.")
    verify_parser.set_defaults(func=verify_command)

    return parser


def main(argv: list[str] | None = None):
    parser = build_parser()

    # Register signal handler for graceful shutdown
    _ = signal.signal(signal.SIGINT, signal_handler)
    _ = signal.signal(signal.SIGTERM, signal_handler)

    args, unknown = parser.parse_known_args(argv, namespace=TokenTrackArgs())

    # Unknown arguments are an error (exit 2).
    if unknown:
        parser.error(f"unrecognized arguments: {' '.join(unknown)}")
    if args.command == "verify":
        invalid = [s for s in args.suites or [] if s not in SUITES and s != "all"]
        if invalid:
            parser.error(f"unknown suite(s): {', '.join(invalid)}")

    if args.func is None:
        # No command provided, show usage and hint
        parser.print_usage()
        print(parser.epilog)
        print("\nUse --help for extended usage information.\n")
        sys.exit(2)

    try:
        code = args.func(args)
    except (TokenTrackError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(1)
    sys.exit(code or 0)

if __name__ == "__main__":
    main()
