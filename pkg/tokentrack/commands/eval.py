from pathlib import Path

from tokentrack.data_utils import TokenTrackArgs, results_path
from tokentrack.metrics import evaluate
from tokentrack.pipeline import BBox
from tokentrack.sequence_io import GROUNDTRUTH_FILE, read_groundtruth, read_results
from tokentrack.utils import log_command


@log_command
def eval_command(args: TokenTrackArgs) -> int:
    """
    Score results files against groundtruth. Prints a per-sequence table
    followed by machine-readable ``KEY=value`` lines.
    """
    print("--- Starting Evaluation ---")
    results_dir = Path(args.results_dir) if args.results_dir else None
    results: dict[str, list[BBox]] = {}
    groundtruth: dict[str, list[BBox]] = {}
    for entry in args.sequences or []:
        directory = Path(entry)
        results[directory.name] = [r.box for r in read_results(results_path(directory, results_dir))]
        groundtruth[directory.name] = read_groundtruth(directory / GROUNDTRUTH_FILE)

    report = evaluate(results, groundtruth)
    print(report.format_table())
    print()
    for line in report.key_values():
        print(line)
    print("--- Evaluation Complete --- ✅")
    return 0
