from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from pathlib import Path
import threading
import time

from tokentrack.data_utils import TokenTrackArgs, build_model, describe_run, resolve_config, results_path
from tokentrack.model import TokenTrackModel
from tokentrack.pipeline import OracleHead, TrackerSettings, TrackResult, run_sequence
from tokentrack.sequence_io import load_sequence, write_results
from tokentrack.tensor import no_grad
from tokentrack.utils import log_command, log_error, sequence_context
from tokentrack.weights_io import load_weights

print_lock = threading.Lock()


def track_directory(directory: Path, model: TokenTrackModel, settings: TrackerSettings,
                    results_dir: Path | None, oracle_head: bool) -> Path:
    """
    Track one sequence directory and write its results file.
    Runs on a worker thread; failures are logged under the directory name and re-raised.
    """
    with sequence_context(directory.name):
        try:
            return _track_directory(directory, model, settings, results_dir, oracle_head)
        except Exception as exc:
            log_error(f"{directory}: {exc}")
            raise


def _track_directory(directory: Path, model: TokenTrackModel, settings: TrackerSettings,
                     results_dir: Path | None, oracle_head: bool) -> Path:
    sequence = load_sequence(directory)
    predictor = None
    if oracle_head:
        predictor = OracleHead(sequence.boxes, model.search_grid, sequence.fully_occluded)

    started = time.perf_counter()
    with no_grad():
        results: list[TrackResult] = list(
            run_sequence(iter(sequence.frames), sequence.boxes[0], model, settings, predictor))
    elapsed = time.perf_counter() - started

    target = results_path(directory, results_dir)
    target.parent.mkdir(parents=True, exist_ok=True)
    write_results(target, results)
    with print_lock:
        fps = (len(results) - 1) / elapsed if elapsed > 0 else float("inf")
        print(f"    [+] {sequence.name}: {len(results)} frames ({fps:.1f} fps) -> {target}")
    return target


@log_command
def track_command(args: TokenTrackArgs) -> int:
    """Track every given sequence directory with one shared, read-only model."""
    print("--- Starting Tracking ---")
    config = resolve_config(args)
    print(f"[i] {describe_run(config)}")

    model = build_model(config)
    if args.weights:
        model = load_weights(model, Path(args.weights))
        print(f"[i] Weights loaded from {args.weights}")
    elif not args.oracle_head:
        print("⚠️ No weights given, tracking with a randomly initialized model")
    _ = model.eval()
    if not model.head.merged:
        model = model.reparameterize()
    if args.oracle_head:
        print("[i] Using the groundtruth oracle head")

    settings = TrackerSettings.from_config(config["tracker"])
    results_dir = Path(args.results_dir) if args.results_dir else None
    directories = [Path(d) for d in args.sequences or []]

    failures = 0
    with ThreadPoolExecutor(max_workers=args.jobs) as executor:
        futures: dict[Future[Path], Path] = {
            executor.submit(track_directory, d, model, settings, results_dir, args.oracle_head): d
            for d in directories
        }
        for i, future in enumerate(as_completed(futures)):
            directory = futures[future]
            try:
                _ = future.result()
            except Exception:
                failures += 1
                with print_lock:
                    print(f"    [-] [{i + 1}/{len(futures)}] {directory} failed")

    if failures:
        print(f"❌ {failures} of {len(directories)} sequence(s) failed")
        return 1
    print("--- Tracking Complete --- ✅")
    return 0
