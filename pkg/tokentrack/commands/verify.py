from pathlib import Path

from tokentrack.data_utils import TokenTrackArgs, resolve_config
from tokentrack.pipeline import TrackerSettings
from tokentrack.utils import log_command
from tokentrack.verification import SUITES, SuiteResult, VerifyContext, run_suite


@log_command
def verify_command(args: TokenTrackArgs) -> int:
    """Run property suites; any failing suite makes the command fail."""
    print("--- Starting Verification ---")
    config = resolve_config(args)
    requested = args.suites or ["all"]
    names = list(SUITES) if "all" in requested else list(dict.fromkeys(requested))
    ctx = VerifyContext(
        model_config=config["model"],
        tracker=TrackerSettings.from_config(config["tracker"]),
        seed=config["run"]["seed"],
        weights=Path(args.weights) if args.weights else None,
        sequence_dirs=[Path(d) for d in args.sequences or []],
        quick=args.quick,
    )

    results: list[SuiteResult] = []
    for name in names:
        print(f"[i] {name} ...")
        result = run_suite(name, ctx)
        results.append(result)
        mark = "PASS ✅" if result.passed else "FAIL ❌"
        print(f"{mark} {name:<11} {result.seconds:8.2f}s  {result.detail}")

    failed = [r.name for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} suites passed")
    if failed:
        print(f"❌ Failed: {', '.join(failed)}")
        return 1
    print("--- Verification Complete --- ✅")
    return 0
