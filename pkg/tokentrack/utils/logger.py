"""
Per-command log files and the shared error log.

Every command decorated with ``log_command`` tees its output into
``<logs>/<command> - <timestamp>.txt``. Errors go to ``<logs>/error/error.log``;
inside ``sequence_context`` they carry the sequence name, so failures from
parallel ``track`` workers can be told apart.
"""
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import datetime
from functools import wraps
from pathlib import Path
import sys
import threading
import time
import traceback
from typing import IO, Any, ParamSpec, TypeVar

from tokentrack import config

P = ParamSpec("P")
R = TypeVar("R")

_current_sequence: ContextVar[str | None] = ContextVar("tokentrack_sequence", default=None)
_error_log_lock = threading.Lock()


def _now(fmt: str = "%Y-%m-%d %H:%M:%S") -> str:
    return datetime.now().strftime(fmt)


def error_dir() -> Path:
    return Path(config.LOGS_PATH) / "error"


def setup_logging() -> None:
    """Create log directories if they don't exist."""
    error_dir().mkdir(parents=True, exist_ok=True)


@contextmanager
def sequence_context(name: str) -> Iterator[None]:
    """Tag every ``log_error`` call in this block (and this thread) with ``name``."""
    token = _current_sequence.set(name)
    try:
        yield
    finally:
        _current_sequence.reset(token)


def current_sequence() -> str | None:
    return _current_sequence.get()


class Tee:
    """Write-through to several streams; one lock keeps lines from worker threads whole."""

    def __init__(self, *streams: IO[str]):
        self.streams = streams
        self._lock = threading.Lock()

    def write(self, text: str) -> int:
        with self._lock:
            for stream in self.streams:
                _ = stream.write(text)
                stream.flush()
        return len(text)

    def flush(self) -> None:
        with self._lock:
            for stream in self.streams:
                stream.flush()


def log_error(message: str) -> None:
    """Append a timestamped, sequence-tagged line to the error log and echo it to stderr."""
    setup_logging()
    sequence = current_sequence()
    line = f"[{_now()}] " + (f"[{sequence}] " if sequence else "") + message

    with _error_log_lock:
        try:
            with open(error_dir() / "error.log", "a", encoding="utf-8") as f:
                _ = f.write(line + "\n")
        except OSError as e:
            print(f"[{_now()}] Failed to write to error log: {e}", file=sys.stderr)
    print(line, file=sys.stderr)


def run_header(command: str, args: Any = None) -> str:
    """One line naming the command, its time and every option that was actually set."""
    options: dict[str, Any] = {}
    if args is not None and hasattr(args, "__dict__"):
        options = {
            key: value for key, value in sorted(vars(args).items())
            if key not in ("command", "func")
            and value is not None and value is not False and value not in ([], "")
        }
    rendered = " ".join(f"{key}={value}" for key, value in options.items())
    return f"--- tokentrack {command} started {_now()}" + (f" | {rendered}" if rendered else "") + " ---"


def log_command(func: Callable[P, R]) -> Callable[P, R]:
    """Tee a command's stdout/stderr into its own log file, framed by a run header and footer."""
    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        setup_logging()
        command = func.__name__.removesuffix("_command")
        stamp = _now("%Y-%m-%d_%H-%M-%S")
        log_path = Path(config.LOGS_PATH) / f"{command} - {stamp}.txt"
        error_path = error_dir() / f"error - {stamp}.txt"

        original_stdout, original_stderr = sys.stdout, sys.stderr
        started = time.perf_counter()
        try:
            with open(log_path, "a", encoding="utf-8") as log_file, \
                    open(error_path, "a", encoding="utf-8") as error_file:
                sys.stdout = Tee(original_stdout, log_file)
                sys.stderr = Tee(original_stderr, error_file)
                print(run_header(command, args[0] if args else None))
                try:
                    result = func(*args, **kwargs)
                except Exception as e:
                    print(f"\n--- {command} failed at {_now()}: {e}", file=sys.stderr)
                    traceback.print_exc(file=sys.stderr)
                    raise
                print(f"--- {command} finished in {time.perf_counter() - started:.1f}s ---")
                return result
        finally:
            sys.stdout, sys.stderr = original_stdout, original_stderr
            if error_path.exists() and error_path.stat().st_size == 0:
                error_path.unlink()

    return wrapper
