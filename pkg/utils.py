import os
import threading
import time
from contextlib import contextmanager
from functools import wraps

import pandas as pd
from dotenv import load_dotenv

load_dotenv()

_dbg_depth = threading.local()


def debug_enabled() -> bool:
    value = os.getenv("DEBUG", "")
    return value == "1" or value.lower() == "true"


def _get_call_stack() -> list[str]:
    """Return the thread-local decorated-call stack, initialising it if needed."""
    stack = getattr(_dbg_depth, "stack", None)
    if stack is None:
        stack = []
        _dbg_depth.stack = stack
    return stack


def dbg_print(func):
    """
    Trace entry into and exit from the decorated function when DEBUG is on.

    Nested calls are indented by 4 spaces per level so the call hierarchy is
    visible, e.g. ``run_federation -> client_round -> encrypt``. The Leaving
    line carries the elapsed wall-clock time in seconds.

    The DEBUG flag is read once at decoration time; with DEBUG off the
    original function is returned untouched.
    """
    if not debug_enabled():
        return func

    @wraps(func)
    def wrapper(*args, **kwargs):
        stack = _get_call_stack()
        indent = "    " * len(stack)
        stack.append(func.__name__)
        call_chain = " -> ".join(stack)
        print(f"{indent}[DEBUG] Entering: {call_chain}")
        start = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        finally:
            elapsed = time.perf_counter() - start
            stack.pop()
        print(f"{indent}[DEBUG] Leaving:  {call_chain} ({elapsed:.3f}s)")
        return result

    return wrapper


@contextmanager
def phase_timer(records: list, phase: str, **labels):
    """Append ``{"phase": phase, "seconds": elapsed, **labels}`` to *records*.

    The record is written even when the body raises, so partial rounds
    still show where the time went.
    """
    start = time.perf_counter()
    try:
        yield
    finally:
        records.append({**labels, "phase": phase, "seconds": time.perf_counter() - start})


def write_text_file(file, contents: str):
    os.makedirs(os.path.dirname(os.path.abspath(file)), exist_ok=True)
    with open(file, "w", encoding="utf-8") as f:
        f.write(contents)


def write_rows_to_csv(file: str, rows: list[dict], columns: list[str]) -> pd.DataFrame:
    """
    Write *rows* (list of dicts) to *file* with a fixed column order.

    Missing keys become empty cells. Returns the DataFrame that was written.
    """
    os.makedirs(os.path.dirname(os.path.abspath(file)), exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(file, index=False)
    return frame


def read_csv(file: str) -> pd.DataFrame:
    if not os.path.isfile(file):
        raise FileNotFoundError(f"CSV file not found at {file}")
    return pd.read_csv(file)
