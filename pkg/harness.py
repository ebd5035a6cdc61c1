"""Experiment grid: every (client count, mode, repetition) cell is one federation run.

Outputs, all under one directory:

    metrics.csv          clients, mode, accuracy, f1, precision, recall
                         (final-round test metrics, mean over repetitions)
    timings.csv          clients, mode, phase, seconds
                         (per-phase wall clock summed over a run, mean over repetitions)
    baseline.csv         clients, accuracy, f1, precision, recall
                         (centralized training on the pooled data of each row,
                         mean over repetitions)
    aggregate_times.dat  gnuplot columns: clients then one aggregate-seconds column per mode
    run-meta.txt         parameter sets, fixed-point bits, protocol version, environment

Cells in the same (clients, repetition) row share the data and model seed so
PLAIN, SEC128 and SEC192 train on identical shares; key generation and
encryption randomness use the full cell hash.
"""
from __future__ import annotations

import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from hashlib import blake2b

import numpy as np
import pandas as pd
import sklearn

from bfv import CIPHERTEXT_VERSION, SecurityLevel
from errors import ConfigError, FedHEError
from fed_config import FederationConfig, RunMode
from federation import run_centralized, run_federation
from model import MetricsReport
from utils import dbg_print, write_rows_to_csv, write_text_file
from wire import PROTOCOL_VERSION

DEFAULT_CLIENT_COUNTS = (2, 3, 5, 7)
DEFAULT_MODES = (RunMode.PLAIN, RunMode.SEC128, RunMode.SEC192)
TIMING_PHASES = ("train", "encrypt", "transfer", "aggregate", "decrypt")

METRIC_COLUMNS = ["clients", "mode", "accuracy", "f1", "precision", "recall"]
BASELINE_COLUMNS = ["clients", "accuracy", "f1", "precision", "recall"]
TIMING_COLUMNS = ["clients", "mode", "phase", "seconds"]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExperimentGrid:
    client_counts: tuple = DEFAULT_CLIENT_COUNTS
    modes: tuple = DEFAULT_MODES
    repetitions: int = 3
    base_seed: int = 0
    parallel: bool = False
    workers: int | None = None
    baseline: bool = True

    def __post_init__(self):
        if not self.client_counts or not self.modes:
            raise ConfigError("a grid needs at least one client count and one mode")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be at least 1, got {self.repetitions}")

    def cells(self):
        for clients in self.client_counts:
            for mode in self.modes:
                for repetition in range(self.repetitions):
                    yield clients, mode, repetition


@dataclass
class RunReport:
    clients: int
    mode: RunMode
    repetition: int
    seed: int
    key_seed: int
    metrics: MetricsReport | None = None
    timings: dict = field(default_factory=dict)
    rounds_completed: int = 0
    error: str | None = None
    environment: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None and self.metrics is not None


def _stable_hash(*parts) -> int:
    digest = blake2b("|".join(str(p) for p in parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def cell_seed(base_seed: int, clients: int, mode: RunMode, repetition: int) -> int:
    return (base_seed ^ _stable_hash("cell", clients, mode.value, repetition)) & _MASK64


def twin_seed(base_seed: int, clients: int, repetition: int) -> int:
    """Seed shared by every mode of one (clients, repetition) row."""
    return (base_seed ^ _stable_hash("row", clients, repetition)) & _MASK64


def environment_metadata() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scikit-learn": sklearn.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
    }


def cell_config(base_cfg: FederationConfig, clients: int, mode: RunMode, repetition: int, base_seed: int) -> FederationConfig:
    partition = base_cfg.partition if base_cfg.partition and len(base_cfg.partition) == clients else None
    return replace(
        base_cfg,
        c=clients,
        mode=mode,
        partition=partition,
        seed=twin_seed(base_seed, clients, repetition),
        key_seed=cell_seed(base_seed, clients, mode, repetition),
    )


def run_cell(base_cfg: FederationConfig, clients: int, mode: RunMode, repetition: int, base_seed: int) -> RunReport:
    cfg = cell_config(base_cfg, clients, mode, repetition, base_seed)
    report = RunReport(clients, mode, repetition, cfg.seed, cfg.key_seed, environment=environment_metadata())
    try:
        result = run_federation(cfg)
    except Exception as e:
        report.error = f"{type(e).__name__}: {e}"
        print(f"[harness] cell c={clients} {mode.value} rep={repetition} failed: {report.error}", file=sys.stderr)
        return report

    totals = result.phase_totals()
    report.timings = {phase: totals.get(phase, 0.0) for phase in TIMING_PHASES}
    report.metrics = result.final_metrics
    report.rounds_completed = result.rounds_completed
    report.error = result.error
    return report


def summarize_metrics(reports: list[RunReport], grid: ExperimentGrid) -> list[dict]:
    rows = []
    for clients in grid.client_counts:
        for mode in grid.modes:
            done = [r.metrics for r in reports if r.clients == clients and r.mode is mode and r.ok]
            row = {"clients": clients, "mode": mode.value}
            for name in METRIC_COLUMNS[2:]:
                row[name] = float(np.mean([getattr(m, name) for m in done])) if done else float("nan")
            rows.append(row)
    return rows


def summarize_timings(reports: list[RunReport], grid: ExperimentGrid) -> list[dict]:
    rows = []
    for clients in grid.client_counts:
        for mode in grid.modes:
            done = [r.timings for r in reports if r.clients == clients and r.mode is mode and r.timings]
            for phase in TIMING_PHASES:
                seconds = float(np.mean([t[phase] for t in done])) if done else float("nan")
                row = {"clients": clients, "mode": mode.value, "phase": phase, "seconds": seconds}
                if grid.parallel:
                    row["comparable"] = False
                rows.append(row)
    return rows


def run_baselines(grid: ExperimentGrid, base_cfg: FederationConfig) -> list[dict]:
    """Centralized metrics per client-count row, on the same data the row's federations use."""
    rows = []
    for clients in grid.client_counts:
        done = []
        for repetition in range(grid.repetitions):
            cfg = cell_config(base_cfg, clients, RunMode.PLAIN, repetition, grid.base_seed)
            try:
                done.append(run_centralized(cfg)[-1])
            except FedHEError as e:
                print(f"[harness] baseline c={clients} rep={repetition} failed: {e}", file=sys.stderr)
        row = {"clients": clients}
        for name in BASELINE_COLUMNS[1:]:
            row[name] = float(np.mean([getattr(m, name) for m in done])) if done else float("nan")
        rows.append(row)
    return rows


def write_plot_data(path: str, timing_rows: list[dict], grid: ExperimentGrid):
    frame = pd.DataFrame(timing_rows)
    frame = frame[frame["phase"] == "aggregate"]
    lines = ["# aggregate-phase seconds per client count", "# clients " + " ".join(m.value for m in grid.modes)]
    for clients in grid.client_counts:
        cells = []
        for mode in grid.modes:
            match = frame[(frame["clients"] == clients) & (frame["mode"] == mode.value)]["seconds"]
            cells.append("NaN" if match.empty or pd.isna(match.iloc[0]) else f"{match.iloc[0]:.6f}")
        lines.append(f"{clients} " + " ".join(cells))
    write_text_file(path, "\n".join(lines) + "\n")


def run_meta(grid: ExperimentGrid, base_cfg: FederationConfig, reports: list[RunReport]) -> str:
    lines = [
        f"protocol_version={PROTOCOL_VERSION}",
        f"ciphertext_version={CIPHERTEXT_VERSION}",
        f"client_counts={','.join(str(c) for c in grid.client_counts)}",
        f"modes={','.join(m.value for m in grid.modes)}",
        f"repetitions={grid.repetitions}",
        f"base_seed={grid.base_seed}",
        f"rounds={base_cfg.rounds}",
        f"division={base_cfg.division}",
        f"timings_comparable={not grid.parallel}",
    ]
    for level in SecurityLevel:
        ring = level.params.ring
        lines.append(f"{level.name}.n={ring.n}")
        lines.append(f"{level.name}.q={ring.q}")
        lines.append(f"{level.name}.q_bits={ring.q.bit_length()}")
        lines.append(f"{level.name}.t={ring.t}")
        lines.append(f"{level.name}.sigma={level.params.sigma}")
    # ciphertext cost grows with n and log2(q), not with the security label
    by_cost = sorted(SecurityLevel, key=lambda lv: (lv.params.ring.n, lv.params.ring.q.bit_length()))
    lines.append("expected_aggregate_order=PLAIN<" + "<".join(lv.name for lv in by_cost))
    for mode in grid.modes:
        if not mode.encrypted:
            continue
        for clients in grid.client_counts:
            encoding = replace(base_cfg, c=clients, mode=mode, partition=None).encoding()
            lines.append(f"{mode.value}.c{clients}.frac_bits={encoding.frac_bits}")
            lines.append(f"{mode.value}.c{clients}.max_abs_value={encoding.max_abs_value:.6f}")
    for key, value in environment_metadata().items():
        lines.append(f"env.{key}={value}")
    for r in reports:
        if r.error:
            lines.append(f"failed.c{r.clients}.{r.mode.value}.rep{r.repetition}={r.error}")
    return "\n".join(lines) + "\n"


@dbg_print
def run_grid(grid: ExperimentGrid, base_cfg: FederationConfig, out_dir: str) -> list[RunReport]:
    """Run every cell, then write the CSV, plot-data and metadata files into *out_dir*."""
    cells = list(grid.cells())
    print(f"[harness] {len(cells)} cells, writing to {out_dir}"
          + (" (parallel, timings not comparable)" if grid.parallel else ""))

    if grid.parallel:
        with ThreadPoolExecutor(max_workers=grid.workers) as pool:
            futures = [pool.submit(run_cell, base_cfg, c, m, rep, grid.base_seed) for c, m, rep in cells]
            reports = [f.result() for f in futures]
    else:
        reports = [run_cell(base_cfg, c, m, rep, grid.base_seed) for c, m, rep in cells]

    os.makedirs(out_dir, exist_ok=True)
    write_rows_to_csv(os.path.join(out_dir, "metrics.csv"), summarize_metrics(reports, grid), METRIC_COLUMNS)
    timing_rows = summarize_timings(reports, grid)
    columns = TIMING_COLUMNS + (["comparable"] if grid.parallel else [])
    write_rows_to_csv(os.path.join(out_dir, "timings.csv"), timing_rows, columns)
    write_plot_data(os.path.join(out_dir, "aggregate_times.dat"), timing_rows, grid)
    if grid.baseline:
        write_rows_to_csv(os.path.join(out_dir, "baseline.csv"), run_baselines(grid, base_cfg), BASELINE_COLUMNS)
    write_text_file(os.path.join(out_dir, "run-meta.txt"), run_meta(grid, base_cfg, reports))

    failed = [r for r in reports if r.error]
    print(f"[harness] done: {len(reports) - len(failed)} ok, {len(failed)} failed")
    return reports
