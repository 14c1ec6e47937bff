"""Experiment grids: a base scenario, axes to vary, and a seed list.

Matrix files are JSON::

    {
      "schema_version": 1,
      "base": {"horizon": 100, "uncertainty_mode": "interactive"},
      "grid": {"risk_preference": ["neutral", "seeking", "averse"],
               "safety.enabled": [true, false]},
      "seeds": 10
    }

Every combination of grid values is one cell. ``seeds`` is a count (seeds
0..n-1) or an explicit list; ``--seed-offset`` shifts either. An empty grid
has no cells.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, ConfigError, ScenarioConfig, anchored, from_dict, load_json
from .metrics import csv_columns, mean_and_stderr

CURVE_METRICS = ("held_out_error", "runtime_error", "cov_norm", "lambda_sea", "reachable_set", "intervened")
_MATRIX_KEYS = {"schema_version", "base", "grid", "seeds"}


@dataclass(frozen=True)
class Cell:
    cell_id: str
    overrides: tuple  # ((dotted key, value), ...)
    config: ScenarioConfig


@dataclass(frozen=True)
class Matrix:
    base: ScenarioConfig
    cells: tuple
    seeds: tuple

    def with_overrides(self, **overrides) -> "Matrix":
        """Same grid with dotted-key overrides applied to every cell."""
        cells = tuple(Cell(c.cell_id, c.overrides, c.config.replace(**overrides)) for c in self.cells)
        return Matrix(self.base.replace(**overrides), cells, self.seeds)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def cell_id(overrides) -> str:
    if not overrides:
        return "base"
    return "__".join(f"{key}-{_fmt(val)}" for key, val in overrides).replace("/", "_")


def matrix_from_dict(data: dict, seed_offset: int = 0) -> Matrix:
    if not isinstance(data, dict):
        raise ConfigError("matrix config must be a JSON object")
    unknown = set(data) - _MATRIX_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}", key=sorted(unknown)[0])
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported or missing 'schema_version' (expected {SCHEMA_VERSION})", key="schema_version")
    base_data = data.get("base", {})
    if not isinstance(base_data, dict):
        raise ConfigError("'base' must be an object", key="base")
    try:
        base = from_dict({"schema_version": SCHEMA_VERSION, **base_data})
    except ConfigError as exc:
        parts = exc.key.split(".") if isinstance(exc.key, str) else list(exc.key or ())
        raise ConfigError(f"base: {exc.message}", key=("base", *parts)) from None
    grid = data.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("'grid' must map dotted keys to lists of values", key="grid")
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid axis {key!r} must be a non-empty list", key=("grid", key))
    cells = []
    if grid:
        keys = list(grid)
        for combo in itertools.product(*(grid[k] for k in keys)):
            overrides = tuple(zip(keys, combo))
            try:
                config = base.replace(**dict(overrides))
            except ConfigError as exc:
                axis = exc.key if exc.key in grid else keys[0]
                raise ConfigError(f"grid cell {cell_id(overrides)}: {exc.message}", key=("grid", axis)) from None
            cells.append(Cell(cell_id(overrides), overrides, config))
    ids = [c.cell_id for c in cells]
    if len(set(ids)) != len(ids):
        raise ConfigError("grid produces duplicate cell ids", key="grid")
    seeds = data.get("seeds", 1)
    if isinstance(seeds, bool) or not isinstance(seeds, (int, list)):
        raise ConfigError("'seeds' must be a count or a list of integers", key="seeds")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if any(not isinstance(s, int) or isinstance(s, bool) for s in seed_list):
        raise ConfigError("'seeds' must contain integers", key="seeds")
    return Matrix(base, tuple(cells), tuple(s + seed_offset for s in seed_list))


def load_matrix(path, seed_offset: int = 0) -> Matrix:
    data, text = load_json(path)
    try:
        return matrix_from_dict(data, seed_offset)
    except ConfigError as exc:
        raise anchored(exc, text, str(path)) from None


# ---------------------------------------------------------------- running


def _csv_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def records_csv(records) -> str:
    buf = io.StringIO()
    cols = csv_columns()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for rec in records:
        row = rec.row()
        writer.writerow([_csv_value(row[c]) for c in cols])
    return buf.getvalue()


@dataclass
class CellResult:
    cell_id: str
    seeds: list
    series: dict  # seed -> {metric: np.ndarray over k}
    interventions: dict  # seed -> int
    failures: dict  # seed -> message


def run_cell(cell: Cell, seeds, out_dir: Path, model=None) -> CellResult:
    from .sim import simulate

    target = out_dir / cell.cell_id
    target.mkdir(parents=True, exist_ok=True)
    series, interventions, failures = {}, {}, {}
    for seed in seeds:
        try:
            records = simulate(cell.config.replace(seed=seed), model).records
        except Exception as exc:  # one failed episode must not abort the grid
            failures[seed] = f"{type(exc).__name__}: {exc}"
            continue
        (target / f"episode-{seed}.csv").write_text(records_csv(records))
        series[seed] = {m: np.array([float(getattr(r, m)) for r in records]) for m in CURVE_METRICS}
        interventions[seed] = int(sum(r.intervened for r in records))
    return CellResult(cell.cell_id, list(seeds), series, interventions, failures)


def _run_cell_job(args):
    cell, seeds, out_dir = args
    try:
        return run_cell(cell, seeds, Path(out_dir))
    except Exception:
        msg = traceback.format_exc(limit=3)
        return CellResult(cell.cell_id, list(seeds), {}, {}, {s: msg for s in seeds})


def run_matrix(matrix: Matrix, out_dir, jobs: int = 1) -> list[CellResult]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(cell, matrix.seeds, str(out_dir)) for cell in matrix.cells]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_job, args))
    else:
        results = [_run_cell_job(a) for a in args]
    write_curves(results, out_dir / "curves.csv")
    write_summary(results, out_dir / "summary.csv")
    return results


# ---------------------------------------------------------------- aggregates


def write_curves(results, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "metric", "k", "mean", "stderr", "n"])
    for res in results:
        if not res.series:
            continue
        runs = [res.series[s] for s in res.seeds if s in res.series]
        horizon = min(len(r[CURVE_METRICS[0]]) for r in runs)
        for metric in CURVE_METRICS:
            stack = np.array([r[metric][:horizon] for r in runs])
            for k in range(horizon):
                col = stack[:, k]
                col = col[np.isfinite(col)]
                if col.size == 0:
                    continue
                mean, se = mean_and_stderr(col)
                w.writerow([res.cell_id, metric, k, _csv_value(mean), _csv_value(se), col.size])
    Path(path).write_text(buf.getvalue())


def summary_rows(results) -> list[dict]:
    rows = []
    for res in results:
        counts = [res.interventions[s] for s in res.seeds if s in res.interventions]
        finals = [res.series[s]["held_out_error"][-1] for s in res.seeds
                  if s in res.series and len(res.series[s]["held_out_error"])]
        finals = [f for f in finals if math.isfinite(f)]
        iv_mean = float(np.mean(counts)) if counts else math.nan
        iv_sd = float(np.std(counts, ddof=1)) if len(counts) > 1 else (0.0 if counts else math.nan)
        ho_mean, ho_se = mean_and_stderr(finals)
        rows.append({
            "cell": res.cell_id,
            "status": "failed" if res.failures else "ok",
            "episodes": len(counts),
            "failed": len(res.failures),
            "interventions_mean": iv_mean,
            "interventions_sd": iv_sd,
            "final_held_out_mean": ho_mean,
            "final_held_out_stderr": ho_se,
            "failure": "; ".join(f"seed {s}: {m.splitlines()[-1] if m else ''}" for s, m in sorted(res.failures.items())),
        })
    return rows


SUMMARY_COLUMNS = ["cell", "status", "episodes", "failed", "interventions_mean", "interventions_sd",
                   "final_held_out_mean", "final_held_out_stderr", "failure"]


def write_summary(results, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in summary_rows(results):
        w.writerow([_csv_value(row[c]) for c in SUMMARY_COLUMNS])
    Path(path).write_text(buf.getvalue())
