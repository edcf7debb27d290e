"""Readers for the solver's CSV/JSON artifacts with column-level validation."""

from __future__ import annotations

import csv
import json
import os

import numpy as np


class SchemaError(ValueError):
    """Input artifact does not match its documented schema."""


TRAJECTORY_COLUMNS = ("boundary", "time")
CONVERGENCE_COLUMNS = (
    "iter", "phase", "cost", "grad_norm", "constraint_violation",
    "cost_evals", "grad_evals", "elapsed_s",
)
ITERATES_COLUMNS = ("outer", "subinterval", "step", "time")
SCALING_COLUMNS = ("k", "workers", "cost_eval_ms", "grad_eval_ms", "solve_s")
REPORT_KEYS = ("config", "method", "seeds", "rmse_background", "rmse_analysis")


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    if not os.path.exists(path):
        raise SchemaError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header row)") from None
        rows = [row for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows below the header")
    return header, rows


def load_table(path: str, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Read a CSV artifact into {column: array}; string columns stay strings."""
    header, rows = _read_rows(path)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(
            f"{path}: missing required column(s) {', '.join(repr(c) for c in missing)}; "
            f"found columns {', '.join(repr(c) for c in header)}"
        )
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(
                f"{path}: row {i + 1} has {len(row)} cells, header has {len(header)}"
            )
    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        cells = [row[j] for row in rows]
        try:
            columns[name] = np.array([float(c) for c in cells])
        except ValueError:
            columns[name] = np.array(cells)
    return columns


def state_columns(columns: dict[str, np.ndarray]) -> list[str]:
    """The x0..x{n-1} state columns, in index order."""
    names = [c for c in columns if c.startswith("x") and c[1:].isdigit()]
    if not names:
        raise SchemaError("no state columns x0..x{n-1} found")
    return sorted(names, key=lambda c: int(c[1:]))


def load_report(path: str) -> dict:
    if not os.path.exists(path):
        raise SchemaError(f"input file not found: {path}")
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    missing = [k for k in REPORT_KEYS if k not in payload]
    if missing:
        raise SchemaError(
            f"{path}: missing required key(s) {', '.join(repr(k) for k in missing)}"
        )
    return payload


def config_echo(report: dict) -> str:
    """Provenance line for figure titles: method, sub-interval count, seeds."""
    exp = report["config"]["experiment"]
    seeds = report["seeds"]
    return (
        f"method={report['method']}  N={exp['n_subintervals']}  "
        f"n={exp['n']}  obs_seed={seeds['obs_seed']}"
    )
