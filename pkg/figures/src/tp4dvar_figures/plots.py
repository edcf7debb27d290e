"""Figure builders: each takes a FigureSpec and returns a matplotlib Figure.

All figures embed a provenance line (method, sub-interval count, seed) from
the run's report.json in the title. Builders never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import (
    CONVERGENCE_COLUMNS,
    ITERATES_COLUMNS,
    SCALING_COLUMNS,
    SchemaError,
    config_echo,
    load_report,
    load_table,
    state_columns,
)

KINDS = ("iterates", "errors", "rmse", "scaling", "work-precision")


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    out: str
    variables: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; choose from {KINDS}")
        if not self.inputs:
            raise SchemaError("at least one --input is required")


def _split(inputs, kind):
    """Separate CSV and JSON inputs; each kind expects specific roles."""
    csvs = [p for p in inputs if p.endswith(".csv")]
    jsons = [p for p in inputs if p.endswith(".json")]
    others = [p for p in inputs if not (p.endswith(".csv") or p.endswith(".json"))]
    if others:
        raise SchemaError(f"unsupported input file type: {others[0]} (want .csv/.json)")
    return csvs, jsons


def _require(condition, message):
    if not condition:
        raise SchemaError(message)


def build_iterates(spec: FigureSpec):
    """Per-outer trajectory segments for a few variables; segments are drawn
    separately per sub-interval so boundary discontinuities stay visible."""
    csvs, jsons = _split(spec.inputs, spec.kind)
    _require(len(csvs) == 1, "iterates needs exactly one iterates.csv input")
    _require(len(jsons) == 1, "iterates needs exactly one report.json input")
    table = load_table(csvs[0], ITERATES_COLUMNS)
    report = load_report(jsons[0])
    states = state_columns(table)
    for v in spec.variables:
        _require(0 <= v < len(states), f"variable index {v} out of range (n={len(states)})")

    outers = np.unique(table["outer"]).astype(int)
    subs = np.unique(table["subinterval"]).astype(int)
    cmap = plt.get_cmap("viridis")

    fig, axes = plt.subplots(
        len(spec.variables), 1, figsize=(8, 2.4 * len(spec.variables)), sharex=True
    )
    axes = np.atleast_1d(axes)
    for ax, v in zip(axes, spec.variables):
        col = f"x{v}"
        for outer in outers:
            color = cmap(outer / max(len(outers) - 1, 1))
            for k in subs:
                mask = (table["outer"] == outer) & (table["subinterval"] == k)
                ax.plot(
                    table["time"][mask],
                    table[col][mask],
                    color=color,
                    lw=1.0,
                    label=f"outer {outer}" if k == subs[0] else None,
                )
        ax.set_ylabel(col)
    axes[-1].set_xlabel("time")
    axes[0].legend(loc="upper right", fontsize=7, ncol=2)
    fig.suptitle(f"sub-interval iterates\n{config_echo(report)}", fontsize=10)
    fig.tight_layout()
    return fig


def build_errors(spec: FigureSpec):
    """Optimality and feasibility decay against iteration count."""
    csvs, jsons = _split(spec.inputs, spec.kind)
    _require(len(csvs) == 1, "errors needs exactly one convergence.csv input")
    _require(len(jsons) == 1, "errors needs exactly one report.json input")
    table = load_table(csvs[0], CONVERGENCE_COLUMNS)
    report = load_report(jsons[0])

    it = table["iter"]
    fig, (ax_f, ax_g) = plt.subplots(1, 2, figsize=(10, 4))
    cost = table["cost"]
    shift = cost - cost.min()
    ax_f.semilogy(it, np.maximum(shift, 1e-300) + 1e-16 * max(abs(cost.min()), 1.0),
                  lw=1.2)
    ax_f.set_xlabel("iteration")
    ax_f.set_ylabel("cost − best cost")

    ax_g.semilogy(it, table["grad_norm"], lw=1.2, label="gradient norm")
    viol = table["constraint_violation"]
    finite = np.isfinite(viol)
    if finite.any():
        ax_g.semilogy(it[finite], np.maximum(viol[finite], 1e-300), lw=1.2,
                      label="constraint violation")
    ax_g.set_xlabel("iteration")
    ax_g.legend(fontsize=8)
    fig.suptitle(f"error decay\n{config_echo(report)}", fontsize=10)
    fig.tight_layout()
    return fig


def build_rmse(spec: FigureSpec):
    """Background vs analysis RMSE bars, one group per run/report."""
    csvs, jsons = _split(spec.inputs, spec.kind)
    _require(not csvs, "rmse consumes report.json inputs only")
    _require(len(jsons) >= 1, "rmse needs at least one report.json input")
    reports = [load_report(p) for p in jsons]

    labels = [r["method"] for r in reports]
    bg = [r["rmse_background"] for r in reports]
    ana = [r["rmse_analysis"] for r in reports]
    x = np.arange(len(reports))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, bg, width=0.4, label="background")
    ax.bar(x + 0.2, ana, width=0.4, label="analysis")
    ax.set_xticks(x, labels)
    ax.set_ylabel("RMSE")
    ax.legend()
    echo = config_echo(reports[0])
    fig.suptitle(f"analysis quality\n{echo}", fontsize=10)
    fig.tight_layout()
    return fig


def build_scaling(spec: FigureSpec):
    """Weak-scaling evaluation times per sub-interval count."""
    csvs, jsons = _split(spec.inputs, spec.kind)
    _require(len(csvs) == 1, "scaling needs exactly one scaling.csv input")
    table = load_table(csvs[0], SCALING_COLUMNS)
    echo = config_echo(load_report(jsons[0])) if jsons else ""

    k = table["k"].astype(int)
    x = np.arange(len(k))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, table["cost_eval_ms"], width=0.4, label="cost eval")
    ax.bar(x + 0.2, table["grad_eval_ms"], width=0.4, label="gradient eval")
    ax.set_xticks(x, [f"k={kk}\nw={int(w)}" for kk, w in zip(k, table["workers"])])
    ax.set_ylabel("mean wall time [ms]")
    ax.legend()
    title = "weak scaling" + (f"\n{echo}" if echo else "")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return fig


def build_work_precision(spec: FigureSpec):
    """Cost against cumulative evaluations; hybrid phase switch marked."""
    csvs, jsons = _split(spec.inputs, spec.kind)
    _require(len(csvs) == 1, "work-precision needs exactly one convergence.csv input")
    _require(len(jsons) == 1, "work-precision needs exactly one report.json input")
    table = load_table(csvs[0], CONVERGENCE_COLUMNS)
    report = load_report(jsons[0])

    evals = table["cost_evals"]
    cost = table["cost"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(evals, np.maximum(cost - cost.min(), 1e-300)
                + 1e-16 * max(abs(cost.min()), 1.0), lw=1.2)
    ax.set_xlabel("cumulative cost evaluations")
    ax.set_ylabel("cost − best cost")

    boundary = report.get("phase_boundary_iteration")
    if boundary is not None and 0 <= boundary < len(evals):
        ax.axvline(evals[int(boundary)], color="tab:red", ls="--", lw=1.0,
                   label="phase switch")
        ax.legend(fontsize=8)
    fig.suptitle(f"work–precision\n{config_echo(report)}", fontsize=10)
    fig.tight_layout()
    return fig


_BUILDERS = {
    "iterates": build_iterates,
    "errors": build_errors,
    "rmse": build_rmse,
    "scaling": build_scaling,
    "work-precision": build_work_precision,
}


def build(spec: FigureSpec):
    return _BUILDERS[spec.kind](spec)


def plot(spec: FigureSpec) -> str:
    """Render the figure and write it to spec.out; returns the output path."""
    fig = build(spec)
    try:
        fig.savefig(spec.out, dpi=150)
    finally:
        plt.close(fig)
    return spec.out
