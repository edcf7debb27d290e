#!/usr/bin/env python3
"""Run the serial, time-parallel, and hybrid solvers on the same twin
experiment and print a side-by-side summary table."""

import argparse
import dataclasses

from tp4dvar.cli import apply_overrides, build_spec, load_config
from tp4dvar.harness import run_twin_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/lorenz96.yaml")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE")
    args = parser.parse_args()

    cfg = apply_overrides(load_config(args.config), args.set)
    base_spec, _, _ = build_spec(cfg)

    rows = []
    for method in ("serial", "parallel", "hybrid"):
        spec = dataclasses.replace(base_spec, method=method)
        report = run_twin_experiment(spec)
        rows.append(
            (
                method,
                report.rmse_background,
                report.rmse_analysis,
                report.solve.iterations,
                report.solve.cost_evals,
                report.solve.grad_evals,
                report.solve.wall_time,
            )
        )

    header = f"{'method':<10}{'rmse_bg':>12}{'rmse_ana':>12}{'iters':>8}{'cost_ev':>9}{'grad_ev':>9}{'wall_s':>9}"
    print(header)
    print("-" * len(header))
    for m, rb, ra, it, ce, ge, w in rows:
        print(f"{m:<10}{rb:>12.6f}{ra:>12.6f}{it:>8d}{ce:>9d}{ge:>9d}{w:>9.2f}")


if __name__ == "__main__":
    main()
