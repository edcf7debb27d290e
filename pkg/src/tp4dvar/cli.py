"""Command-line entry point: run experiments, check gradients, bench scaling.

Configs are single YAML documents validated against a strict key whitelist
before any compute. Artifacts (CSV + JSON) are written atomically and use
17-significant-digit floats so they round-trip exactly.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile

import numpy as np
import yaml

from .auglag import AugLagParams, ExtendedControl, MultiplierSet, parallel_cost, parallel_gradient
from .covariance import SeededRng
from .harness import TwinExperimentSpec, build_problem, run_twin_experiment, run_weak_scaling
from .lbfgs import OptimizerConfig
from .outer import OuterConfig, default_penalty, initialize
from .serial import serial_cost, serial_gradient
from .stepper import ModelBlowUpError, propagate


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


FMT = "%.17g"

_EXPERIMENT_KEYS = {
    "model_kind", "n", "forcing", "model_seed", "n_subintervals",
    "subinterval_length", "steps_per_subinterval", "spinup_steps", "spinup_dt",
    "obs_noise_pct", "background_noise_pct", "obs_seed", "background_seed",
    "obs_indices", "method", "n_parallel_outer", "workers",
}
_OUTER_KEYS = {
    "mu0", "rho", "max_outer", "constraint_tol", "update_scheme",
    "scale_update_by_P", "penalty_kind", "inner_tol_rel0", "inner_tol_shrink",
    "inner_tol_floor", "restart_accel_on_mu_change",
}
_OPTIMIZER_KEYS = {"memory", "grad_tol", "grad_tol_rel", "max_iters", "max_evals", "c1", "c2"}
_DEBUG_KEYS = {"corrupt_gradient"}
_TOP_KEYS = {"experiment", "outer", "optimizer", "output_dir", "debug"}


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    return raw


def apply_overrides(cfg: dict, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} does not address a mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return cfg


def build_spec(cfg: dict) -> tuple[TwinExperimentSpec, str, dict]:
    """Validate the config document and build the experiment spec."""
    _check_keys(cfg, _TOP_KEYS, "top level")
    exp = dict(cfg.get("experiment") or {})
    out = dict(cfg.get("outer") or {})
    opt = dict(cfg.get("optimizer") or {})
    dbg = dict(cfg.get("debug") or {})
    _check_keys(exp, _EXPERIMENT_KEYS, "experiment")
    _check_keys(out, _OUTER_KEYS, "outer")
    _check_keys(opt, _OPTIMIZER_KEYS, "optimizer")
    _check_keys(dbg, _DEBUG_KEYS, "debug")
    if "obs_indices" in exp and exp["obs_indices"] is not None:
        exp["obs_indices"] = tuple(int(i) for i in exp["obs_indices"])
    try:
        outer_cfg = OuterConfig(**out)
        optimizer_cfg = OptimizerConfig(**opt)
        spec = TwinExperimentSpec(outer=outer_cfg, optimizer=optimizer_cfg, **exp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    output_dir = cfg.get("output_dir", "results")
    return spec, output_dir, dbg


def resolved_config(spec: TwinExperimentSpec, output_dir: str, debug: dict) -> dict:
    """Fully-resolved config document; reusable as an input config verbatim."""
    exp = dataclasses.asdict(spec)
    outer = exp.pop("outer")
    outer.pop("inner")
    outer.pop("workers")
    optimizer = exp.pop("optimizer")
    if exp["obs_indices"] is not None:
        exp["obs_indices"] = list(exp["obs_indices"])
    return {
        "experiment": exp,
        "outer": outer,
        "optimizer": optimizer,
        "output_dir": output_dir,
        "debug": {"corrupt_gradient": bool(debug.get("corrupt_gradient", False))},
    }


def atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-artifact-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    def cell(v):
        if isinstance(v, float):
            return FMT % v
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_trajectory_csv(path: str, partition, states):
    n = states[0].size
    header = ["boundary", "time"] + [f"x{i}" for i in range(n)]
    times = [partition[0].t_start] + [iv.t_end for iv in partition]
    rows = [[k, float(times[k])] + [float(v) for v in s] for k, s in enumerate(states)]
    atomic_write(path, _csv(header, rows))


def write_convergence_csv(path: str, trace):
    header = ["iter", "phase", "cost", "grad_norm", "constraint_violation",
              "cost_evals", "grad_evals", "elapsed_s"]
    rows = [
        [i, r.phase, float(r.f), float(r.grad_norm), float(r.constraint_violation),
         r.cost_evals, r.grad_evals, float(r.elapsed)]
        for i, r in enumerate(trace)
    ]
    atomic_write(path, _csv(header, rows))


def write_iterates_csv(path: str, prob, controls):
    """Per-outer sub-interval trajectory segments (discontinuous at boundaries)."""
    n = prob.n
    header = ["outer", "subinterval", "step", "time"] + [f"x{i}" for i in range(n)]
    rows = []
    for outer, ctrl in enumerate(controls):
        for k, iv in enumerate(prob.partition):
            _, ckpt = propagate(prob.model, ctrl.states[k], iv)
            for j, state in enumerate(ckpt.states):
                rows.append(
                    [outer, k, j, float(iv.t_start + j * iv.h)] + [float(v) for v in state]
                )
    atomic_write(path, _csv(header, rows))


def write_report_json(path: str, payload: dict):
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _report_payload(spec, output_dir, debug, report) -> dict:
    solve = report.solve
    payload = {
        "config": resolved_config(spec, output_dir, debug),
        "method": spec.method,
        "seeds": {"obs_seed": spec.obs_seed, "background_seed": spec.background_seed},
        "rmse_background": report.rmse_background,
        "rmse_analysis": report.rmse_analysis,
        "iterations": solve.iterations,
        "cost_evals": solve.cost_evals,
        "grad_evals": solve.grad_evals,
        "termination_reason": solve.termination_reason,
        "timing": {
            "experiment_wall_s": report.wall_time,
            "solve_wall_s": solve.wall_time,
        },
    }
    if "outer_trace" in solve.extras:
        payload["outer"] = [
            {
                "outer": r.outer,
                "mu": r.mu,
                "inner_iterations": r.inner_iterations,
                "cost": r.cost,
                "grad_norm": r.grad_norm,
                "constraint_violation_inf": r.violation_inf,
                "constraint_violation_2": r.violation_2,
            }
            for r in solve.extras["outer_trace"]
        ]
    if "phase_boundary_iteration" in solve.extras:
        payload["phase_boundary_iteration"] = solve.extras["phase_boundary_iteration"]
    return payload


def cmd_run(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    if args.workers is not None:
        cfg.setdefault("experiment", {})["workers"] = args.workers
    if args.seed is not None:
        cfg.setdefault("experiment", {})["obs_seed"] = args.seed
        cfg["experiment"]["background_seed"] = args.seed + 1
    if args.out is not None:
        cfg["output_dir"] = args.out
    spec, output_dir, debug = build_spec(cfg)

    report = run_twin_experiment(spec)
    os.makedirs(output_dir, exist_ok=True)

    analysis_traj = [report.analysis_x0]
    x = report.analysis_x0
    for iv in report.problem.partition:
        x, _ = propagate(report.problem.model, x, iv)
        analysis_traj.append(x)
    write_trajectory_csv(
        os.path.join(output_dir, "analysis_trajectory.csv"),
        report.problem.partition,
        analysis_traj,
    )
    write_convergence_csv(os.path.join(output_dir, "convergence.csv"), report.solve.trace)

    controls = report.solve.extras.get("outer_controls")
    if controls is None and "parallel_report" in report.solve.extras:
        controls = report.solve.extras["parallel_report"].extras.get("outer_controls")
    if controls:
        write_iterates_csv(os.path.join(output_dir, "iterates.csv"), report.problem, controls)

    write_report_json(
        os.path.join(output_dir, "report.json"),
        _report_payload(spec, output_dir, debug, report),
    )
    print(
        f"method={spec.method} rmse_background={report.rmse_background:.6g} "
        f"rmse_analysis={report.rmse_analysis:.6g} "
        f"cost_evals={report.solve.cost_evals} grad_evals={report.solve.grad_evals}"
    )
    return 0


def _direction_errors(value_fn, grad, x, directions, eps=1e-6):
    errs = []
    for d in directions:
        fp = value_fn(x + eps * d)
        fm = value_fn(x - eps * d)
        fd = (fp - fm) / (2.0 * eps)
        dd = float(grad @ d)
        scale = max(abs(fd), abs(dd), 1e-300)
        errs.append(abs(fd - dd) / scale)
    return errs


def cmd_gradient_check(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    spec, _, debug = build_spec(cfg)
    corrupt = bool(debug.get("corrupt_gradient", False)) or args.corrupt_gradient
    prob, _, _ = build_problem(spec)
    gen = SeededRng(2024).generator()
    n_dirs = 20

    # Serial 4D-Var gradient vs central finite differences of the cost.
    x0 = prob.x_b
    cost0, ckpts = serial_cost(prob, x0)
    grad = serial_gradient(prob, x0, ckpts)
    if corrupt:
        grad = grad * (1.0 + 1e-3)
    dirs = [d / np.linalg.norm(d) for d in gen.standard_normal((n_dirs, prob.n))]
    serial_errs = _direction_errors(lambda x: serial_cost(prob, x)[0], grad, x0, dirs)

    # Augmented-Lagrangian gradient at a perturbed (off-manifold) control.
    ctrl0, _ = initialize(prob)
    ctrl = ExtendedControl(ctrl0.states + 0.01 * gen.standard_normal(ctrl0.states.shape))
    lam = MultiplierSet(gen.standard_normal((prob.n_subintervals, prob.n)))
    ap = default_penalty(prob, spec.outer.mu0, spec.outer.penalty_kind)

    def al_value(flat):
        c = ExtendedControl.from_flat(flat, prob.n_subintervals, prob.n)
        return parallel_cost(prob, c, lam, ap)[0]

    _, cache = parallel_cost(prob, ctrl, lam, ap)
    al_grad = parallel_gradient(prob, ctrl, lam, ap, cache).flatten()
    if corrupt:
        al_grad = al_grad * (1.0 + 1e-3)
    size = al_grad.size
    dirs = [d / np.linalg.norm(d) for d in gen.standard_normal((n_dirs, size))]
    al_errs = _direction_errors(al_value, al_grad, ctrl.flatten(), dirs)

    max_serial = max(serial_errs)
    max_al = max(al_errs)
    overall = max(max_serial, max_al)
    print(f"serial gradient max relative error:    {max_serial:.3e}")
    print(f"auglag gradient max relative error:    {max_al:.3e}")
    print(f"overall max relative error:            {overall:.3e}")
    if overall > 1e-5:
        worst_suite = "serial" if max_serial >= max_al else "auglag"
        errs = serial_errs if worst_suite == "serial" else al_errs
        print(
            f"FAIL: {worst_suite} direction {int(np.argmax(errs))} "
            f"exceeds tolerance 1e-5",
            file=sys.stderr,
        )
        return 2
    return 0


def cmd_bench_scaling(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    if args.out is not None:
        cfg["output_dir"] = args.out
    spec, output_dir, _ = build_spec(cfg)
    k_list = [int(k) for k in args.k_list.split(",")]
    if any(k < 1 for k in k_list):
        raise ConfigError("sub-interval counts must be >= 1")
    result = run_weak_scaling(spec, k_list, workers_policy=args.workers_policy)
    header = ["k", "workers", "cost_eval_ms", "grad_eval_ms", "solve_s"]
    rows = [
        [r.n_subintervals, r.workers, r.cost_eval_s * 1e3, r.grad_eval_s * 1e3, r.solve_s]
        for r in result.rows
    ]
    os.makedirs(output_dir, exist_ok=True)
    atomic_write(os.path.join(output_dir, "scaling.csv"), _csv(header, rows))
    base = result.rows[0]
    for r in result.rows:
        print(
            f"k={r.n_subintervals} workers={r.workers} "
            f"cost={r.cost_eval_s*1e3:.3f}ms (ratio {r.cost_eval_s/base.cost_eval_s:.2f}) "
            f"grad={r.grad_eval_s*1e3:.3f}ms (ratio {r.grad_eval_s/base.grad_eval_s:.2f})"
        )
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tp4dvar",
        description="Serial, time-parallel, and hybrid strong-constraint 4D-Var on Lorenz-96",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML config path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")

    p_run = sub.add_parser("run", help="run a twin experiment and write artifacts")
    common(p_run)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override obs seed (background seed becomes seed+1)")

    p_gc = sub.add_parser("gradient-check", help="adjoint-vs-finite-difference check")
    common(p_gc)
    p_gc.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    p_bench = sub.add_parser("bench-scaling", help="weak-scaling benchmark")
    common(p_bench)
    p_bench.add_argument("--k-list", default="1,2,4", help="comma-separated sub-interval counts")
    p_bench.add_argument("--workers-policy", choices=["equal-to-k", "fixed"],
                         default="equal-to-k")
    p_bench.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "gradient-check": cmd_gradient_check,
        "bench-scaling": cmd_bench_scaling,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ModelBlowUpError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
