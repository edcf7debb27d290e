"""Method-of-multipliers driver for the time-parallel 4D-Var solver.

Alternates inner L-BFGS minimizations of the augmented Lagrangian with
multiplier and penalty updates (classical or accelerated two-history
scheme), plus the hybrid strategy: a few parallel outer iterations, then
serial 4D-Var from the resulting initial state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .auglag import (
    AugLagParams,
    ExtendedControl,
    MismatchCache,
    MultiplierSet,
    make_auglag_objective,
    parallel_cost,
)
from .covariance import CovarianceOperator
from .lbfgs import OptimizerConfig, SolveReport, minimize
from .observations import reference_trajectory
from .problem import AssimilationProblem
from .serial import solve_serial


@dataclass(frozen=True)
class OuterConfig:
    mu0: float = 0.1
    rho: float = 4.0
    max_outer: int = 12
    constraint_tol: float | None = None  # default 1e-6 * sqrt(n), set at solve time
    inner: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(grad_tol=1e-8))
    update_scheme: str = "classical"
    scale_update_by_P: bool = True
    penalty_kind: str = "b0"  # "b0" | "identity"
    workers: int = 1
    inner_tol_rel0: float = 1e-2
    inner_tol_shrink: float = 0.1
    inner_tol_floor: float = 1e-6
    restart_accel_on_mu_change: bool = False

    def __post_init__(self):
        if self.rho <= 1.0:
            raise ValueError("penalty growth factor requires rho > 1")
        if self.mu0 <= 0.0:
            raise ValueError("mu0 must be > 0")
        if self.update_scheme not in ("classical", "accelerated"):
            raise ValueError(f"unknown update_scheme {self.update_scheme!r}")
        if self.penalty_kind not in ("b0", "identity"):
            raise ValueError(f"unknown penalty_kind {self.penalty_kind!r}")


@dataclass
class OuterRecord:
    outer: int
    mu: float
    inner_iterations: int
    cost: float
    grad_norm: float
    violation_inf: float
    violation_2: float
    dist_to_reference: float
    cost_evals: int
    grad_evals: int
    elapsed: float


@dataclass
class AccelState:
    """History for the accelerated multiplier update (t sequence + previous tilde)."""

    t: float = 1.0
    lam_tilde: MultiplierSet | None = None


def default_penalty(prob: AssimilationProblem, mu: float, kind: str = "b0") -> AugLagParams:
    """Penalty scalings P_k: the background covariance per boundary, or identity."""
    if kind == "b0":
        P_each = prob.B0
    else:
        P_each = CovarianceOperator.identity(prob.n)
    return AugLagParams.uniform(mu, P_each, prob.n_subintervals)


def initialize(prob: AssimilationProblem):
    """Background trajectory as the initial control; zero multipliers."""
    states = reference_trajectory(prob.model, prob.x_b, prob.partition)
    return (
        ExtendedControl.from_boundary_states(states),
        MultiplierSet.zeros(prob.n_subintervals, prob.n),
    )


def classical_update(lam: MultiplierSet, mu: float, cache: MismatchCache,
                     ap: AugLagParams, rho: float, scale_by_P: bool = True):
    """lambda_k <- lambda_k - mu S_k dx_k (S_k = P_k^{-1} or I); mu <- rho mu."""
    new = np.empty_like(lam.lambdas)
    for k in range(lam.count):
        step = ap.P[k].apply_inverse(cache.dx[k]) if scale_by_P else cache.dx[k]
        new[k] = lam.lambdas[k] - mu * step
    return MultiplierSet(new), rho * mu

def accelerated_update(state: AccelState, lam_tilde_new: MultiplierSet,
                       lam_prev: MultiplierSet):
    """Two-history momentum combination of multiplier iterates.

    Falls back to the plain update on the first call (no stored history).
    Returns (new multipliers, advanced state).
    """
    t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.t * state.t))
    if state.lam_tilde is None:
        return lam_tilde_new, AccelState(t=t_next, lam_tilde=lam_tilde_new)
    lt_new = lam_tilde_new.lambdas
    lt_old = state.lam_tilde.lambdas
    combined = (
        lt_new
        + ((state.t - 1.0) / t_next) * (lt_new - lt_old)
        + (state.t / t_next) * (lt_new - lam_prev.lambdas)
    )
    return MultiplierSet(combined), AccelState(t=t_next, lam_tilde=lam_tilde_new)


def _resolve_constraint_tol(cfg: OuterConfig, n: int) -> float:
    return cfg.constraint_tol if cfg.constraint_tol is not None else 1e-6 * math.sqrt(n)


def solve_auglag(prob: AssimilationProblem, cfg: OuterConfig,
                 reference_x0=None) -> SolveReport:
    """Run the full method-of-multipliers loop; analysis is x_0 of the final control."""
    t_start = time.perf_counter()
    n, N = prob.n, prob.n_subintervals
    tol = _resolve_constraint_tol(cfg, n)

    ctrl, lam = initialize(prob)
    mu = cfg.mu0
    accel = AccelState()
    outer_trace: list[OuterRecord] = []
    outer_controls: list[ExtendedControl] = []
    inner_trace = []
    cost_evals = grad_evals = 0
    total_inner = 0
    last_report = None
    reason = "max_outer"
    consecutive_failures = 0

    for outer in range(cfg.max_outer):
        ap = default_penalty(prob, mu, cfg.penalty_kind)
        rel = max(cfg.inner_tol_rel0 * cfg.inner_tol_shrink**outer, cfg.inner_tol_floor)
        inner_cfg = replace(cfg.inner, grad_tol_rel=rel)
        objective = make_auglag_objective(prob, lam, ap, workers=cfg.workers)

        report = minimize(objective, ctrl.flatten(), inner_cfg, phase=f"parallel-outer-{outer}")
        ctrl = ExtendedControl.from_flat(report.x_final, N, n)
        cost_evals += report.cost_evals
        grad_evals += report.grad_evals
        total_inner += report.iterations
        last_report = report

        for rec in report.trace:
            rec.cost_evals += cost_evals - report.cost_evals
            rec.grad_evals += grad_evals - report.grad_evals
        inner_trace.extend(report.trace)

        cache = objective.last.get("cache")
        if cache is None or not np.array_equal(cache.control.states, ctrl.states):
            _, cache = parallel_cost(prob, ctrl, lam, ap, workers=cfg.workers)
            cost_evals += 1
        viol_inf = cache.constraint_violation(np.inf)
        viol_2 = cache.constraint_violation(2)
        for rec in report.trace:
            rec.constraint_violation = viol_inf

        outer_controls.append(ExtendedControl(ctrl.states.copy()))
        dist = (
            float(np.abs(ctrl.x0 - reference_x0).max())
            if reference_x0 is not None
            else float("nan")
        )
        outer_trace.append(
            OuterRecord(
                outer=outer,
                mu=mu,
                inner_iterations=report.iterations,
                cost=report.f_final,
                grad_norm=report.grad_norm_final,
                violation_inf=viol_inf,
                violation_2=viol_2,
                dist_to_reference=dist,
                cost_evals=cost_evals,
                grad_evals=grad_evals,
                elapsed=time.perf_counter() - t_start,
            )
        )

        if report.termination_reason == "line_search_failure" and report.iterations == 0:
            consecutive_failures += 1
            if consecutive_failures >= 2:
                reason = "inner_solver_failure"
                break
        else:
            consecutive_failures = 0

        if viol_inf <= tol:
            reason = "constraint_tol"
            break

        lam_tilde, mu_new = classical_update(
            lam, mu, cache, ap, cfg.rho, scale_by_P=cfg.scale_update_by_P
        )
        if cfg.update_scheme == "accelerated":
            if cfg.restart_accel_on_mu_change:
                # Reset the momentum sequence; keep the last iterate history.
                accel = AccelState(t=1.0, lam_tilde=accel.lam_tilde)
            lam, accel = accelerated_update(accel, lam_tilde, lam)
        else:
            lam = lam_tilde
        mu = mu_new

    return SolveReport(
        x_final=ctrl.x0.copy(),
        f_final=last_report.f_final if last_report else float("nan"),
        grad_norm_final=last_report.grad_norm_final if last_report else float("nan"),
        iterations=total_inner,
        cost_evals=cost_evals,
        grad_evals=grad_evals,
        trace=inner_trace,
        wall_time=time.perf_counter() - t_start,
        termination_reason=reason,
        extras={
            "method": "parallel",
            "outer_trace": outer_trace,
            "outer_controls": outer_controls,
            "final_control": ctrl,
            "final_multipliers": lam,
            "final_mu": mu,
            "final_violation_inf": outer_trace[-1].violation_inf if outer_trace else float("nan"),
        },
    )


def solve_hybrid(prob: AssimilationProblem, cfg: OuterConfig,
                 n_parallel_outer: int = 2) -> SolveReport:
    """Parallel warm-up (a few outer iterations) followed by serial 4D-Var."""
    if n_parallel_outer < 1:
        raise ValueError("n_parallel_outer must be >= 1")
    t_start = time.perf_counter()
    al_cfg = replace(cfg, max_outer=n_parallel_outer)
    al_report = solve_auglag(prob, al_cfg)
    serial_report = solve_serial(prob, cfg.inner, x_init=al_report.x_final)

    trace = list(al_report.trace)
    boundary = len(trace)
    for rec in serial_report.trace:
        rec.phase = "serial"
        rec.cost_evals += al_report.cost_evals
        rec.grad_evals += al_report.grad_evals
        rec.elapsed += al_report.wall_time
    trace.extend(serial_report.trace)

    return SolveReport(
        x_final=serial_report.x_final,
        f_final=serial_report.f_final,
        grad_norm_final=serial_report.grad_norm_final,
        iterations=al_report.iterations + serial_report.iterations,
        cost_evals=al_report.cost_evals + serial_report.cost_evals,
        grad_evals=al_report.grad_evals + serial_report.grad_evals,
        trace=trace,
        wall_time=time.perf_counter() - t_start,
        termination_reason=serial_report.termination_reason,
        extras={
            "method": "hybrid",
            "phase_boundary_iteration": boundary,
            "parallel_report": al_report,
            "serial_report": serial_report,
        },
    )
