"""Twin-experiment orchestration, RMSE evaluation, and weak-scaling benchmarks.

A twin experiment builds a reference trajectory on the Lorenz-96 attractor,
perturbs it into a background and noisy observations, solves with one of
the three methods (serial, parallel augmented-Lagrangian, hybrid), and
scores the analysis by RMSE against the reference over the window.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .auglag import parallel_cost, parallel_gradient
from .covariance import CovarianceOperator, SeededRng
from .lbfgs import OptimizerConfig, SolveReport
from .models import Lorenz96Params, ModelSpec, linear_model, lorenz96_model
from .observations import (
    ObservationOperator,
    average_magnitude,
    generate_observations,
    reference_trajectory,
)
from .outer import OuterConfig, default_penalty, initialize, solve_auglag, solve_hybrid
from .problem import AssimilationProblem
from .serial import solve_serial
from .stepper import SubInterval, propagate, uniform_partition


@dataclass(frozen=True)
class TwinExperimentSpec:
    """Full description of one twin experiment, replayable from seeds."""

    model_kind: str = "lorenz96"      # "lorenz96" | "linear"
    n: int = 40
    forcing: float = 8.0
    model_seed: int = 0               # linear model only: seeds the system matrix
    n_subintervals: int = 6
    subinterval_length: float = 0.1
    steps_per_subinterval: int = 2
    spinup_steps: int = 200
    spinup_dt: float = 0.05
    obs_noise_pct: float = 0.05
    background_noise_pct: float = 0.08
    obs_seed: int = 7
    background_seed: int = 99
    obs_indices: tuple[int, ...] | None = None
    method: str = "serial"            # "serial" | "parallel" | "hybrid"
    n_parallel_outer: int = 2
    workers: int = 1
    outer: OuterConfig = field(default_factory=OuterConfig)
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(grad_tol=1e-7, max_iters=1000)
    )

    def __post_init__(self):
        if self.n_subintervals < 1:
            raise ValueError("n_subintervals must be >= 1")
        if self.obs_noise_pct < 0 or self.background_noise_pct < 0:
            raise ValueError("noise percentages must be >= 0")
        if self.method not in ("serial", "parallel", "hybrid"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.model_kind not in ("lorenz96", "linear"):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")


@dataclass
class ExperimentReport:
    spec: TwinExperimentSpec
    reference_x0: np.ndarray
    background_x0: np.ndarray
    analysis_x0: np.ndarray
    rmse_background: float
    rmse_analysis: float
    solve: SolveReport
    problem: AssimilationProblem
    wall_time: float


@dataclass
class ScalingRow:
    n_subintervals: int
    workers: int
    cost_eval_s: float
    grad_eval_s: float
    solve_s: float
    oversubscribed: bool


@dataclass
class ScalingResult:
    rows: list[ScalingRow]
    machine_cores: int

    def ratios(self):
        """(k, t_k/t_1) pairs for cost and gradient timings."""
        base_c = self.rows[0].cost_eval_s
        base_g = self.rows[0].grad_eval_s
        return [
            (r.n_subintervals, r.cost_eval_s / base_c, r.grad_eval_s / base_g)
            for r in self.rows
        ]


def make_reference_initial_condition(
    p: Lorenz96Params, spinup_steps: int = 200, h: float = 0.05
) -> np.ndarray:
    """Spin onto the attractor from equidistant components in [-2, 2]."""
    if spinup_steps < 0:
        raise ValueError("spinup_steps must be >= 0")
    x = np.linspace(-2.0, 2.0, p.n)
    if spinup_steps == 0:
        return x
    model = lorenz96_model(p)
    x, _ = propagate(model, x, SubInterval(0.0, spinup_steps * h, spinup_steps))
    return x


def rmse(analysis_traj, reference_traj) -> float:
    """Root mean square error over a sequence of states (Lorenz-96 style)."""
    if len(analysis_traj) != len(reference_traj):
        raise ValueError("trajectory lengths differ")
    if len(analysis_traj) == 0:
        raise ValueError("empty trajectories")
    total = 0.0
    for xa, xr in zip(analysis_traj, reference_traj):
        xa = np.asarray(xa, dtype=np.float64)
        xr = np.asarray(xr, dtype=np.float64)
        if xa.shape != xr.shape:
            raise ValueError("trajectory dimensions differ")
        diff = xa - xr
        total += float(diff @ diff) / xa.size
    return float(np.sqrt(total / len(analysis_traj)))


def build_model(spec: TwinExperimentSpec) -> ModelSpec:
    if spec.model_kind == "lorenz96":
        return lorenz96_model(Lorenz96Params(n=spec.n, forcing=spec.forcing))
    # Seeded stable linear system: random coupling plus uniform decay.
    gen = SeededRng(spec.model_seed).generator()
    A = gen.standard_normal((spec.n, spec.n)) / np.sqrt(spec.n) - 1.2 * np.eye(spec.n)
    return linear_model(A)


def build_problem(spec: TwinExperimentSpec):
    """Reference state, background, observations, and the assembled problem."""
    model = build_model(spec)
    window = spec.n_subintervals * spec.subinterval_length
    partition = uniform_partition(0.0, window, spec.n_subintervals, spec.steps_per_subinterval)
    if spec.obs_indices is None:
        hop = ObservationOperator.identity(spec.n)
    else:
        hop = ObservationOperator.selection(spec.n, spec.obs_indices)

    if spec.model_kind == "lorenz96":
        ref0 = make_reference_initial_condition(
            Lorenz96Params(n=spec.n, forcing=spec.forcing), spec.spinup_steps, spec.spinup_dt
        )
    else:
        ref0 = np.linspace(-2.0, 2.0, spec.n)

    refs = reference_trajectory(model, ref0, partition)
    avg = average_magnitude(refs)
    obs = generate_observations(model, ref0, partition, hop, spec.obs_noise_pct, SeededRng(spec.obs_seed))

    sigma_b = spec.background_noise_pct * avg
    B0 = CovarianceOperator.scaled_identity(spec.n, sigma_b**2 if sigma_b > 0 else 1.0)
    if sigma_b > 0:
        x_b = B0.sample_gaussian(ref0, SeededRng(spec.background_seed))
    else:
        x_b = ref0.copy()

    prob = AssimilationProblem(model=model, partition=partition, hop=hop, obs=obs, x_b=x_b, B0=B0)
    return prob, ref0, refs


def _solve(spec: TwinExperimentSpec, prob: AssimilationProblem) -> SolveReport:
    outer_cfg = replace(spec.outer, inner=spec.optimizer, workers=spec.workers)
    if spec.method == "serial":
        return solve_serial(prob, spec.optimizer)
    if spec.method == "parallel":
        return solve_auglag(prob, outer_cfg)
    return solve_hybrid(prob, outer_cfg, n_parallel_outer=spec.n_parallel_outer)


def run_twin_experiment(spec: TwinExperimentSpec) -> ExperimentReport:
    t0 = time.perf_counter()
    prob, ref0, refs = build_problem(spec)
    solve = _solve(spec, prob)

    analysis_traj = reference_trajectory(prob.model, solve.x_final, prob.partition)
    background_traj = reference_trajectory(prob.model, prob.x_b, prob.partition)
    rmse_a = rmse(analysis_traj[1:], refs[1:])
    rmse_b = rmse(background_traj[1:], refs[1:])

    return ExperimentReport(
        spec=spec,
        reference_x0=ref0,
        background_x0=prob.x_b,
        analysis_x0=solve.x_final,
        rmse_background=rmse_b,
        rmse_analysis=rmse_a,
        solve=solve,
        problem=prob,
        wall_time=time.perf_counter() - t0,
    )


def run_weak_scaling(
    base_spec: TwinExperimentSpec,
    k_list,
    workers_policy: str = "equal-to-k",
    repetitions: int = 5,
    solve_outer_iterations: int = 2,
) -> ScalingResult:
    """Time one parallel cost and one parallel gradient evaluation per k.

    The window grows with k (weak scaling: one observation per sub-interval,
    constant work per worker). Timings are means over ``repetitions`` after
    one discarded warm-up evaluation.
    """
    if workers_policy not in ("equal-to-k", "fixed"):
        raise ValueError(f"unknown workers_policy {workers_policy!r}")
    cores = os.cpu_count() or 1
    rows = []
    for k in k_list:
        if k < 1:
            raise ValueError("sub-interval counts must be >= 1")
        workers = k if workers_policy == "equal-to-k" else 1
        spec = replace(base_spec, n_subintervals=k, workers=workers, method="parallel")
        prob, _, _ = build_problem(spec)
        ctrl, lam = initialize(prob)
        ap = default_penalty(prob, spec.outer.mu0, spec.outer.penalty_kind)

        for _ in range(3):  # warm-up: JIT specialization, caches, thread pool
            _, cache = parallel_cost(prob, ctrl, lam, ap, workers=workers)
            parallel_gradient(prob, ctrl, lam, ap, cache, workers=workers)

        cost_times, grad_times = [], []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            _, cache = parallel_cost(prob, ctrl, lam, ap, workers=workers)
            cost_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            parallel_gradient(prob, ctrl, lam, ap, cache, workers=workers)
            grad_times.append(time.perf_counter() - t0)

        outer_cfg = replace(
            spec.outer, inner=spec.optimizer, workers=workers, max_outer=solve_outer_iterations
        )
        t0 = time.perf_counter()
        solve_auglag(prob, outer_cfg)
        solve_s = time.perf_counter() - t0

        rows.append(
            ScalingRow(
                n_subintervals=k,
                workers=workers,
                cost_eval_s=float(np.mean(cost_times)),
                grad_eval_s=float(np.mean(grad_times)),
                solve_s=solve_s,
                oversubscribed=workers > cores,
            )
        )
    return ScalingResult(rows=rows, machine_cores=cores)
