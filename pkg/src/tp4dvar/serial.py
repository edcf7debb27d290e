"""Traditional strong-constraint 4D-Var: sequential cost, adjoint gradient.

The cost is the background misfit plus observation misfits along the
single trajectory launched from x_0; the gradient is computed by one
backward adjoint sweep over the stored forward checkpoints.
"""

from __future__ import annotations

import time

import numpy as np

from .covariance import as_state_vector
from .lbfgs import OptimizerConfig, SolveReport, minimize
from .problem import AssimilationProblem
from .stepper import ModelBlowUpError, adjoint_product, propagate


def serial_cost(prob: AssimilationProblem, x0):
    """J(x0) and the per-sub-interval forward checkpoints."""
    x0 = as_state_vector(x0, prob.n)
    cost = 0.5 * prob.B0.quad_form_inv(x0 - prob.x_b)
    checkpoints = []
    x = x0
    for k, iv in enumerate(prob.partition):
        x, ckpt = propagate(prob.model, x, iv)
        checkpoints.append(ckpt)
        innovation = prob.hop.observe(x) - prob.obs.values[k]
        cost += 0.5 * prob.obs.covariances[k].quad_form_inv(innovation)
    return cost, checkpoints


def serial_gradient(prob: AssimilationProblem, x0, checkpoints):
    """grad J(x0) via one backward sweep over the checkpoints."""
    x0 = as_state_vector(x0, prob.n)
    if len(checkpoints) != prob.n_subintervals:
        raise ValueError("checkpoint count does not match the partition")
    if not np.array_equal(checkpoints[0].states[0], x0):
        raise ValueError("checkpoints were not produced at this x0")
    adj = np.zeros(prob.n)
    for k in range(prob.n_subintervals - 1, -1, -1):
        ckpt = checkpoints[k]
        x_k1 = ckpt.states[-1]
        innovation = prob.hop.observe(x_k1) - prob.obs.values[k]
        forcing = prob.hop.observe_adjoint(prob.obs.covariances[k].apply_inverse(innovation))
        adj = adjoint_product(prob.model, ckpt, adj + forcing, prob.partition[k])
    return prob.B0.apply_inverse(x0 - prob.x_b) + adj


def make_serial_objective(prob: AssimilationProblem):
    """Callable x0 -> (J, grad J) sharing one forward sweep."""

    def objective(x0):
        try:
            cost, ckpts = serial_cost(prob, x0)
            grad = serial_gradient(prob, x0, ckpts)
        except ModelBlowUpError:
            # Overlong line-search step; report +inf so the search backtracks.
            return np.inf, np.zeros(prob.n)
        if not (np.isfinite(cost) and np.all(np.isfinite(grad))):
            return np.inf, np.zeros(prob.n)
        return cost, grad

    return objective


def solve_serial(prob: AssimilationProblem, opts: OptimizerConfig, x_init=None) -> SolveReport:
    """Minimize the serial 4D-Var cost with L-BFGS (default start: background)."""
    start = prob.x_b if x_init is None else as_state_vector(x_init, prob.n)
    t0 = time.perf_counter()
    report = minimize(make_serial_objective(prob), start, opts, phase="serial")
    report.wall_time = time.perf_counter() - t0
    report.extras["method"] = "serial"
    return report
