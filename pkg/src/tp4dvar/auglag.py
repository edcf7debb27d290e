"""Augmented-Lagrangian 4D-Var cost and gradient over the extended control.

The window is split into N sub-intervals; the control is the stack
[x_0..x_N] of boundary states, continuity x_{k+1} = M(x_k) is enforced via
multipliers and a quadratic penalty. Per-sub-interval forward and adjoint
runs are independent and execute on a thread pool (the model kernels
release the GIL); the final reductions are serial in ascending k so the
result is bitwise identical for any worker count.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .covariance import CovarianceOperator, DimensionMismatchError, as_state_vector
from .problem import AssimilationProblem
from .stepper import ModelBlowUpError, TrajectoryCheckpoint, adjoint_product, propagate

_pool_lock = threading.Lock()
_pools: dict[int, ThreadPoolExecutor] = {}


def _parallel_map(fn, items, workers: int):
    """Map preserving order; serial in-line when workers == 1."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with _pool_lock:
        pool = _pools.get(workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=workers)
            _pools[workers] = pool
    return list(pool.map(fn, items))


@dataclass(frozen=True)
class ExtendedControl:
    """Boundary states [x_0..x_N] stacked as an (N+1, n) array."""

    states: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatchError("extended control must be (N+1, n)")
        object.__setattr__(self, "states", arr)

    @classmethod
    def from_boundary_states(cls, states: Sequence[np.ndarray]) -> "ExtendedControl":
        return cls(np.stack([np.asarray(s, dtype=np.float64) for s in states]))

    @classmethod
    def from_flat(cls, flat, n_subintervals: int, n: int) -> "ExtendedControl":
        flat = np.asarray(flat, dtype=np.float64)
        return cls(flat.reshape(n_subintervals + 1, n))

    @property
    def n_subintervals(self) -> int:
        return self.states.shape[0] - 1

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    def flatten(self) -> np.ndarray:
        return self.states.ravel().copy()


@dataclass(frozen=True)
class MultiplierSet:
    """Lagrange multipliers [lambda_1..lambda_N], one per continuity constraint."""

    lambdas: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.lambdas, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatchError("multipliers must be (N, n)")
        object.__setattr__(self, "lambdas", arr)

    @classmethod
    def zeros(cls, n_subintervals: int, n: int) -> "MultiplierSet":
        return cls(np.zeros((n_subintervals, n)))

    @property
    def count(self) -> int:
        return self.lambdas.shape[0]


@dataclass(frozen=True)
class AugLagParams:
    """Penalty weight mu and SPD scalings P_1..P_N for the continuity terms.

    mu = 0 is allowed here (plain Lagrangian); the outer loop enforces a
    strictly positive starting penalty.
    """

    mu: float
    P: tuple[CovarianceOperator, ...]

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("penalty parameter mu must be >= 0")

    @classmethod
    def uniform(cls, mu: float, P_each: CovarianceOperator, n_subintervals: int):
        return cls(mu=mu, P=(P_each,) * n_subintervals)


@dataclass
class MismatchCache:
    """Per-boundary mismatches and forward checkpoints from parallel_cost."""

    control: ExtendedControl
    dx: list[np.ndarray]            # dx[k] = x_{k+1} - M(x_k), k = 0..N-1
    dy: list[np.ndarray]            # dy[k] = H(x_{k+1}) - y_{k+1}
    checkpoints: list[TrajectoryCheckpoint]

    def constraint_violation(self, order=np.inf) -> float:
        return max(float(np.linalg.norm(d, order)) for d in self.dx)


def _check_dims(prob: AssimilationProblem, ctrl: ExtendedControl,
                lam: MultiplierSet, ap: AugLagParams):
    N = prob.n_subintervals
    if ctrl.n_subintervals != N or ctrl.states.shape[1] != prob.n:
        raise DimensionMismatchError("extended control shape does not match problem")
    if lam.count != N or lam.lambdas.shape[1] != prob.n:
        raise DimensionMismatchError("multiplier shape does not match problem")
    if len(ap.P) != N:
        raise DimensionMismatchError("need one penalty scaling per constraint")


def parallel_cost(prob: AssimilationProblem, ctrl: ExtendedControl,
                  lam: MultiplierSet, ap: AugLagParams, workers: int = 1):
    """Augmented-Lagrangian value L(ctrl, lam, mu) and mismatch cache.

    Sub-interval propagations run concurrently; accumulation is serial
    (background term, then ascending k), so the summation order is fixed
    regardless of worker count.
    """
    _check_dims(prob, ctrl, lam, ap)
    N = prob.n_subintervals

    def forward(k):
        try:
            end, ckpt = propagate(prob.model, ctrl.states[k], prob.partition[k])
        except ModelBlowUpError as exc:
            raise ModelBlowUpError(
                exc.step, f"model blow-up on sub-interval {k} at step {exc.step}"
            ) from exc
        dx = ctrl.states[k + 1] - end
        dy = prob.hop.observe(ctrl.states[k + 1]) - prob.obs.values[k]
        return dx, dy, ckpt

    results = _parallel_map(forward, list(range(N)), workers)
    dx = [r[0] for r in results]
    dy = [r[1] for r in results]
    ckpts = [r[2] for r in results]

    # Background first, then ascending k: matches the sequential cost's
    # summation order exactly, so on the continuity manifold (dx == 0) the
    # two costs agree bitwise.
    cost = 0.5 * prob.B0.quad_form_inv(ctrl.states[0] - prob.x_b)
    for k in range(N):
        cost += (
            0.5 * ap.mu * ap.P[k].quad_form_inv(dx[k])
            - float(lam.lambdas[k] @ dx[k])
            + 0.5 * prob.obs.covariances[k].quad_form_inv(dy[k])
        )
    return cost, MismatchCache(control=ctrl, dx=dx, dy=dy, checkpoints=ckpts)


def parallel_gradient(prob: AssimilationProblem, ctrl: ExtendedControl,
                      lam: MultiplierSet, ap: AugLagParams,
                      cache: MismatchCache, workers: int = 1) -> ExtendedControl:
    """Gradient of the augmented Lagrangian, shaped like the control.

    Per boundary k+1: b = mu P^{-1} dx - lambda and d = H^T R^{-1} dy; the
    adjoint transports a_k = M^T b_{k+1} backward over sub-interval k in
    parallel; assembly of the (N+1) gradient blocks is serial.
    """
    _check_dims(prob, ctrl, lam, ap)
    if cache.control is not ctrl and not np.array_equal(cache.control.states, ctrl.states):
        raise ValueError("mismatch cache was not produced at this control point")
    N = prob.n_subintervals

    b = [ap.mu * ap.P[k].apply_inverse(cache.dx[k]) - lam.lambdas[k] for k in range(N)]
    d = [
        prob.hop.observe_adjoint(prob.obs.covariances[k].apply_inverse(cache.dy[k]))
        for k in range(N)
    ]

    def backward(k):
        return adjoint_product(prob.model, cache.checkpoints[k], b[k], prob.partition[k])

    a = _parallel_map(backward, list(range(N)), workers)

    grad = np.empty_like(ctrl.states)
    grad[0] = prob.B0.apply_inverse(ctrl.states[0] - prob.x_b) - a[0]
    for k in range(1, N):
        grad[k] = b[k - 1] + d[k - 1] - a[k]
    grad[N] = b[N - 1] + d[N - 1]
    return ExtendedControl(grad)


def make_auglag_objective(prob: AssimilationProblem, lam: MultiplierSet,
                          ap: AugLagParams, workers: int = 1):
    """Flat-vector objective for the inner minimization; caches the last cache."""
    N, n = prob.n_subintervals, prob.n
    last: dict = {}

    def objective(flat):
        ctrl = ExtendedControl.from_flat(flat, N, n)
        try:
            cost, cache = parallel_cost(prob, ctrl, lam, ap, workers=workers)
            grad = parallel_gradient(prob, ctrl, lam, ap, cache, workers=workers)
        except ModelBlowUpError:
            # Overlong line-search step; report +inf so the search backtracks.
            return np.inf, np.zeros(flat.size)
        flat_grad = grad.flatten()
        if not (np.isfinite(cost) and np.all(np.isfinite(flat_grad))):
            return np.inf, np.zeros(flat.size)
        last["cache"] = cache
        return cost, flat_grad

    objective.last = last
    return objective
