"""Fixed-step RK4 propagation with exact discrete tangent-linear/adjoint.

The sub-interval solution operator M_{k,k+1} is classical RK4 with a fixed
step. Its tangent-linear and adjoint are the exact derivative and exact
transpose of the discrete map (differentiate-the-discretization), built
from stage states stored during the forward pass, so the inner-product
identity <M v, w> = <v, M^T w> holds to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .covariance import DimensionMismatchError, as_state_vector
from .models import ModelSpec


class ModelBlowUpError(RuntimeError):
    """Propagation produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state after RK4 step {step}")


class CheckpointMismatchError(ValueError):
    """Checkpoint does not belong to the given sub-interval."""


@dataclass(frozen=True)
class SubInterval:
    """One piece [t_start, t_end] of the assimilation window."""

    t_start: float
    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("sub-interval requires t_end > t_start")
        if self.steps < 1:
            raise ValueError("sub-interval requires steps >= 1")

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.steps


@dataclass(frozen=True)
class TrajectoryCheckpoint:
    """Forward storage for one sub-interval: step endpoints and RK4 stage states.

    ``states`` has shape (steps+1, n); ``stage_states`` has shape
    (steps, 4, n) holding the four points at which the RHS Jacobian is
    evaluated inside each step.
    """

    states: np.ndarray
    stage_states: np.ndarray
    interval: SubInterval

    def __post_init__(self):
        if self.states.shape[0] != self.interval.steps + 1:
            raise ValueError("checkpoint length inconsistent with interval steps")


@njit(cache=False, nogil=True)
def _rk4_forward(rhs, x0, params, h, steps):
    n = x0.size
    states = np.empty((steps + 1, n))
    stages = np.empty((steps, 4, n))
    states[0] = x0
    for j in range(steps):
        x = states[j]
        a1 = x.copy()
        k1 = rhs(a1, params)
        a2 = x + 0.5 * h * k1
        k2 = rhs(a2, params)
        a3 = x + 0.5 * h * k2
        k3 = rhs(a3, params)
        a4 = x + h * k3
        k4 = rhs(a4, params)
        stages[j, 0] = a1
        stages[j, 1] = a2
        stages[j, 2] = a3
        stages[j, 3] = a4
        states[j + 1] = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return states, stages


@njit(cache=False, nogil=True)
def _rk4_tlm(jvp, stages, params, h, v0):
    steps = stages.shape[0]
    v = v0.copy()
    for j in range(steps):
        a1 = stages[j, 0]
        a2 = stages[j, 1]
        a3 = stages[j, 2]
        a4 = stages[j, 3]
        dk1 = jvp(a1, v, params)
        dk2 = jvp(a2, v + 0.5 * h * dk1, params)
        dk3 = jvp(a3, v + 0.5 * h * dk2, params)
        dk4 = jvp(a4, v + h * dk3, params)
        v = v + (h / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4)
    return v


@njit(cache=False, nogil=True)
def _rk4_adjoint(vjp, stages, params, h, w0):
    # Exact transpose of _rk4_tlm, stage by stage, reversed in time.
    steps = stages.shape[0]
    w = w0.copy()
    for j in range(steps - 1, -1, -1):
        a1 = stages[j, 0]
        a2 = stages[j, 1]
        a3 = stages[j, 2]
        a4 = stages[j, 3]
        g4 = (h / 6.0) * w
        g3 = (h / 3.0) * w + h * vjp(a4, g4, params)
        g2 = (h / 3.0) * w + 0.5 * h * vjp(a3, g3, params)
        g1 = (h / 6.0) * w + 0.5 * h * vjp(a2, g2, params)
        w = (
            w
            + vjp(a1, g1, params)
            + vjp(a2, g2, params)
            + vjp(a3, g3, params)
            + vjp(a4, g4, params)
        )
    return w


def propagate(model: ModelSpec, x, iv: SubInterval):
    """Apply M_{k,k+1} to x; returns (end state, checkpoint)."""
    x = as_state_vector(x, model.n)
    states, stages = _rk4_forward(model.rhs_kernel, x, model.params, iv.h, iv.steps)
    if not np.all(np.isfinite(states)):
        bad = int(np.nonzero(~np.isfinite(states).all(axis=1))[0][0])
        raise ModelBlowUpError(bad)
    ckpt = TrajectoryCheckpoint(states=states, stage_states=stages, interval=iv)
    return states[-1].copy(), ckpt


def _check_ckpt(model: ModelSpec, ckpt: TrajectoryCheckpoint, iv: SubInterval):
    if ckpt.interval != iv:
        raise CheckpointMismatchError(
            f"checkpoint built for {ckpt.interval}, asked to use with {iv}"
        )
    if ckpt.states.shape[1] != model.n:
        raise DimensionMismatchError("checkpoint dimension does not match model")


def tlm_product(model: ModelSpec, ckpt: TrajectoryCheckpoint, v, iv: SubInterval):
    """Exact derivative of the discrete RK4 map applied to v: M v."""
    _check_ckpt(model, ckpt, iv)
    if not np.all(np.isfinite(v)):
        raise ModelBlowUpError(-1, "tangent-linear input is non-finite")
    v = as_state_vector(v, model.n)
    out = _rk4_tlm(model.jvp_kernel, ckpt.stage_states, model.params, iv.h, v)
    if not np.all(np.isfinite(out)):
        raise ModelBlowUpError(-1, "tangent-linear product overflowed to non-finite values")
    return out


def adjoint_product(model: ModelSpec, ckpt: TrajectoryCheckpoint, w, iv: SubInterval):
    """Exact transpose of tlm_product: M^T w."""
    _check_ckpt(model, ckpt, iv)
    if not np.all(np.isfinite(w)):
        raise ModelBlowUpError(-1, "adjoint input is non-finite")
    w = as_state_vector(w, model.n)
    out = _rk4_adjoint(model.vjp_kernel, ckpt.stage_states, model.params, iv.h, w)
    if not np.all(np.isfinite(out)):
        raise ModelBlowUpError(-1, "adjoint product overflowed to non-finite values")
    return out


def uniform_partition(t0: float, t_end: float, n_subintervals: int, steps_per_subinterval: int):
    """Split [t0, t_end] into equal sub-intervals with equal step counts."""
    if n_subintervals < 1:
        raise ValueError("need at least one sub-interval")
    dt = (t_end - t0) / n_subintervals
    return tuple(
        SubInterval(t0 + k * dt, t0 + (k + 1) * dt, steps_per_subinterval)
        for k in range(n_subintervals)
    )
