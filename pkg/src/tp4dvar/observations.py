"""Observation operators, synthetic observations, and innovations.

Observations live at the sub-interval boundaries t_1..t_N (one vector per
boundary, none at t_0). Synthetic observations for twin experiments add
seeded Gaussian noise with standard deviation equal to a fraction of the
average magnitude of the reference trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .covariance import (
    CovarianceOperator,
    DimensionMismatchError,
    SeededRng,
    as_state_vector,
)
from .models import ModelSpec
from .stepper import SubInterval, propagate


@dataclass(frozen=True)
class ObservationOperator:
    """Linear observation map H: identity or component selection."""

    kind: str
    n: int
    indices: tuple[int, ...] = ()

    @classmethod
    def identity(cls, n: int) -> "ObservationOperator":
        return cls(kind="identity", n=n)

    @classmethod
    def selection(cls, n: int, indices: Sequence[int]) -> "ObservationOperator":
        idx = tuple(int(i) for i in indices)
        if len(set(idx)) != len(idx):
            raise ValueError("selection indices must be distinct")
        if any(i < 0 or i >= n for i in idx):
            raise ValueError("selection indices out of range")
        return cls(kind="selection", n=n, indices=idx)

    @property
    def m(self) -> int:
        return self.n if self.kind == "identity" else len(self.indices)

    def observe(self, x) -> np.ndarray:
        x = as_state_vector(x, self.n)
        if self.kind == "identity":
            return x.copy()
        return x[list(self.indices)]

    def observe_adjoint(self, w) -> np.ndarray:
        """Exact transpose of observe (scatter for selection operators)."""
        w = as_state_vector(w, self.m)
        if self.kind == "identity":
            return w.copy()
        out = np.zeros(self.n)
        out[list(self.indices)] = w
        return out


def observe(hop: ObservationOperator, x) -> np.ndarray:
    return hop.observe(x)


def observe_adjoint(hop: ObservationOperator, w) -> np.ndarray:
    return hop.observe_adjoint(w)


@dataclass(frozen=True)
class ObservationSet:
    """Observations y_1..y_N with their error covariances R_1..R_N."""

    values: tuple[np.ndarray, ...]
    covariances: tuple[CovarianceOperator, ...]

    def __post_init__(self):
        if len(self.values) != len(self.covariances):
            raise DimensionMismatchError("one covariance required per observation")
        for y, r in zip(self.values, self.covariances):
            if y.size != r.dim:
                raise DimensionMismatchError("observation/covariance dimension mismatch")

    @property
    def count(self) -> int:
        return len(self.values)


def reference_trajectory(model: ModelSpec, x0, partition: Sequence[SubInterval]):
    """Boundary states [x_0, x_1, .., x_N] of a serial propagation."""
    states = [as_state_vector(x0, model.n)]
    for iv in partition:
        x_next, _ = propagate(model, states[-1], iv)
        states.append(x_next)
    return states


def average_magnitude(states: Sequence[np.ndarray]) -> float:
    """Mean of |x| over all components and all boundary states."""
    return float(np.mean([np.mean(np.abs(s)) for s in states]))


def generate_observations(
    model: ModelSpec,
    x_ref0,
    partition: Sequence[SubInterval],
    hop: ObservationOperator,
    noise_pct: float,
    rng: SeededRng,
) -> ObservationSet:
    """Twin-experiment observations from the reference trajectory.

    y_k = H(x_k^ref) + eta_k at each boundary t_1..t_N, with eta_k drawn
    from a diagonal R_k whose standard deviation is noise_pct times the
    average magnitude of the reference trajectory.
    """
    if noise_pct < 0:
        raise ValueError("noise_pct must be nonnegative")
    boundary = reference_trajectory(model, x_ref0, partition)
    sigma = noise_pct * average_magnitude(boundary)
    # Unit variance in the noiseless twin keeps R invertible and well scaled.
    variance = sigma * sigma if sigma > 0 else 1.0
    values = []
    covariances = []
    for k, x_k in enumerate(boundary[1:]):
        r_k = CovarianceOperator.scaled_identity(hop.m, variance)
        clean = hop.observe(x_k)
        if sigma > 0:
            y_k = r_k.sample_gaussian(clean, rng.spawn(k))
        else:
            y_k = clean
        y_k.setflags(write=False)
        values.append(y_k)
        covariances.append(r_k)
    return ObservationSet(values=tuple(values), covariances=tuple(covariances))
