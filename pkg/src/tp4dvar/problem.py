"""The immutable bundle defining one strong-constraint 4D-Var instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceOperator, DimensionMismatchError, as_state_vector
from .models import ModelSpec
from .observations import ObservationOperator, ObservationSet
from .stepper import SubInterval


@dataclass(frozen=True)
class AssimilationProblem:
    """Model, window partition, observations, background, and covariances."""

    model: ModelSpec
    partition: tuple[SubInterval, ...]
    hop: ObservationOperator
    obs: ObservationSet
    x_b: np.ndarray
    B0: CovarianceOperator

    def __post_init__(self):
        n = self.model.n
        object.__setattr__(self, "x_b", as_state_vector(self.x_b, n))
        self.x_b.setflags(write=False)
        if not self.partition:
            raise ValueError("partition must contain at least one sub-interval")
        for prev, nxt in zip(self.partition, self.partition[1:]):
            if prev.t_end != nxt.t_start:
                raise ValueError("partition sub-intervals must be contiguous and ordered")
        if self.obs.count != len(self.partition):
            raise DimensionMismatchError(
                "need exactly one observation per sub-interval boundary t_1..t_N"
            )
        if self.hop.n != n or self.B0.dim != n:
            raise DimensionMismatchError("operator dimensions do not match model state")
        for r in self.obs.covariances:
            if r.dim != self.hop.m:
                raise DimensionMismatchError("observation covariance dimension mismatch")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def n_subintervals(self) -> int:
        return len(self.partition)
