"""Dense/diagonal SPD covariance operators and seeded Gaussian sampling.

Covariances (background, observation, and boundary-penalty scalings) are
either diagonal (stored as a variance vector) or dense SPD (Cholesky
factorized once at construction). All operators are immutable after
construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular


class DimensionMismatchError(ValueError):
    """Operand dimensions do not agree."""


class NotSPDError(ValueError):
    """Matrix failed the symmetric positive-definite check."""


def as_state_vector(v, dim=None):
    """Coerce to a 1-D float64 array, checking finiteness and (optionally) length."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SeededRng:
    """Reproducible Gaussian stream.

    Uses numpy's PCG64 bit generator with the ziggurat standard-normal
    transform; the stream is fully determined by ``seed`` so experiments
    replay across runs and platforms.
    """

    seed: int

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, task_index: int) -> "SeededRng":
        """Derived stream for a parallel task (seed offset by task index)."""
        return SeededRng(self.seed + task_index)


@dataclass(frozen=True)
class CovarianceOperator:
    """Symmetric positive-definite weighting matrix.

    ``kind`` is ``"diagonal"`` (``data`` holds variances) or ``"dense"``
    (``data`` holds the full matrix; its lower Cholesky factor is cached).
    """

    kind: str
    data: np.ndarray
    dim: int
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def diagonal(cls, variances) -> "CovarianceOperator":
        var = as_state_vector(variances)
        if np.any(var <= 0.0):
            raise NotSPDError("diagonal covariance requires strictly positive variances")
        var = var.copy()
        var.setflags(write=False)
        return cls(kind="diagonal", data=var, dim=var.size)

    @classmethod
    def dense(cls, matrix, sym_tol: float = 1e-12) -> "CovarianceOperator":
        mat = np.asarray(matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatchError(f"expected square matrix, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("covariance matrix contains non-finite entries")
        scale = max(1.0, float(np.abs(mat).max()))
        if np.abs(mat - mat.T).max() > sym_tol * scale:
            raise NotSPDError("covariance matrix is not symmetric")
        try:
            chol = np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError("covariance matrix is not positive definite") from exc
        mat = mat.copy()
        mat.setflags(write=False)
        chol.setflags(write=False)
        return cls(kind="dense", data=mat, dim=mat.shape[0], _chol=chol)

    @classmethod
    def identity(cls, dim: int) -> "CovarianceOperator":
        return cls.diagonal(np.ones(dim))

    @classmethod
    def scaled_identity(cls, dim: int, variance: float) -> "CovarianceOperator":
        return cls.diagonal(np.full(dim, float(variance)))

    # -- matrix action ----------------------------------------------------

    def apply(self, v) -> np.ndarray:
        v = as_state_vector(v, self.dim)
        if self.kind == "diagonal":
            return self.data * v
        return self.data @ v

    def apply_inverse(self, v) -> np.ndarray:
        """Solve C w = v."""
        v = as_state_vector(v, self.dim)
        if self.kind == "diagonal":
            return v / self.data
        return cho_solve((self._chol, True), v)

    def quad_form_inv(self, v) -> float:
        """v^T C^{-1} v, computed through the factorization (always >= 0)."""
        v = as_state_vector(v, self.dim)
        # Huge-but-finite inputs (optimizer overshoot) may overflow to +inf;
        # that is a valid "infinitely bad" quadratic form, not an error.
        with np.errstate(over="ignore"):
            if self.kind == "diagonal":
                return float(np.sum(v * v / self.data))
            z = solve_triangular(self._chol, v, lower=True)
            return float(z @ z)

    def sqrt_apply(self, z) -> np.ndarray:
        """L z with C = L L^T (diagonal: componentwise standard deviations)."""
        z = as_state_vector(z, self.dim)
        if self.kind == "diagonal":
            return np.sqrt(self.data) * z
        return self._chol @ z

    def sample_gaussian(self, mean, rng: SeededRng) -> np.ndarray:
        """Draw mean + L z with z standard normal from the seeded stream."""
        mean = as_state_vector(mean, self.dim)
        z = rng.generator().standard_normal(self.dim)
        return mean + self.sqrt_apply(z)


def quad_form_inv(cov: CovarianceOperator, v) -> float:
    return cov.quad_form_inv(v)


def apply_inverse(cov: CovarianceOperator, v) -> np.ndarray:
    return cov.apply_inverse(v)


def sample_gaussian(mean, cov: CovarianceOperator, rng: SeededRng) -> np.ndarray:
    return cov.sample_gaussian(mean, rng)
