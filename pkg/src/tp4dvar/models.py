"""Continuous-time model right-hand sides with exact Jacobian products.

Ships the Lorenz-96 model (periodic 40-variable chaotic benchmark) and a
linear model dx/dt = A x used as a closed-form oracle. The stencil
Jacobian products are hand-coded, so adjoint identities hold to round-off.

The numba-compiled kernels release the GIL, which is what lets the
time-parallel cost/gradient evaluations scale on a thread pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .covariance import DimensionMismatchError, as_state_vector


@njit(cache=True, nogil=True)
def _l96_rhs(x, params):
    n = x.size
    F = params[0]
    out = np.empty(n)
    for k in range(n):
        out[k] = x[(k - 1) % n] * (x[(k + 1) % n] - x[(k - 2) % n]) - x[k] + F
    return out


@njit(cache=True, nogil=True)
def _l96_jvp(x, v, params):
    # d/dx_k: row k touches columns k-2, k-1, k, k+1
    n = x.size
    out = np.empty(n)
    for k in range(n):
        km1 = (k - 1) % n
        km2 = (k - 2) % n
        kp1 = (k + 1) % n
        out[k] = (
            v[km1] * (x[kp1] - x[km2])
            + x[km1] * (v[kp1] - v[km2])
            - v[k]
        )
    return out


@njit(cache=True, nogil=True)
def _l96_vjp(x, w, params):
    n = x.size
    out = np.empty(n)
    for j in range(n):
        jm1 = (j - 1) % n
        jm2 = (j - 2) % n
        jp1 = (j + 1) % n
        jp2 = (j + 2) % n
        out[j] = (
            w[jp1] * (x[jp2] - x[jm1])
            + w[jm1] * x[jm2]
            - w[jp2] * x[jp1]
            - w[j]
        )
    return out


@njit(cache=True, nogil=True)
def _linear_rhs(x, params):
    n = x.size
    A = params.reshape((n, n))
    return A @ x


@njit(cache=True, nogil=True)
def _linear_jvp(x, v, params):
    n = x.size
    A = params.reshape((n, n))
    return A @ v


@njit(cache=True, nogil=True)
def _linear_vjp(x, w, params):
    n = x.size
    A = params.reshape((n, n))
    return A.T @ w


@dataclass(frozen=True)
class ModelSpec:
    """A continuous model dx/dt = f(x) with exact J v and J^T w products.

    ``rhs_kernel``/``jvp_kernel``/``vjp_kernel`` are nogil numba functions
    with signatures f(x, params), f(x, v, params), f(x, w, params); they are
    what the RK4 propagation kernels call. ``params`` is the flat constant
    array those kernels close over.
    """

    name: str
    n: int
    params: np.ndarray
    rhs_kernel: Callable = field(compare=False)
    jvp_kernel: Callable = field(compare=False)
    vjp_kernel: Callable = field(compare=False)

    def rhs(self, x) -> np.ndarray:
        x = as_state_vector(x, self.n)
        return self.rhs_kernel(x, self.params)

    def jacobian_product(self, x, v) -> np.ndarray:
        x = as_state_vector(x, self.n)
        v = as_state_vector(v, self.n)
        return self.jvp_kernel(x, v, self.params)

    def jacobian_transpose_product(self, x, w) -> np.ndarray:
        x = as_state_vector(x, self.n)
        w = as_state_vector(w, self.n)
        return self.vjp_kernel(x, w, self.params)


@dataclass(frozen=True)
class Lorenz96Params:
    n: int = 40
    forcing: float = 8.0

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("Lorenz-96 periodic stencil needs n >= 4")


def lorenz96_model(params: Lorenz96Params = Lorenz96Params()) -> ModelSpec:
    p = np.array([params.forcing], dtype=np.float64)
    p.setflags(write=False)
    return ModelSpec(
        name="lorenz96",
        n=params.n,
        params=p,
        rhs_kernel=_l96_rhs,
        jvp_kernel=_l96_jvp,
        vjp_kernel=_l96_vjp,
    )


def linear_model(A) -> ModelSpec:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"expected square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("model matrix contains non-finite entries")
    p = np.ascontiguousarray(A).ravel().copy()
    p.setflags(write=False)
    return ModelSpec(
        name="linear",
        n=A.shape[0],
        params=p,
        rhs_kernel=_linear_rhs,
        jvp_kernel=_linear_jvp,
        vjp_kernel=_linear_vjp,
    )


def lorenz96_rhs(x, params: Lorenz96Params) -> np.ndarray:
    return lorenz96_model(params).rhs(x)


def lorenz96_jacobian_product(x, v, params: Lorenz96Params) -> np.ndarray:
    return lorenz96_model(params).jacobian_product(x, v)


def lorenz96_jacobian_transpose_product(x, w, params: Lorenz96Params) -> np.ndarray:
    return lorenz96_model(params).jacobian_transpose_product(x, w)
