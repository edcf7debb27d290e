"""Limited-memory BFGS with a strong-Wolfe line search.

Used for both the serial 4D-Var minimization and the inner solves of the
augmented-Lagrangian outer loop. The objective callable returns
(value, gradient) and is the unit in which evaluations are counted.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class NonFiniteObjectiveError(RuntimeError):
    """Objective returned a non-finite value or gradient at the start point."""


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    grad_tol: float = 1e-8
    grad_tol_rel: float = 0.0
    max_iters: int = 500
    max_evals: int = 100000
    c1: float = 1e-4
    c2: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.c1 < self.c2 < 1.0):
            raise ValueError("Wolfe constants require 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    f: float
    grad_norm: float
    step: float
    cost_evals: int
    grad_evals: int
    elapsed: float
    phase: str = ""
    constraint_violation: float = float("nan")


@dataclass
class SolveReport:
    x_final: np.ndarray
    f_final: float
    grad_norm_final: float
    iterations: int
    cost_evals: int
    grad_evals: int
    trace: list[IterationRecord]
    wall_time: float
    termination_reason: str
    extras: dict = field(default_factory=dict)


class _Counted:
    """Wraps the objective, counting calls and remembering the best point."""

    def __init__(self, fun):
        self.fun = fun
        self.cost_evals = 0
        self.grad_evals = 0
        self.best_f = np.inf
        self.best_x = None
        self.best_g = None

    def __call__(self, x):
        self.cost_evals += 1
        self.grad_evals += 1
        f, g = self.fun(x)
        f = float(f)
        g = np.asarray(g, dtype=np.float64)
        if np.isfinite(f) and f < self.best_f:
            self.best_f = f
            self.best_x = x.copy()
            self.best_g = g.copy()
        return f, g


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolant on [a, b]; None if degenerate."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0.0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    denom = db - da + 2.0 * d2
    if denom == 0.0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


def _zoom(phi, lo, hi, phi0, dphi0, c1, c2, max_iter=30):
    a_lo, f_lo, d_lo = lo
    a_hi, f_hi, d_hi = hi
    for _ in range(max_iter):
        a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
        width = abs(a_hi - a_lo)
        lo_bound = min(a_lo, a_hi) + 0.1 * width
        hi_bound = max(a_lo, a_hi) - 0.1 * width
        if a is None or not (lo_bound <= a <= hi_bound):
            a = 0.5 * (a_lo + a_hi)
        f_a, d_a, aux = phi(a)
        if f_a > phi0 + c1 * a * dphi0 or f_a >= f_lo:
            a_hi, f_hi, d_hi = a, f_a, d_a
        else:
            if abs(d_a) <= -c2 * dphi0:
                return a, f_a, d_a, aux
            if d_a * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
            a_lo, f_lo, d_lo = a, f_a, d_a
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    return None


def _strong_wolfe(counted, x, f0, g0, d, c1, c2, max_expand=25):
    """Strong-Wolfe step along d; returns (alpha, f, g, x_new) or None."""
    dphi0 = float(g0 @ d)
    if dphi0 >= 0.0:
        return None

    def phi(a):
        x_a = x + a * d
        f_a, g_a = counted(x_a)
        return f_a, float(g_a @ d), (x_a, g_a)

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = 1.0
    for i in range(max_expand):
        f_a, d_a, aux = phi(a)
        if not np.isfinite(f_a):
            a = 0.5 * (a_prev + a)
            continue
        if f_a > f0 + c1 * a * dphi0 or (i > 0 and f_a >= f_prev):
            res = _zoom(phi, (a_prev, f_prev, d_prev), (a, f_a, d_a), f0, dphi0, c1, c2)
            break
        if abs(d_a) <= -c2 * dphi0:
            res = (a, f_a, d_a, aux)
            break
        if d_a >= 0.0:
            res = _zoom(phi, (a, f_a, d_a), (a_prev, f_prev, d_prev), f0, dphi0, c1, c2)
            break
        a_prev, f_prev, d_prev = a, f_a, d_a
        a = min(2.0 * a, 1e10)
    else:
        return None
    if res is None:
        return None
    alpha, f_new, _, (x_new, g_new) = res
    return alpha, f_new, g_new, x_new


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    gamma = (s @ y) / (y @ y)
    q *= gamma
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize(fun, x_init, cfg: OptimizerConfig, phase: str = "") -> SolveReport:
    """Minimize fun(x) -> (value, gradient) from x_init.

    Terminates when the gradient inf-norm drops below
    max(grad_tol, grad_tol_rel * ||g_init||_inf), or on iteration/evaluation
    budgets, or on line-search failure (best iterate returned).
    """
    t_start = time.perf_counter()
    counted = _Counted(fun)
    x = np.array(x_init, dtype=np.float64)
    f, g = counted(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFiniteObjectiveError("objective non-finite at the initial point")
    tol = max(cfg.grad_tol, cfg.grad_tol_rel * float(np.abs(g).max()))

    pairs: deque = deque(maxlen=cfg.memory)
    trace: list[IterationRecord] = []
    reason = "max_iters"
    it = 0

    def record(step):
        trace.append(
            IterationRecord(
                iteration=it,
                f=f,
                grad_norm=float(np.abs(g).max()),
                step=step,
                cost_evals=counted.cost_evals,
                grad_evals=counted.grad_evals,
                elapsed=time.perf_counter() - t_start,
                phase=phase,
            )
        )

    record(0.0)
    while it < cfg.max_iters:
        if float(np.abs(g).max()) <= tol:
            reason = "grad_tol"
            break
        if counted.cost_evals >= cfg.max_evals:
            reason = "max_evals"
            break
        d = -_two_loop(g, list(pairs)) if pairs else -g
        result = _strong_wolfe(counted, x, f, g, d, cfg.c1, cfg.c2)
        if result is None and pairs:
            # Stale curvature information; retry with a steepest-descent step.
            pairs.clear()
            result = _strong_wolfe(counted, x, f, g, -g, cfg.c1, cfg.c2)
        if result is None:
            reason = "line_search_failure"
            break
        alpha, f_new, g_new, x_new = result
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        it += 1
        record(alpha)
    else:
        reason = "max_iters"
    if reason == "max_iters" and float(np.abs(g).max()) <= tol:
        reason = "grad_tol"

    if counted.best_f < f:
        x, f, g = counted.best_x, counted.best_f, counted.best_g
    return SolveReport(
        x_final=x,
        f_final=f,
        grad_norm_final=float(np.abs(g).max()),
        iterations=it,
        cost_evals=counted.cost_evals,
        grad_evals=counted.grad_evals,
        trace=trace,
        wall_time=time.perf_counter() - t_start,
        termination_reason=reason,
    )
