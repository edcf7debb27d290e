import math

import numpy as np
import pytest

from tp4dvar import (
    AugLagParams,
    CovarianceOperator,
    MultiplierSet,
    OptimizerConfig,
    OuterConfig,
    accelerated_update,
    classical_update,
    initialize,
    parallel_cost,
    solve_auglag,
    solve_hybrid,
    solve_serial,
)
from tp4dvar.auglag import ExtendedControl, MismatchCache
from tp4dvar.outer import AccelState, default_penalty


def small_outer_cfg(**kw):
    defaults = dict(
        mu0=0.1,
        rho=4.0,
        max_outer=10,
        inner=OptimizerConfig(grad_tol=1e-9, max_iters=400),
    )
    defaults.update(kw)
    return OuterConfig(**defaults)


class TestConfig:
    def test_rejects_bad_rho(self):
        with pytest.raises(ValueError):
            OuterConfig(rho=1.0)

    def test_rejects_nonpositive_mu0(self):
        with pytest.raises(ValueError):
            OuterConfig(mu0=0.0)

    def test_rejects_unknown_scheme(self):
        with pytest.raises(ValueError):
            OuterConfig(update_scheme="nesterov")
        with pytest.raises(ValueError):
            OuterConfig(penalty_kind="r")


class TestInitialize:
    def test_control_on_manifold_with_zero_multipliers(self, l96_problem):
        ctrl, lam = initialize(l96_problem)
        np.testing.assert_array_equal(ctrl.x0, l96_problem.x_b)
        np.testing.assert_array_equal(lam.lambdas, 0.0)
        ap = default_penalty(l96_problem, 1.0)
        _, cache = parallel_cost(l96_problem, ctrl, lam, ap)
        assert cache.constraint_violation() == 0.0


class TestClassicalUpdate:
    def _cache(self, n, N, seed):
        gen = np.random.default_rng(seed)
        dx = [gen.standard_normal(n) for _ in range(N)]
        return MismatchCache(
            control=ExtendedControl(np.zeros((N + 1, n))),
            dx=dx,
            dy=[np.zeros(n)] * N,
            checkpoints=[None] * N,
        )

    def test_identity_scaling(self):
        cache = self._cache(3, 2, 0)
        lam = MultiplierSet(np.zeros((2, 3)))
        ap = AugLagParams.uniform(5.0, CovarianceOperator.identity(3), 2)
        new, mu_new = classical_update(lam, 5.0, cache, ap, rho=4.0, scale_by_P=False)
        for k in range(2):
            np.testing.assert_allclose(new.lambdas[k], -5.0 * cache.dx[k])
        assert mu_new == 20.0

    def test_penalty_scaling(self):
        cache = self._cache(3, 2, 1)
        lam = MultiplierSet(np.ones((2, 3)))
        P = CovarianceOperator.diagonal([2.0, 4.0, 8.0])
        ap = AugLagParams.uniform(3.0, P, 2)
        new, _ = classical_update(lam, 3.0, cache, ap, rho=2.0, scale_by_P=True)
        for k in range(2):
            np.testing.assert_allclose(
                new.lambdas[k], 1.0 - 3.0 * cache.dx[k] / np.array([2.0, 4.0, 8.0])
            )

    def test_zero_mismatch_is_fixed_point(self):
        N, n = 2, 4
        cache = MismatchCache(
            control=ExtendedControl(np.zeros((N + 1, n))),
            dx=[np.zeros(n)] * N,
            dy=[np.zeros(n)] * N,
            checkpoints=[None] * N,
        )
        lam = MultiplierSet(np.random.default_rng(2).standard_normal((N, n)))
        ap = AugLagParams.uniform(1.0, CovarianceOperator.identity(n), N)
        new, _ = classical_update(lam, 1.0, cache, ap, rho=4.0)
        np.testing.assert_array_equal(new.lambdas, lam.lambdas)


class TestAcceleratedUpdate:
    def test_t_sequence(self):
        state = AccelState()
        lam = MultiplierSet(np.zeros((1, 2)))
        ts = [state.t]
        for _ in range(4):
            _, state = accelerated_update(state, lam, lam)
            ts.append(state.t)
        for a, b in zip(ts, ts[1:]):
            assert b == pytest.approx(0.5 * (1.0 + math.sqrt(1.0 + 4.0 * a * a)))

    def test_first_call_is_plain(self):
        state = AccelState()
        tilde = MultiplierSet(np.array([[1.0, 2.0]]))
        prev = MultiplierSet(np.array([[5.0, 5.0]]))
        out, state = accelerated_update(state, tilde, prev)
        np.testing.assert_array_equal(out.lambdas, tilde.lambdas)

    def test_momentum_combination(self):
        state = AccelState()
        tilde0 = MultiplierSet(np.array([[1.0, 0.0]]))
        prev0 = MultiplierSet(np.array([[0.0, 0.0]]))
        _, state = accelerated_update(state, tilde0, prev0)
        t1 = state.t
        tilde1 = MultiplierSet(np.array([[2.0, 1.0]]))
        prev1 = tilde0
        out, state2 = accelerated_update(state, tilde1, prev1)
        t2 = state2.t
        expected = (
            tilde1.lambdas
            + ((t1 - 1.0) / t2) * (tilde1.lambdas - tilde0.lambdas)
            + (t1 / t2) * (tilde1.lambdas - prev1.lambdas)
        )
        np.testing.assert_allclose(out.lambdas, expected)

    def test_identical_history_is_fixed_point(self):
        state = AccelState()
        lam = MultiplierSet(np.array([[3.0, -1.0]]))
        _, state = accelerated_update(state, lam, lam)
        out, _ = accelerated_update(state, lam, lam)
        np.testing.assert_array_equal(out.lambdas, lam.lambdas)


class TestSolveAugLag:
    def test_violation_decreases_and_converges(self, l96_problem):
        report = solve_auglag(l96_problem, small_outer_cfg())
        outer = report.extras["outer_trace"]
        assert report.termination_reason == "constraint_tol"
        tol = 1e-6 * math.sqrt(l96_problem.n)
        assert outer[-1].violation_inf <= tol
        # overall reduction over the outer iterations
        assert outer[-1].violation_inf < 1e-2 * outer[0].violation_inf

    def test_approaches_serial_minimizer(self, l96_problem):
        serial = solve_serial(l96_problem, OptimizerConfig(grad_tol=1e-9, max_iters=1000))
        report = solve_auglag(l96_problem, small_outer_cfg(), reference_x0=serial.x_final)
        outer = report.extras["outer_trace"]
        d_first = outer[0].dist_to_reference
        d_last = outer[-1].dist_to_reference
        assert d_last < d_first
        assert np.abs(report.x_final - serial.x_final).max() <= 1e-3

    def test_worker_count_does_not_change_result(self, l96_problem):
        cfg1 = small_outer_cfg(max_outer=3, workers=1)
        cfg4 = small_outer_cfg(max_outer=3, workers=4)
        r1 = solve_auglag(l96_problem, cfg1)
        r4 = solve_auglag(l96_problem, cfg4)
        np.testing.assert_array_equal(r1.x_final, r4.x_final)
        assert r1.f_final == r4.f_final

    def test_accelerated_runs_and_converges(self, l96_problem):
        cfg = small_outer_cfg(update_scheme="accelerated")
        report = solve_auglag(l96_problem, cfg)
        assert report.termination_reason == "constraint_tol"

    def test_trace_bookkeeping(self, l96_problem):
        report = solve_auglag(l96_problem, small_outer_cfg(max_outer=3))
        outer = report.extras["outer_trace"]
        assert [r.outer for r in outer] == list(range(len(outer)))
        assert outer[-1].cost_evals == report.cost_evals
        # mu grows geometrically
        for a, b in zip(outer, outer[1:]):
            assert b.mu == pytest.approx(4.0 * a.mu)
        # inner trace phases name the outer iteration
        phases = {rec.phase for rec in report.trace}
        assert any(p.startswith("parallel-outer-0") for p in phases)

    def test_outer_controls_snapshots(self, l96_problem):
        report = solve_auglag(l96_problem, small_outer_cfg(max_outer=2))
        controls = report.extras["outer_controls"]
        assert len(controls) == len(report.extras["outer_trace"])
        np.testing.assert_array_equal(controls[-1].x0, report.x_final)


class TestSolveHybrid:
    def test_matches_serial_result(self, l96_problem):
        serial = solve_serial(l96_problem, OptimizerConfig(grad_tol=1e-9, max_iters=1000))
        hybrid = solve_hybrid(l96_problem, small_outer_cfg(), n_parallel_outer=2)
        assert np.abs(hybrid.x_final - serial.x_final).max() <= 1e-5

    def test_trace_phase_boundary(self, l96_problem):
        hybrid = solve_hybrid(l96_problem, small_outer_cfg(max_outer=6), n_parallel_outer=2)
        b = hybrid.extras["phase_boundary_iteration"]
        assert all(rec.phase.startswith("parallel") for rec in hybrid.trace[:b])
        assert all(rec.phase == "serial" for rec in hybrid.trace[b:])
        # evaluation counters are cumulative across the phase switch
        evals = [rec.cost_evals for rec in hybrid.trace]
        assert all(b2 >= a2 for a2, b2 in zip(evals, evals[1:]))

    def test_rejects_zero_parallel_outers(self, l96_problem):
        with pytest.raises(ValueError):
            solve_hybrid(l96_problem, small_outer_cfg(), n_parallel_outer=0)
