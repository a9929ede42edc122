from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfbsde.coefficients import registry_get
from pathfbsde.conditions import AssumptionConstants
from pathfbsde.solver import (
    BrownianGrid,
    ContinuationSchedule,
    Discretization,
    LinearBaseSpec,
    NonConvergenceError,
    backward_lsmc,
    picard_solve,
    simulate_forward,
    solve_fbsde,
    solve_linear_base,
)

def _direct(**kw) -> ContinuationSchedule:
    return ContinuationSchedule(mode="direct", **kw)


class TestBrownianGrid:
    def test_shape_and_antithetic_mirror(self):
        bg = BrownianGrid.generate(Discretization(10, num_paths=8, seed=3), d=2)
        assert bg.increments.shape == (10, 8, 2)
        np.testing.assert_array_equal(bg.increments[:, 4:], -bg.increments[:, :4])

    def test_seed_determinism(self):
        disc = Discretization(6, num_paths=20, seed=5)
        a = BrownianGrid.generate(disc, 1).increments
        b = BrownianGrid.generate(disc, 1).increments
        c = BrownianGrid.generate(Discretization(6, num_paths=20, seed=6), 1).increments
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_increment_variance(self):
        bg = BrownianGrid.generate(Discretization(4, num_paths=200_000, seed=1, antithetic=False), 1)
        assert np.var(bg.increments) == pytest.approx(0.25, rel=0.02)

    def test_brownian_paths_start_at_zero(self):
        bg = BrownianGrid.generate(Discretization(5, num_paths=4), 1)
        W = bg.brownian_paths()
        assert W.shape == (6, 4, 1) and np.all(W[0] == 0)
        np.testing.assert_allclose(np.diff(W, axis=0), bg.increments)


class TestValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [{"delta_init": 0.1, "delta_min": 0.2}, {"delta_init": 0.0}, {"mode": "bisect"}, {"relaxation": 1.5}],
    )
    def test_schedule_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ContinuationSchedule(**kwargs)

    def test_discretization_rejects(self):
        with pytest.raises(ValueError):
            Discretization(0)

    def test_linear_spec_rejects_negative(self):
        with pytest.raises(ValueError):
            LinearBaseSpec(beta1=-1.0, beta2=1.0)

    def test_dimension_rules_enforced_before_solving(self):
        cs = registry_get("example31")
        with pytest.raises(ValueError):
            solve_fbsde(cs, AssumptionConstants(), Discretization(5, num_paths=10), [1.0, 2.0])


class TestExactCases:
    @pytest.mark.parametrize("x0", [0.5, -1.25])
    def test_decoupled_identity_y0(self, x0):
        cs = registry_get("decoupled_identity")
        sol = solve_fbsde(cs, AssumptionConstants(), Discretization(20, num_paths=2000, seed=2), [x0], _direct())
        assert abs(sol.y0[0] - x0) <= 1e-8
        assert len(sol.diagnostics.alpha_levels[-1:]) == 1

    @given(r=st.floats(0.0, 0.5), terminal=st.floats(-3, 3), steps=st.integers(1, 30))
    @settings(max_examples=25)
    def test_pure_driver_closed_form(self, r, terminal, steps):
        cs = registry_get("pure_driver", {"r": r, "terminal": terminal})
        sol = solve_fbsde(cs, AssumptionConstants(), Discretization(steps, num_paths=16), [0.0], _direct())
        dt = 1.0 / steps
        expected = terminal * (1 + r * dt) ** (steps - np.arange(steps + 1))
        np.testing.assert_allclose(sol.Y[:, :, 0].mean(axis=1), expected, rtol=1e-12, atol=1e-12)

    def test_terminal_condition_exact(self):
        cs = registry_get("example31")
        disc = Discretization(10, num_paths=500, seed=4)
        sol = solve_fbsde(cs, AssumptionConstants(), disc, [1.0], _direct(inner_tol=1e-8))
        np.testing.assert_array_equal(sol.Y[-1], cs.g(sol.X[-1]))

    def test_deterministic_hyperbolic_linear_system(self):
        # x' = -y, y' = -x, y(T) = x(T): the solution is y(t) = x0 exp(-t)
        disc = Discretization(200, num_paths=4, seed=0)
        bg = BrownianGrid.generate(disc, 1)
        sol = solve_linear_base(LinearBaseSpec(1.0, 1.0, lam=1.0), np.eye(1), 1, disc, bg, [2.0])
        exact = 2.0 * np.exp(-sol.times)
        assert np.max(np.abs(sol.Y[:, 0, 0] - exact)) <= 5.0 / disc.num_steps
        assert np.max(np.abs(sol.Z)) <= 1e-10

    def test_linear_base_decoupled_two_stage(self):
        # beta2 = 0, lambda = 0: X is a Brownian motion, Y solves a linear BSDE
        disc = Discretization(20, num_paths=4000, seed=7)
        bg = BrownianGrid.generate(disc, 1)
        spec = LinearBaseSpec(beta1=1.0, beta2=0.0, lam=0.0, sigma0=1.0, g0=0.5)
        sol = solve_linear_base(spec, np.eye(1), 1, disc, bg, [1.0])
        cs = registry_get("decoupled_identity")
        X = simulate_forward(cs, np.zeros((21, 4000, 1)), np.zeros((20, 4000, 1, 1)), bg, [1.0])
        np.testing.assert_allclose(sol.X, X, atol=1e-12)
        # Y_0 = 0.5 + int_0^1 E[X_t] dt = 1.5 in the limit, left Riemann sum is exact for a constant mean
        assert sol.y0[0] == pytest.approx(1.5, abs=4 * sol.y0_stderr[0] + 1e-9)


class TestPicard:
    def test_example31_contracts(self):
        cs = registry_get("example31")
        disc = Discretization(20, num_paths=4000, seed=9)
        sol = solve_fbsde(cs, AssumptionConstants(), disc, [1.0], _direct(inner_tol=1e-8))
        ratios = sol.diagnostics.contraction_ratios[-1][1:]
        assert max(ratios) < 1.0
        assert sol.diagnostics.alpha_levels[-1].converged

    def test_non_convergence_carries_trace(self):
        cs = registry_get("example31")
        disc = Discretization(10, num_paths=200, seed=1)
        with pytest.raises(NonConvergenceError) as info:
            solve_fbsde(cs, AssumptionConstants(), disc, [1.0], _direct(max_inner_iters=3))
        trace = info.value.trace
        assert trace is not None and len(trace.residual_history[-1]) == 3
        assert not trace.alpha_levels[-1].converged

    def test_bit_deterministic(self):
        cs = registry_get("example31")
        disc = Discretization(10, num_paths=600, seed=12)
        a = solve_fbsde(cs, AssumptionConstants(), disc, [1.0], _direct(inner_tol=1e-8))
        b = solve_fbsde(cs, AssumptionConstants(), disc, [1.0], _direct(inner_tol=1e-8))
        np.testing.assert_array_equal(a.Y, b.Y)
        assert a.to_csv() == b.to_csv()

    def test_homotopy_agrees_with_direct(self):
        cs = registry_get("example31")
        disc = Discretization(10, num_paths=2000, seed=13)
        # both stop on a squared-distance tolerance, so y0 agrees to about its square root
        direct = solve_fbsde(cs, AssumptionConstants(), disc, [1.0], _direct(inner_tol=1e-14, max_inner_iters=400))
        homo = solve_fbsde(cs, AssumptionConstants(), disc, [1.0], ContinuationSchedule(inner_tol=1e-14))
        assert homo.y0[0] == pytest.approx(direct.y0[0], abs=1e-6)
        assert [lv.alpha for lv in homo.diagnostics.alpha_levels if lv.converged][-1] == 1.0

    def test_martingale_part_has_zero_mean(self):
        cs = registry_get("example31")
        disc = Discretization(20, num_paths=4000, seed=14)
        bg = BrownianGrid.generate(disc, 1)
        sol = picard_solve(cs, disc, bg, [1.0], tol=1e-8, relaxation=0.125)
        mart = np.einsum("kMmd,kMd->Mm", sol.Z, bg.increments)
        assert abs(mart.mean()) <= 1e-10 + 4 * mart.std() / math.sqrt(disc.num_paths)


class TestBackward:
    def test_lsmc_on_linear_terminal(self):
        # Y = E[X_T | X_t] = X_t and Z = 1 for dX = dW, g(x) = x
        cs = registry_get("decoupled_identity")
        disc = Discretization(10, num_paths=1000, seed=2)
        bg = BrownianGrid.generate(disc, 1)
        X = 0.3 + bg.brownian_paths()
        Y, Z = backward_lsmc(cs, X, bg)
        np.testing.assert_array_equal(Y[-1], X[-1])
        # antithetic paths make the time-0 projection exact
        np.testing.assert_allclose(Y[0], 0.3, atol=1e-12)
        assert np.max(np.abs(Y - X)) < 0.2
        assert abs(Z.mean() - 1.0) < 0.05
