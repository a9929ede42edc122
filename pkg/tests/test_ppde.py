from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfbsde.coefficients import ControlPair, registry_get
from pathfbsde.oracles import oracle_functional
from pathfbsde.paths import Path, integral_value, sup_norm
from pathfbsde.ppde import (
    PathFunctional,
    PPDEError,
    feynman_kac_check,
    horizontal_derivative,
    ito_residual,
    lift_coefficients,
    ppde_residual,
    ppde_sweep,
    random_lifted_paths,
    residual_table_csv,
    second_vertical_derivative,
    vertical_derivative,
)
from pathfbsde.solver import BrownianGrid, ContinuationSchedule, Discretization, simulate_forward

SQUARE = PathFunctional(lambda p: p.last[-1] ** 2, name="square")
INTEGRAL = PathFunctional(lambda p: integral_value(p)[-1], name="integral")
CONSTANT = PathFunctional(lambda p: 3.5, name="constant")
TIME_VALUE = PathFunctional(lambda p: p.end_time * p.last[-1], name="t*x")
ZERO = PathFunctional(lambda p: 0.0, name="zero")

values = st.lists(st.floats(-5, 5), min_size=2, max_size=30)


def _path(vals, step=0.01) -> Path:
    return Path(np.asarray(vals, dtype=float)[:, None], step)


class TestVertical:
    @given(values)
    def test_quadratic_exact(self, vals):
        p = _path(vals)
        assert vertical_derivative(SQUARE, p)[0, 0] == pytest.approx(2 * vals[-1], abs=1e-9)
        assert second_vertical_derivative(SQUARE, p)[0, 0, 0] == pytest.approx(2.0, abs=1e-5)

    @given(values)
    def test_integral_ignores_last_value(self, vals):
        p = _path(vals)
        assert vertical_derivative(INTEGRAL, p)[0, 0] == 0.0
        assert second_vertical_derivative(INTEGRAL, p)[0, 0, 0] == 0.0

    def test_sup_norm_interior_max(self):
        f = PathFunctional(sup_norm, "C0")
        p = _path([0.0, 3.0, 1.0, 0.5])
        assert vertical_derivative(f, p)[0, 0] == 0.0

    def test_hessian_symmetric(self):
        f = PathFunctional(lambda p: p.last[0] ** 2 * p.last[1] + math.sin(p.last[0] * p.last[1]))
        p = Path(np.array([[0.0, 0.0], [0.4, -1.1]]), 0.1)
        H = second_vertical_derivative(f, p)[0]
        np.testing.assert_array_equal(H, H.T)
        x, y = 0.4, -1.1
        exact = np.array(
            [[2 * y - y * y * math.sin(x * y), 2 * x + math.cos(x * y) - x * y * math.sin(x * y)], [0, 0]]
        )
        exact[1, 0] = exact[0, 1]
        exact[1, 1] = -x * x * math.sin(x * y)
        np.testing.assert_allclose(H, exact, atol=1e-5)

    def test_rejects_bad_eps(self):
        with pytest.raises(PPDEError):
            vertical_derivative(SQUARE, _path([0.0, 1.0]), eps=0.0)

    def test_non_finite_evaluation(self):
        f = PathFunctional(lambda p: math.inf)
        with pytest.raises(PPDEError):
            vertical_derivative(f, _path([0.0, 1.0]))


class TestHorizontal:
    @given(values)
    def test_last_value_functional_is_flat(self, vals):
        assert horizontal_derivative(SQUARE, _path(vals))[0] == 0.0

    @given(values)
    def test_integral(self, vals):
        assert horizontal_derivative(INTEGRAL, _path(vals))[0] == pytest.approx(vals[-1], abs=1e-9)

    @given(values)
    def test_time_times_value(self, vals):
        assert horizontal_derivative(TIME_VALUE, _path(vals))[0] == pytest.approx(vals[-1], abs=1e-9)

    def test_multiple_steps(self):
        p = _path([1.0, 2.0, -0.5])
        assert horizontal_derivative(INTEGRAL, p, dt=0.03)[0] == pytest.approx(-0.5, abs=1e-12)


class TestIto:
    def _brownian(self, K, seed):
        rng = np.random.default_rng(seed)
        w = np.concatenate([[0.0], np.cumsum(rng.normal(scale=math.sqrt(1 / K), size=K))])
        return _path(w, 1 / K)

    def test_constant_exact(self):
        assert ito_residual(CONSTANT, self._brownian(20, 0)) == 0.0

    def test_integral_reproduced_by_time_term(self):
        p = self._brownian(50, 1)
        assert ito_residual(INTEGRAL, p) <= 1e-9

    def test_square_realized_bracket(self):
        assert ito_residual(SQUARE, self._brownian(40, 2)) <= 1e-6

    def test_square_model_bracket_converges(self):
        def rms(K):
            errs = [ito_residual(SQUARE, self._brownian(K, 100 * K + i), model_bracket=np.eye(1) / K) for i in range(200)]
            return math.sqrt(np.mean(np.square(errs)))

        coarse, fine = rms(16), rms(64)
        assert fine < coarse
        # the sum of (dW^2 - dt) has standard deviation sqrt(2/K)
        assert coarse == pytest.approx(math.sqrt(2 / 16), rel=0.2)

    def test_bracket_shape_checked(self):
        with pytest.raises(PPDEError):
            ito_residual(SQUARE, self._brownian(5, 3), model_bracket=np.ones((2, 2)))


class TestLift:
    def test_blocks(self):
        cs = registry_get("example31")
        lc = lift_coefficients(cs)
        assert lc.dims == (2, 1, 1)
        p = Path(np.array([[0.0, 1.0], [0.3, 1.2], [0.1, 0.8]]), 0.1)
        b, s, h = lc.evaluate(p, [0.4], [[0.2]])
        bx, sx, hx = cs.evaluate(lc.x_part(p), ControlPair([0.4], [[0.2]]))
        assert b[0] == 0.0 and s[0, 0] == 1.0
        np.testing.assert_array_equal(b[1:], bx)
        np.testing.assert_array_equal(s[1:], sx)
        np.testing.assert_array_equal(h, hx)

    def test_partial_sums_reproduced(self):
        lc = lift_coefficients(registry_get("decoupled_identity"))
        disc = Discretization(12, num_paths=6, seed=4)
        bg = BrownianGrid.generate(disc, 1)
        X = simulate_forward(lc.coefficients, np.zeros((13, 6, 1)), np.zeros((12, 6, 1, 1)), bg, [0.0, 0.7])
        np.testing.assert_array_equal(X[:, :, 0], bg.brownian_paths()[:, :, 0])
        np.testing.assert_allclose(X[:, :, 1], 0.7 + bg.brownian_paths()[:, :, 0], atol=1e-14)

    def test_terminal_reads_x_block(self):
        lc = lift_coefficients(registry_get("example31"))
        assert lc.coefficients.terminal([5.0, 2.0])[0] == -2.0


class TestResidual:
    def test_heat_equation(self):
        lc = lift_coefficients(registry_get("decoupled_identity"))
        u = PathFunctional(lambda p: p.last[0] ** 2 - p.end_time)
        for p in random_lifted_paths(5, 1, 1, 0.01, 1.0, seed=2):
            res, _ = ppde_residual(u, ZERO, lc, p)
            assert abs(res[0]) <= 1e-6

    def test_constant_functional(self):
        lc = lift_coefficients(registry_get("decoupled_identity"))
        v = PathFunctional(lambda p: 0.25)
        res, gap = ppde_residual(CONSTANT, v, lc, random_lifted_paths(1, 1, 1, 0.01, 1.0, seed=0)[0])
        assert res[0] == 0.0 and gap == 0.25

    def test_rejects_c0(self):
        lc = lift_coefficients(registry_get("decoupled_identity"))
        u = PathFunctional(lambda p: 0.0, "C0")
        with pytest.raises(PPDEError):
            ppde_residual(u, ZERO, lc, random_lifted_paths(1, 1, 1, 0.01, 1.0, seed=0)[0])

    def test_rejects_dimension(self):
        lc = lift_coefficients(registry_get("decoupled_identity"))
        with pytest.raises(PPDEError):
            ppde_residual(CONSTANT, ZERO, lc, _path([0.0, 1.0]))

    def test_oracle_residual_shrinks_with_grid(self):
        lc = lift_coefficients(registry_get("example31"))
        u, v = oracle_functional(4000)

        def worst(step):
            paths = random_lifted_paths(4, 1, 1, step, 1.0, seed=5)
            return max(abs(r.residual[0]) for r in ppde_sweep(u, v, lc, paths))

        coarse, fine = worst(4e-4), worst(1e-4)
        assert fine < coarse
        assert fine < 5e-3

    def test_oracle_consistency_gap_small(self):
        lc = lift_coefficients(registry_get("example31"))
        u, v = oracle_functional(2000)
        for p in random_lifted_paths(3, 1, 1, 1e-3, 1.0, seed=1):
            _, gap = ppde_residual(u, v, lc, p)
            assert gap <= 1e-6 * (1 + abs(v(p)[0]))

    def test_table_csv(self):
        lc = lift_coefficients(registry_get("decoupled_identity"))
        rows = ppde_sweep(CONSTANT, ZERO, lc, random_lifted_paths(3, 1, 1, 0.01, 1.0, seed=0))
        lines = residual_table_csv(rows).splitlines()
        assert lines[0] == "path_id,t,residual1,consistency_gap" and len(lines) == 4
        assert lines[1].split(",")[0] == "0"

    def test_random_paths_deterministic(self):
        a = random_lifted_paths(3, 1, 2, 0.01, 1.0, seed=9)
        b = random_lifted_paths(3, 1, 2, 0.01, 1.0, seed=9)
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
        assert all(x.dim == 3 and x.end_time < 1.0 for x in a)


class TestFeynmanKac:
    def test_decoupled_prefixes(self):
        cs = registry_get("decoupled_identity")
        u = PathFunctional(lambda p: p.last[-1])
        disc = Discretization(10, num_paths=2000, seed=3)
        sched = ContinuationSchedule(mode="direct")
        for p in random_lifted_paths(3, 1, 1, 0.01, 1.0, seed=7, min_steps=5):
            rep = feynman_kac_check(u, cs, p, disc, sched)
            assert rep.gap <= 3 * float(np.linalg.norm(rep.stderr)) + 1e-12
            assert rep.t == p.end_time

    def test_terminal_prefix_uses_g(self):
        u, _ = oracle_functional(1000)
        p = Path(np.column_stack([np.zeros(11), np.linspace(1, 2, 11)]), 0.1)
        rep = feynman_kac_check(u, registry_get("example31"), p, Discretization(10))
        assert rep.gap <= 1e-12 and rep.y_value[0] == -2.0

    def test_prefix_beyond_horizon(self):
        p = Path(np.zeros((12, 2)), 0.1)
        with pytest.raises(PPDEError):
            feynman_kac_check(CONSTANT, registry_get("decoupled_identity"), p, Discretization(10))

    def test_within(self):
        from pathfbsde.ppde import FeynmanKacReport

        rep = FeynmanKacReport(0.0, np.array([1.0]), np.array([1.01]), np.array([0.001]), 0.01)
        assert rep.within() and not rep.within(rel=0.001)
        assert rep.relative_gap == pytest.approx(0.01 / 1.01)
