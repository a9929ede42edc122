from __future__ import annotations

import math

import pytest

from pathfbsde.coefficients import continuation_set, linear_base_set, registry_get
from pathfbsde.conditions import (
    AssumptionConstants,
    CheckReport,
    SamplerConfig,
    check_g_monotonicity,
    check_monotonicity,
    estimate_g_lipschitz,
    estimate_path_lipschitz,
    estimate_u_lipschitz,
)

TRIALS = 600


class TestConstants:
    def test_defaults_valid(self):
        AssumptionConstants()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"c1": 0.0},
            {"beta1": -1.0},
            {"beta1": 0.0, "beta2": 0.0},
            {"mu1": -1.0, "beta2": 0.0, "beta1": 1.0},
        ],
    )
    def test_invariants(self, kwargs):
        with pytest.raises(ValueError):
            AssumptionConstants(**kwargs)

    def test_dimension_rules(self):
        AssumptionConstants().validate_dims(1, 2)
        with pytest.raises(ValueError):
            AssumptionConstants(beta1=0.0, beta2=1.0).validate_dims(1, 2)
        with pytest.raises(ValueError):
            AssumptionConstants(beta2=0.0).validate_dims(2, 1)


class TestLipschitz:
    def test_example31_path_constant_within_c1(self):
        rep = estimate_path_lipschitz(registry_get("example31"), TRIALS, seed=1, c1=22.0)
        assert rep.violations == 0 and 0 < rep.estimated_constant <= 22.0

    def test_path_constant_zero_without_path_dependence(self):
        cs = registry_get("custom_lifted", {"h_a": 0.0, "h_y": 1.0, "b_z": 2.0})
        assert estimate_path_lipschitz(cs, 90, seed=2).estimated_constant == 0.0

    @pytest.mark.parametrize("kappa", [0.5, 2.0])
    def test_integral_driver_bounded_by_kappa_squared(self, kappa):
        cs = registry_get("custom_lifted", {"h_a": kappa})
        rep = estimate_path_lipschitz(cs, TRIALS, seed=3)
        assert 0 < rep.estimated_constant <= kappa**2

    def test_example31_u_constant(self):
        rep = estimate_u_lipschitz(registry_get("example31"), TRIALS, seed=4)
        assert rep.estimated_constant <= 2 * math.sqrt(2) + 1e-6

    def test_u_constant_zero_without_control(self):
        cs = registry_get("custom_lifted", {"h_a": 1.0, "b_a": 1.0})
        assert estimate_u_lipschitz(cs, 90, seed=5).estimated_constant == 0.0

    def test_linear_base_u_ratio_is_one(self):
        cs = continuation_set(registry_get("example31"), 0.0, 1.0, 1.0)
        assert estimate_u_lipschitz(cs, 90, seed=6).estimated_constant == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("slope, expected", [(-1.0, 1.0), (0.0, 0.0), (3.0, 3.0)])
    def test_g_constant(self, slope, expected):
        cs = registry_get("custom_lifted", {"g_slope": slope})
        assert estimate_g_lipschitz(cs, 200, seed=7).estimated_constant == pytest.approx(expected, rel=1e-12)

    def test_example32_demo_g(self):
        assert estimate_g_lipschitz(registry_get("example32_demo"), 200, seed=8).estimated_constant == pytest.approx(1.0)

    def test_prefix_property(self):
        cs = registry_get("example31")
        small = estimate_path_lipschitz(cs, 90, seed=9)
        large = estimate_path_lipschitz(cs, 450, seed=9)
        assert large.estimated_constant >= small.estimated_constant

    def test_trials_must_be_positive(self):
        with pytest.raises(ValueError):
            estimate_path_lipschitz(registry_get("example31"), 0, seed=0)


class TestMonotonicity:
    def test_example31_holds_with_unit_constants(self):
        rep = check_monotonicity(registry_get("example31"), AssumptionConstants(), TRIALS, seed=10)
        assert rep.violations == 0
        assert rep.worst_margin >= 0.0

    def test_example31_fails_for_large_beta1(self):
        rep = check_monotonicity(registry_get("example31"), AssumptionConstants(beta1=4.0), TRIALS, seed=10)
        assert rep.violations > 0 and rep.worst_margin < 0

    def test_linear_base_has_reversed_sign(self):
        # The blend's base system pairs to -beta1 |x|^2 - beta2 |u|^2, so the
        # best supported constant is -max(beta1, beta2).
        cs = linear_base_set(0.8, 1.3, 1.0)
        rep = check_monotonicity(cs, AssumptionConstants(beta1=0.8, beta2=1.3), 300, seed=11)
        assert rep.violations == rep.trials
        assert rep.estimated_constant == pytest.approx(-1.3, rel=1e-9)

    def test_g_slack_is_zero_for_example31(self):
        rep = check_g_monotonicity(registry_get("example31"), 1.0, TRIALS, seed=12)
        assert rep.violations == 0 and rep.worst_margin >= -1e-10

    def test_g_strict_margin(self):
        rep = check_g_monotonicity(registry_get("custom_lifted", {"g_slope": -2.0}), 1.0, 300, seed=13)
        assert rep.violations == 0 and rep.worst_margin > 0

    def test_g_wrong_sign_always_violates(self):
        rep = check_g_monotonicity(registry_get("custom_lifted", {"g_slope": 1.0}), 1.0, 300, seed=14)
        assert rep.violations == rep.trials


class TestReports:
    def test_bit_deterministic_across_threads(self):
        cs = registry_get("example31")
        cfg = SamplerConfig(num_steps=20)
        one = check_monotonicity(cs, AssumptionConstants(), 5000, seed=3, cfg=cfg, threads=1)
        many = check_monotonicity(cs, AssumptionConstants(), 5000, seed=3, cfg=cfg, threads=3)
        assert one == many

    def test_text_report(self):
        rep = CheckReport("demo", 10, 1, -0.5, 2.0, 7)
        text = rep.to_text()
        assert text.splitlines()[0] == "[demo]"
        assert "violations = 1" in text and "worst_margin = -0.5" in text and "sampler_seed = 7" in text
