"""
Tests for c_theta, the dimension bounds, the growth bound and the
temperedness criterion.
"""

import numpy as np
import pytest

from bounds import (
    c_theta,
    c_theta_cone,
    c_theta_grid,
    c_theta_table,
    dimension_bounds_report,
    direction_grid,
    forms_ordered,
    growth_bound_check,
    integrability_exponent,
    smilga_check,
    temperedness_verdict,
)
from lie_core import GroupDescriptor, builtin_forms, tits_pair_form
from utils.errors import InvalidTheta
from word_engine import limit_cone_estimate


class TestCTheta:
    """The weight-inequality constant."""

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_full_theta_in_sl(self, n):
        assert c_theta(GroupDescriptor.sl(n), range(1, n)) == pytest.approx(2.0)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_products(self, k):
        assert c_theta(GroupDescriptor.product(k), range(1, k + 1)) == pytest.approx(2.0)

    def test_sl3_single_root(self, sl3):
        assert c_theta(sl3, [1]) == pytest.approx(1.0)

    @pytest.mark.parametrize("n,theta", [(3, [1]), (4, [1]), (4, [2]), (4, [1, 3]), (5, [2, 3])])
    def test_grid_agrees_with_rays(self, n, theta):
        d = GroupDescriptor.sl(n)
        assert c_theta_grid(d, theta, resolution=12) == pytest.approx(c_theta(d, theta))

    def test_cone_is_below_chamber(self, sl3_ball):
        cone = limit_cone_estimate(sl3_ball)
        for theta in ([1], [2], [1, 2]):
            assert c_theta_cone(cone, theta) <= c_theta(sl3_ball.descriptor, theta) + 1e-12

    def test_invalid_theta(self, sl3):
        with pytest.raises(InvalidTheta):
            c_theta(sl3, [3])

    def test_table(self):
        table = c_theta_table(5)
        assert [row["n"] for row in table] == [2, 3, 4, 5]
        assert all(row["c_Pi"] == pytest.approx(2.0) for row in table)


class TestWeightInequalities:
    @pytest.mark.parametrize("descriptor", [GroupDescriptor.sl(2), GroupDescriptor.sl(4), GroupDescriptor.product(2)])
    def test_smilga(self, descriptor):
        result = smilga_check(descriptor)
        assert result["pass"]
        assert np.allclose(result["coefficients"], 0.0)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_root_below_tits_pair(self, n):
        d = GroupDescriptor.sl(n)
        assert forms_ordered(builtin_forms(d)["alpha1"], tits_pair_form(d, 1))

    def test_tits_pair_equals_root_in_sl2(self, sl2):
        assert forms_ordered(tits_pair_form(sl2, 1), builtin_forms(sl2)["alpha1"])

    def test_tits_pair_exceeds_root_in_sl3(self, sl3):
        assert not forms_ordered(tits_pair_form(sl3, 1), builtin_forms(sl3)["alpha1"])


class TestDimensionBounds:
    def test_sl2_bounds_coincide(self, schottky_ball):
        report = dimension_bounds_report(schottky_ball, None, [1], dim_result={"dim": 0.4, "ci": (0.3, 0.5)})
        assert report["lower"] == pytest.approx(report["upper"], rel=1e-9)
        assert report["upper_form"] == "alpha1"
        assert report["lower_form"] == "chi1+chi1"
        assert report["forms_ordered"]
        assert report["lower_le_upper"]

    def test_sl3_bounds_ordered(self, sl3_ball):
        report = dimension_bounds_report(sl3_ball, None, [1, 2], dim_result={"dim": 1.0, "ci": (0.9, 1.1)})
        assert report["lower_le_upper"]
        assert set(report["exponents"]) == {"chi1+chi2", "chi2+chi1", "alpha1", "alpha2"}


class TestGrowthBound:
    def test_rank_one_grid(self, schottky_ball):
        grid = direction_grid(limit_cone_estimate(schottky_ball))
        assert grid.shape == (1, 2)

    def test_rank_two_grid(self, sl3_ball):
        d = sl3_ball.descriptor
        grid = direction_grid(limit_cone_estimate(sl3_ball))
        assert len(grid) == 9
        assert np.allclose(d.norm(grid), 1.0)

    def test_schottky_passes_at_dimension_one(self, schottky_ball_large):
        result = growth_bound_check(schottky_ball_large, [1], dim_est=1.0)
        assert result["pass"]
        assert result["worst_margin"] > 0.0
        assert result["c_theta"] == pytest.approx(2.0)
        assert len(result["directions"]) == 1

    def test_zero_dimension_fails(self, schottky_ball_large):
        assert not growth_bound_check(schottky_ball_large, [1], dim_est=0.0)["pass"]


class TestTemperedness:
    @pytest.mark.parametrize("dim,threshold,expected", [
        (1.0, 1.0, 2.0),
        (0.5, 1.0, 4.0 / 3.0),
        (0.2, 1.0, 2.0 / 1.8),
        (2.0, 1.0, float("inf")),
        (0.0, 1.0, 1.0),
    ])
    def test_integrability_exponent(self, dim, threshold, expected):
        assert integrability_exponent(dim, threshold) == pytest.approx(expected)

    def test_sl2_threshold(self, sl2):
        result = temperedness_verdict(0.4, (0.35, 0.45), [1], sl2)
        assert result["criterion_value"] == pytest.approx(0.5)
        assert result["dim_upper"] == pytest.approx(0.45)
        assert result["verdict"]
        assert result["p_min"] == pytest.approx(2.0 / 1.1)

    def test_upper_end_decides(self, sl2):
        assert not temperedness_verdict(0.45, (0.4, 0.55), [1], sl2)["verdict"]

    def test_sl3_single_root(self, sl3_ball):
        cone = limit_cone_estimate(sl3_ball)
        result = temperedness_verdict(0.8, (0.7, 0.9), [1], sl3_ball.descriptor, cone)
        assert result["criterion_value"] == pytest.approx(1.0)
        assert result["verdict"]
        assert result["cone_criterion_value"] >= result["criterion_value"] - 1e-12
