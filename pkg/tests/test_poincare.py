"""
Tests for critical exponents, growth indicators and the symmetrization gap.
"""

import numpy as np
import pytest
from scipy import optimize, special

from lie_core import AVector, builtin_forms
from poincare import (
    count_slope,
    critical_exponent,
    growth_indicator,
    rigidity_bound,
    series_bisection,
    shell_log_sums,
    symmetrization_report,
    tangent_normalize,
)
from scenario import load_scenario
from tests.conftest import linear_ball, scenario_path
from utils.errors import DegenerateForm
from word_engine import GeneratorSet, build_ball

LOG3 = np.log(3.0)

_ROTATION = np.array([[np.cos(np.pi / 4), -np.sin(np.pi / 4)], [np.sin(np.pi / 4), np.cos(np.pi / 4)]])
SCHOTTKY_GENERATORS = [np.diag([4.0, 0.25]), _ROTATION @ np.diag([4.0, 0.25]) @ _ROTATION.T]


def brute_force_exponent(generators, length):
    """
    Exponent of sum e^{-s alpha(mu(gamma))} over a free Schottky group, from scratch.

    Reduced words are multiplied out letter by letter, alpha(mu) = 2 log s1
    (determinant one) comes from numpy's SVD, and s is bisected until the last two shell sums balance.
    """
    letters = list(generators) + [np.linalg.inv(g) for g in generators]
    size = len(letters)
    shell = [(-1, np.eye(2))]
    alphas = []
    for _ in range(length):
        shell = [
            (j, m @ letters[j])
            for last, m in shell
            for j in range(size)
            if last < 0 or j != (last + size // 2) % size
        ]
        singular = np.linalg.svd(np.array([m for _, m in shell]), compute_uv=False)
        alphas.append(2.0 * np.log(singular[:, 0]))

    def balance(s):
        return special.logsumexp(-s * alphas[-1]) - special.logsumexp(-s * alphas[-2])

    return optimize.brentq(balance, 1e-3, 5.0, xtol=1e-10)


@pytest.fixture(scope="module")
def alpha(sl2):
    return builtin_forms(sl2)["alpha1"]


class TestCountSlope:
    """Least-squares slope of log N(T)."""

    def test_exponential_counts(self):
        values = np.log(np.arange(1, 100001))
        fit = count_slope(values, float(values[-1]))
        assert fit["slope"] == pytest.approx(1.0, abs=0.01)
        assert len(fit["grid"]) == 64

    def test_flat_counts(self):
        fit = count_slope(np.array([0.0, 10.0]), 5.0)
        assert fit["slope"] == 0.0
        assert fit["residual"] == 0.0


class TestCriticalExponent:
    """Both estimators on balls with known exponents."""

    def test_linear_ball_series_is_exact(self, schottky_ball_large, alpha):
        ball = linear_ball(schottky_ball_large)
        assert series_bisection(ball, ball.form_values(alpha)) == pytest.approx(LOG3 / 2, rel=1e-9)

    def test_linear_ball_report(self, schottky_ball_large, alpha):
        report = critical_exponent(linear_ball(schottky_ball_large), alpha)
        assert report.method == "series-bisection"
        assert report.delta == pytest.approx(LOG3 / 2, rel=1e-9)
        assert report.delta_count == pytest.approx(LOG3 / 2, abs=0.15)
        assert report.uncertainty >= report.spread
        assert report.shell_counts[:3] == [1, 4, 12]

    @pytest.mark.parametrize("slope", [0.5, 2.0])
    def test_linear_ball_slope(self, schottky_ball, alpha, slope):
        report = critical_exponent(linear_ball(schottky_ball, slope), alpha)
        assert report.delta == pytest.approx(LOG3 / (2 * slope), rel=1e-9)

    def test_count_slope_primary(self, schottky_ball, alpha):
        report = critical_exponent(schottky_ball, alpha, primary="count-slope")
        assert report.method == "count-slope"
        assert report.delta == report.delta_count

    def test_schottky_exponent_below_one(self, schottky_ball_large, schottky):
        report = critical_exponent(schottky_ball_large, schottky.form("hyperbolic"))
        assert 0.0 < report.delta < 1.0
        assert report.nonpositive_records == 0

    def test_schottky_exponent_against_brute_force(self, schottky_ball_large, schottky):
        oracle = brute_force_exponent(SCHOTTKY_GENERATORS, 9)
        report = critical_exponent(schottky_ball_large, schottky.form("hyperbolic"))
        assert 0.0 < oracle < 1.0
        assert report.delta == pytest.approx(oracle, rel=0.05)

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_scaling(self, schottky_ball, alpha, c):
        base = critical_exponent(schottky_ball, alpha).delta
        scaled = critical_exponent(schottky_ball, alpha * c).delta
        assert scaled == pytest.approx(base / c, rel=1e-8)

    def test_tangent_normalization(self, sl3_ball):
        psi = builtin_forms(sl3_ball.descriptor)["omega1"]
        tangent = tangent_normalize(psi, sl3_ball)
        assert tangent.name == "tangent(omega1)"
        assert critical_exponent(sl3_ball, tangent).delta == pytest.approx(1.0, rel=1e-8)

    def test_irreducible_image_keeps_exponent(self, schottky_ball, alpha):
        """omega1 of the Sym^2 image equals alpha of the original on every word."""
        scenario = load_scenario(scenario_path("sl3_irreducible"))
        ball = build_ball(GeneratorSet.from_scenario(scenario), schottky_ball.length)
        omega1 = builtin_forms(ball.descriptor)["omega1"]
        assert np.allclose(ball.form_values(omega1), schottky_ball.form_values(alpha), atol=1e-8)
        assert critical_exponent(ball, omega1).delta == pytest.approx(
            critical_exponent(schottky_ball, alpha).delta, rel=1e-6
        )

    def test_negative_form_is_degenerate(self, schottky_ball, alpha):
        with pytest.raises(DegenerateForm):
            critical_exponent(schottky_ball, -alpha)

    def test_single_shell_falls_back_to_count_slope(self, schottky_gens, alpha):
        report = critical_exponent(build_ball(schottky_gens, 1), alpha)
        assert report.delta_series is None
        assert report.method == "count-slope"

    def test_shell_log_sums_at_zero_count_words(self, schottky_ball, alpha):
        sums = shell_log_sums(schottky_ball, schottky_ball.form_values(alpha), 0.0)
        expected = [0.0] + [np.log(4 * 3 ** (k - 1)) for k in range(1, schottky_ball.length + 1)]
        assert np.allclose(sums, expected)

    def test_shell_sums_are_flat_at_the_exponent(self, schottky_ball, alpha):
        report = critical_exponent(linear_ball(schottky_ball), alpha)
        assert np.allclose(report.shell_sums[1:], np.log(4.0 / 3.0))

    def test_report_dict(self, schottky_ball, alpha):
        info = critical_exponent(schottky_ball, alpha).to_dict()
        assert {"delta", "delta_count_slope", "delta_series_bisection", "spread", "counts", "shell_log_sums"} <= set(info)
        assert len(info["shell_log_sums"]) == schottky_ball.length + 1
        assert info["form"] == "alpha1"


class TestGrowthIndicator:
    """Exponential growth rate inside a cone about a direction."""

    def test_linear_ball_direction(self, schottky_ball_large, sl2):
        ball = linear_ball(schottky_ball_large)
        u = AVector(sl2, [1.0, -1.0]).unit()
        assert growth_indicator(ball, u, 0.1) == pytest.approx(LOG3 / np.sqrt(2), abs=0.15)

    def test_empty_cone(self, schottky_ball, sl2):
        assert growth_indicator(schottky_ball, AVector(sl2, [-1.0, 1.0]), 0.1) == float("-inf")

    @pytest.mark.parametrize("aperture", [0.0, -0.1, 1.0])
    def test_aperture_range(self, schottky_ball, sl2, aperture):
        with pytest.raises(ValueError):
            growth_indicator(schottky_ball, AVector(sl2, [1.0, -1.0]), aperture)

    def test_zero_direction(self, schottky_ball, sl2):
        with pytest.raises(ValueError):
            growth_indicator(schottky_ball, AVector(sl2, [0.0, 0.0]), 0.1)


class TestSymmetrization:
    """psi, psi composed with the opposition involution, and their mean."""

    def test_symmetric_form_has_no_gap(self, schottky_ball, alpha):
        report = symmetrization_report(schottky_ball, alpha)
        assert report["gap"] == pytest.approx(0.0, abs=1e-9)
        assert not report["strict"]

    def test_opposite_form_has_same_exponent(self, sl3_ball):
        psi = builtin_forms(sl3_ball.descriptor)["omega1"]
        report = symmetrization_report(sl3_ball, psi)
        assert report["delta_psi_iota"] == pytest.approx(report["delta_psi"], rel=1e-6)
        assert set(report) == {"delta_psi", "delta_psi_iota", "delta_psi_bar", "gap", "combined_residual", "strict"}


class TestRigidityBound:
    @pytest.mark.parametrize("d1,d2,p,q,expected", [(1, 1, 1, 1, 0.5), (0.5, 0.5, 1, 1, 0.25), (0.7, 0.3, 1, 0, 0.7)])
    def test_values(self, d1, d2, p, q, expected):
        assert rigidity_bound(d1, d2, p, q) == pytest.approx(expected)
