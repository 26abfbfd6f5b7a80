"""
Tests for the orbital Patterson-Sullivan approximation, shadows and the
regularity checks.
"""

import numpy as np
import pytest

import ps_measure
from config import AHLFORS_BAND, PS_EXPONENT_MARGIN
from lie_core import AVector, Flag, builtin_forms, exp_a
from limit_sampler import sample_limit_set
from poincare import critical_exponent, tangent_normalize
from ps_measure import (
    ahlfors_check,
    ball_masses,
    ball_shadow_check,
    conformality_check,
    ps_approx,
    radius_sweep,
    shadow_distances,
    shadow_lemma_check,
    shadow_membership,
)
from utils.errors import DegenerateForm, InvalidTheta, ScaleRangeTooNarrow
from word_engine import build_ball


@pytest.fixture(scope="module")
def small_ball(schottky_gens):
    return build_ball(schottky_gens, 4)


@pytest.fixture(scope="module")
def alpha(sl2):
    return builtin_forms(sl2)["alpha1"]


@pytest.fixture(scope="module")
def measure(schottky_ball, alpha):
    return ps_approx(schottky_ball, alpha)


class TestPsApprox:
    """Normalized weighted orbital measures."""

    def test_probability_measure(self, measure, schottky_ball):
        assert measure.total == pytest.approx(1.0)
        assert len(measure) == len(schottky_ball) - 1
        assert np.all(measure.weights > 0)

    def test_default_exponent(self, measure, schottky_ball, alpha):
        delta = critical_exponent(schottky_ball, alpha).delta
        assert measure.s == pytest.approx(PS_EXPONENT_MARGIN * delta)

    def test_weights_follow_form(self, small_ball, alpha):
        nu = ps_approx(small_ball, alpha, s=0.7)
        values = small_ball.form_values(alpha)[nu.ball_indices]
        expected = np.exp(-0.7 * (values - values[0]))
        assert np.allclose(nu.weights / nu.weights[0], expected)

    def test_shell_min(self, small_ball, alpha):
        nu = ps_approx(small_ball, alpha, s=0.7, shell_min=3)
        assert np.all(nu.lengths >= 3)
        assert len(nu) == 36 + 108

    @pytest.mark.parametrize("s", [0.0, -1.0])
    def test_exponent_must_be_positive(self, small_ball, alpha, s):
        with pytest.raises(DegenerateForm):
            ps_approx(small_ball, alpha, s=s)

    def test_split_is_the_same_measure(self, small_ball, alpha):
        nu = ps_approx(small_ball, alpha, s=0.7)
        halves = nu.split()
        assert len(halves) == 2 * len(nu)
        assert halves.total == pytest.approx(nu.total)
        assert halves.word(len(nu)) == nu.word(0)

    def test_words_and_sample(self, small_ball, alpha):
        nu = ps_approx(small_ball, alpha, s=0.7)
        assert nu.word(0) == small_ball.word_string(int(nu.ball_indices[0]))
        sample = nu.as_sample()
        assert len(sample) == len(nu)
        assert sample.words[3] == nu.word(3)

    def test_describe(self, measure):
        info = measure.describe()
        assert info["atoms"] == len(measure)
        assert info["form"]["name"] == "alpha1"

    def test_export_csv(self, small_ball, alpha, tmp_path):
        nu = ps_approx(small_ball, alpha, s=0.7)
        header = nu.export_csv(tmp_path / "ps.csv").read_text().splitlines()[0].split(",")
        assert header == ["weight", "word", "f0", "f1", "f2", "f3"]


class TestShadows:
    """Chamber distances and shadow membership."""

    def test_point_on_its_own_chamber(self, sl2):
        g = exp_a(AVector(sl2, [3.0, -3.0]))
        result = shadow_membership(Flag.standard(sl2), g, 2.0)
        assert result["member"]
        assert result["dist"] == pytest.approx(0.0, abs=1e-6)

    def test_opposite_chamber(self, sl2):
        g = exp_a(AVector(sl2, [3.0, -3.0]))
        result = shadow_membership(Flag.opposite_standard(sl2), g, 2.0)
        assert not result["member"]
        assert result["dist"] == pytest.approx(np.sqrt(18.0), rel=1e-5)

    def test_product_point_on_its_own_chamber(self, product2):
        g = exp_a(AVector(product2, [1.0, 2.0]))
        result = shadow_membership(Flag.standard(product2), g, 1.0)
        assert result["member"]
        assert result["dist"] == pytest.approx(0.0, abs=1e-6)

    def test_partial_flag_rejected(self, sl3):
        g = exp_a(AVector(sl3, [2.0, 0.0, -2.0]))
        with pytest.raises(InvalidTheta):
            shadow_membership(Flag.standard(sl3, (1,)), g, 2.0)

    def test_prefilter_is_a_lower_bound(self, measure, schottky_ball):
        g = schottky_ball.element(schottky_ball.index_of((0, 2, 2, 0)))
        exact = shadow_distances(measure.frames, g)
        filtered = shadow_distances(measure.frames, g, radius=2.0)
        assert exact["evaluated"].all()
        skipped = ~filtered["evaluated"]
        assert np.all(filtered["dist"][skipped] <= exact["dist"][skipped] + 1e-9)
        assert np.all(exact["dist"][skipped] >= 2.0)
        assert np.array_equal(exact["dist"] < 2.0, filtered["dist"] < 2.0)


class TestBallMasses:
    def test_large_radius_holds_everything(self, small_ball, alpha):
        nu = ps_approx(small_ball, alpha, s=0.7)
        masses, members = ball_masses(nu, alpha, nu.frames[:5], [2.0])
        assert np.allclose(masses, 1.0)
        assert np.all(members == len(nu))

    def test_masses_grow_with_radius(self, small_ball, alpha):
        nu = ps_approx(small_ball, alpha, s=0.7)
        masses, _ = ball_masses(nu, alpha, nu.frames[:10], [0.01, 0.1, 1.0])
        assert np.all(np.diff(masses, axis=0) >= 0)

    def test_narrow_scale_range(self, measure, alpha):
        with pytest.raises(ScaleRangeTooNarrow):
            ahlfors_check(measure, alpha, [0.1, 0.5])


def power_law_masses(power, spread):
    """ball_masses stand-in: nu(B(xi_i, r)) = spread_i * r^power, ten atoms per ball."""

    def masses(measure, psi, centers, scales):
        factors = np.linspace(spread[0], spread[1], len(centers))
        values = np.outer(np.asarray(scales) ** power, factors)
        return values, np.full(values.shape, 10)

    return masses


class TestAhlforsVerdict:
    """The verdict band is [1/C, C] around 1, on balls with prescribed masses."""

    @pytest.mark.parametrize("spread,passed", [((0.5, 2.0), True), ((100.0, 1000.0), False), ((1e-4, 1e-3), False)])
    def test_band_is_anchored_at_one(self, monkeypatch, measure, alpha, spread, passed):
        monkeypatch.setattr(ps_measure, "ball_masses", power_law_masses(1.0, spread))
        result = ahlfors_check(measure, alpha, np.geomspace(1e-7, 1e-4, 7))
        assert result["resolved_decades"] == pytest.approx(3.0)
        assert result["pass"] is passed
        assert (result["C_est"] <= AHLFORS_BAND) is passed

    def test_band_of_shifted_ratios(self, monkeypatch, measure, alpha):
        monkeypatch.setattr(ps_measure, "ball_masses", power_law_masses(1.0, (100.0, 1000.0)))
        result = ahlfors_check(measure, alpha, np.geomspace(1e-7, 1e-4, 7))
        p95 = max(row["p95"] for row in result["table"])
        assert result["C_est"] == pytest.approx(p95)
        assert result["C_est"] > 900.0

    def test_two_exponents(self, monkeypatch, measure, alpha):
        """Balls of mass ~ r^0.6 are 0.6-regular and not 1-regular."""
        monkeypatch.setattr(ps_measure, "ball_masses", power_law_masses(0.6, (0.5, 2.0)))
        scales = np.geomspace(1e-6, 1e-2, 9)
        one = ahlfors_check(measure, alpha, scales, exponent=1.0)
        matched = ahlfors_check(measure, alpha, scales, exponent=0.6)
        assert not one["pass"]
        assert one["C_est"] > 400.0
        assert matched["pass"]
        assert matched["C_est"] == pytest.approx(2.0, rel=0.05)


@pytest.mark.slow
class TestRegularityChecks:
    """Shadow lemma, Ahlfors regularity and conformality on a Schottky ball."""

    @pytest.fixture(scope="class")
    def large_measure(self, schottky_ball_large, alpha):
        return ps_approx(schottky_ball_large, alpha)

    def test_ahlfors_tangent_form(self, schottky_ball_large, alpha):
        """delta * alpha is the rank-one distance form at exponent 1: its measure is 1-regular."""
        tangent = tangent_normalize(alpha, schottky_ball_large)
        nu = ps_approx(schottky_ball_large, tangent)
        result = ahlfors_check(nu, tangent, np.geomspace(5e-3, 0.6, 10))
        resolved = [row for row in result["table"] if row["resolved"]]
        assert len(result["table"]) == 10
        assert result["centers"] == 100
        assert result["resolved_decades"] >= 2.0
        assert result["pass"]
        assert all(0.1 <= row["p50"] <= 10.0 for row in resolved)

    def test_ahlfors_wrong_exponent(self, large_measure, alpha):
        """Under d_alpha the measure is delta-regular with delta < 1, so nu(B) / r blows up at small r."""
        result = ahlfors_check(large_measure, alpha, np.geomspace(1e-5, 0.3, 10), exponent=1.0)
        assert not result["pass"]
        assert result["C_est"] > AHLFORS_BAND

    def test_shadow_lemma(self, large_measure, schottky_ball_large):
        result = shadow_lemma_check(large_measure, schottky_ball_large, per_length=3)
        assert len(result["ratios"]) == 3 * 3
        assert {r["length"] for r in result["ratios"]} == {4, 5, 6}
        assert result["c0"] >= 1.0

    def test_radius_sweep(self, large_measure, schottky_ball_large):
        rows = radius_sweep(large_measure, schottky_ball_large, [1.0, 3.0], per_length=2)
        assert [row["radius"] for row in rows] == [1.0, 3.0]
        assert rows[1]["empty_shadows"] <= rows[0]["empty_shadows"]

    def test_conformality(self, large_measure, schottky_ball_large):
        result = conformality_check(large_measure, schottky_ball_large, "a")
        assert result["word"] == "a"
        assert result["cells"]
        assert result["median_relative_error"] >= 0.0

    def test_ball_shadow_constants(self, schottky_ball_large, alpha):
        sample = sample_limit_set(schottky_ball_large, [1], max_sample=200, rng=np.random.default_rng(0))
        result = ball_shadow_check(sample, schottky_ball_large, alpha, prefix_lengths=range(4, 7), flags=5)
        assert [row["prefix_length"] for row in result["table"]] == [4, 5, 6]
        assert "c_drift" in result and "c_prime_drift" in result
