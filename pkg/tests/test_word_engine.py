"""
Tests for word enumeration, the Anosov diagnostic, the limit cone and the
ball cache.
"""

import numpy as np
import pytest

from lie_core import GroupDescriptor, builtin_forms
from utils.errors import BudgetExceeded, InvalidElement, LabError
from word_engine import (
    PAD,
    GeneratorSet,
    anosov_diagnostic,
    ball_size,
    build_ball,
    enumerate_ball,
    is_cyclically_reduced,
    limit_cone_estimate,
    load_ball_cache,
    reduce_word,
    save_ball_cache,
)


class TestWords:
    """Letters, parsing and reduction."""

    def test_alphabet(self, schottky_gens):
        assert schottky_gens.letters == ["a", "A", "b", "B"]
        assert schottky_gens.inverse_letter(2) == 3
        assert schottky_gens.inverse_letter(3) == 2

    @pytest.mark.parametrize("text,word", [("e", ()), ("", ()), ("aB", (0, 3)), ("bbA", (2, 2, 1))])
    def test_parse_word(self, schottky_gens, text, word):
        assert schottky_gens.parse_word(text) == word

    def test_word_string(self, schottky_gens):
        assert schottky_gens.word_string((0, 3)) == "aB"
        assert schottky_gens.word_string(()) == "e"

    def test_parse_unknown_letter(self, schottky_gens):
        with pytest.raises(LabError):
            schottky_gens.parse_word("ac")

    def test_reduce_word(self):
        assert reduce_word((0, 2, 3, 1)) == ()
        assert reduce_word((0, 2, 3, 2)) == (0, 2)

    @pytest.mark.parametrize("word,expected", [((0, 2, 1), False), ((0, 2, 0), True), ((0,), True), ((), True)])
    def test_cyclically_reduced(self, word, expected):
        assert is_cyclically_reduced(word) == expected

    def test_evaluate_inverse_word(self, schottky_gens):
        g = schottky_gens.evaluate(schottky_gens.parse_word("abAB"))
        h = schottky_gens.evaluate(schottky_gens.parse_word("baBA"))
        assert np.allclose((g @ h).matrix, np.eye(2), atol=1e-9)
        assert np.allclose(h.matrix, g.inverse, atol=1e-9)

    def test_generators_need_determinant_one(self, sl2):
        with pytest.raises(InvalidElement):
            GeneratorSet(sl2, {"a": np.diag([2.0, 1.0])})

    def test_empty_generating_set(self, sl2):
        with pytest.raises(InvalidElement):
            GeneratorSet(sl2, {})

    def test_fingerprint_depends_on_matrices(self, sl2, schottky_gens):
        other = GeneratorSet(sl2, {"a": np.diag([4.0, 0.25]), "b": np.diag([2.0, 0.5])})
        assert other.fingerprint() != schottky_gens.fingerprint()
        assert schottky_gens.fingerprint() == GeneratorSet(sl2, {
            label: schottky_gens.matrices[2 * i] for i, label in enumerate(schottky_gens.labels)
        }).fingerprint()


class TestBall:
    """Ball enumeration."""

    @pytest.mark.parametrize("rank,length,expected", [(1, 4, 9), (2, 0, 1), (2, 1, 5), (2, 3, 53), (3, 2, 37)])
    def test_ball_size(self, rank, length, expected):
        assert ball_size(rank, length) == expected

    def test_size_matches_formula(self, schottky_ball):
        assert len(schottky_ball) == ball_size(2, 6)
        for k in range(1, 7):
            block = schottky_ball.shell(k)
            assert block.stop - block.start == 4 * 3 ** (k - 1)

    def test_first_shell_order(self, schottky_ball):
        assert [schottky_ball.word_string(i) for i in range(5)] == ["e", "a", "A", "b", "B"]

    def test_words_are_reduced(self, schottky_ball):
        words = schottky_ball.words
        left, right = words[:, :-1], words[:, 1:]
        cancelling = (left >= 0) & (right >= 0) & (right == (left ^ 1))
        assert not cancelling.any()

    def test_length_lex_order(self, schottky_ball):
        assert np.all(np.diff(schottky_ball.lengths) >= 0)
        block = schottky_ball.shell(3)
        keys = [tuple(w) for w in schottky_ball.words[block, :3]]
        assert keys == sorted(keys)

    def test_padding(self, schottky_ball):
        i = schottky_ball.index_of((0, 2))
        assert list(schottky_ball.words[i]) == [0, 2] + [PAD] * 4

    def test_matrices_match_evaluation(self, schottky_ball, schottky_gens, rng):
        for i in rng.choice(len(schottky_ball), size=20, replace=False):
            g = schottky_gens.evaluate(schottky_ball.word(i))
            assert np.allclose(schottky_ball.matrices[i], g.matrix, rtol=1e-9, atol=1e-9)

    def test_inverses_are_tracked(self, schottky_ball):
        products = schottky_ball.matrices @ schottky_ball.inverses
        assert np.allclose(products, np.eye(2), atol=1e-6)

    def test_cartan_alpha_positive_beyond_identity(self, schottky_ball):
        alpha = builtin_forms(schottky_ball.descriptor)["alpha1"]
        assert np.all(schottky_ball.form_values(alpha)[1:] > 0)

    def test_index_of(self, schottky_ball):
        i = schottky_ball.index_of((2, 0, 0))
        assert schottky_ball.word_string(i) == "baa"
        assert schottky_ball.index_of(()) == 0
        assert schottky_ball.index_of((0,) * 7) is None

    def test_budget(self, schottky_gens):
        with pytest.raises(BudgetExceeded) as excinfo:
            build_ball(schottky_gens, 5, budget=100)
        assert excinfo.value.details["count"] == ball_size(2, 5)

    def test_stream_matches_batch(self, schottky_gens):
        ball = build_ball(schottky_gens, 3)
        records = list(enumerate_ball(schottky_gens, 3))
        assert [r.word for r in records] == [ball.word_string(i) for i in range(len(ball))]
        assert np.allclose(records[-1].cartan.coords, ball.cartan[-1])

    def test_workers_give_same_ball(self, schottky_gens):
        serial = build_ball(schottky_gens, 4)
        parallel = build_ball(schottky_gens, 4, workers=2)
        assert np.array_equal(serial.words, parallel.words)
        assert np.allclose(serial.cartan, parallel.cartan)

    def test_identity_ball(self, schottky_gens):
        ball = build_ball(schottky_gens, 0)
        assert len(ball) == 1
        assert np.allclose(ball.cartan[0], 0.0)


class TestAnosovDiagnostic:
    """Linear growth of alpha(mu) in word length."""

    def test_schottky_passes(self, schottky_ball):
        result = anosov_diagnostic(schottky_ball, [1])
        assert result["pass"]
        assert result["C_fit"] >= 1.0
        assert len(result["per_shell_min_ratio"]) == schottky_ball.length

    def test_fit_bounds_every_record(self, schottky_ball):
        result = anosov_diagnostic(schottky_ball, [1])
        c = result["C_fit"]
        alpha = builtin_forms(schottky_ball.descriptor)["alpha1"]
        values = schottky_ball.form_values(alpha)
        assert np.all(values >= schottky_ball.lengths / c - c - 1e-9)

    def test_trivial_generator_fails(self, sl2):
        gens = GeneratorSet(sl2, {"a": np.diag([4.0, 0.25]), "b": np.eye(2)})
        result = anosov_diagnostic(build_ball(gens, 5), [1])
        assert not result["pass"]
        assert result["min_margin"] <= 0.0

    def test_invalid_theta(self, schottky_ball):
        with pytest.raises(LabError):
            anosov_diagnostic(schottky_ball, [2])


class TestLimitCone:
    """Normalized Cartan directions."""

    def test_rank_one_cone_is_a_ray(self, schottky_ball):
        cone = limit_cone_estimate(schottky_ball)
        assert cone.angular_spread == 0.0
        assert np.allclose(cone.directions, [1 / np.sqrt(2), -1 / np.sqrt(2)])
        assert np.isclose(cone.min_form(builtin_forms(schottky_ball.descriptor)["alpha1"]), np.sqrt(2))

    def test_directions_are_unit(self, sl3_ball):
        cone = limit_cone_estimate(sl3_ball)
        d = sl3_ball.descriptor
        assert np.allclose(d.norm(cone.directions), 1.0)
        assert cone.angular_spread > 0.0
        assert cone.contains(cone.directions[0])
        assert cone.support["min_alpha1"] > 0.0
        assert cone.support["min_alpha2"] > 0.0

    def test_describe(self, sl3_ball):
        info = limit_cone_estimate(sl3_ball).describe()
        assert info["count"] > 0
        assert set(info["support"]) == {"min_alpha1", "min_omega1", "min_alpha2", "min_omega2"}


class TestBallCache:
    """Binary ball cache."""

    def test_round_trip(self, schottky_gens, tmp_path):
        ball = build_ball(schottky_gens, 4)
        path = save_ball_cache(ball, tmp_path / "ball.bin")
        loaded = load_ball_cache(schottky_gens, path)
        assert np.array_equal(loaded.words, ball.words)
        assert np.array_equal(loaded.lengths, ball.lengths)
        assert np.array_equal(loaded.matrices, ball.matrices)
        assert np.array_equal(loaded.inverses, ball.inverses)

    def test_rejects_other_generators(self, schottky_gens, tmp_path):
        path = save_ball_cache(build_ball(schottky_gens, 2), tmp_path / "ball.bin")
        other = GeneratorSet(GroupDescriptor.sl(2), {"a": np.diag([2.0, 0.5])})
        with pytest.raises(LabError):
            load_ball_cache(other, path)

    def test_rejects_truncated_file(self, schottky_gens, tmp_path):
        path = save_ball_cache(build_ball(schottky_gens, 2), tmp_path / "ball.bin")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(LabError):
            load_ball_cache(schottky_gens, path)
