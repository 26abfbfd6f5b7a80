"""
Tests for scenario parsing, validation and run overrides.
"""

import numpy as np
import pytest

from scenario import load_scenario, load_scenario_text, parse_scales, scale_grid
from tests.conftest import scenario_path
from utils.errors import ConfigError

MINIMAL = """
[group]
kind = "SL"
n = 2

[generators.a]
matrix = [[2.0, 0.0], [0.0, 0.5]]

[theta]
roots = [1]
"""

SCENARIOS = ["schottky_sl2", "sl3_schottky", "sl3_irreducible", "sl3_block_embedded", "selfjoin_product"]


def config_field(text):
    with pytest.raises(ConfigError) as excinfo:
        load_scenario_text(text)
    assert excinfo.value.exit_code == 2
    return excinfo.value.details["field"]


class TestShippedScenarios:
    """The scenario files under scenarios/."""

    @pytest.mark.parametrize("name", SCENARIOS)
    def test_loads(self, name):
        scenario = load_scenario(scenario_path(name))
        assert scenario.name == name
        assert scenario.generators
        assert scenario.path == scenario_path(name)

    def test_conjugated_generator(self, schottky):
        assert np.allclose(schottky.generators["b"], [[2.125, 1.875], [1.875, 2.125]], atol=1e-12)

    def test_expression_entries(self):
        scenario = load_scenario(scenario_path("sl3_irreducible"))
        assert scenario.generators["b"][0, 1] == pytest.approx(np.sqrt(2) * 3.984375)
        assert np.isclose(np.linalg.det(scenario.generators["b"]), 1.0)

    def test_run_section(self, schottky):
        assert schottky.run.ball_length == 10
        assert schottky.run.form == "hyperbolic"
        assert schottky.run.effective_shell_min == 8
        assert schottky.theta == (1,)

    def test_config_hash(self, schottky):
        assert len(schottky.config_hash) == 64
        assert schottky.describe()["config_sha256"] == schottky.config_hash

    def test_describe(self, schottky):
        info = schottky.describe()
        assert info["group"] == schottky.descriptor.key
        assert set(info["generators"]) == {"a", "b"}


class TestForms:
    def test_default_form(self, schottky):
        assert schottky.form().name == "hyperbolic"

    def test_builtin_form(self, schottky):
        assert schottky.form("alpha1").name == "alpha1"

    def test_rho_fallback(self):
        scenario = load_scenario(scenario_path("sl3_irreducible"))
        assert scenario.form().name == "rho"

    def test_unknown_form(self, schottky):
        with pytest.raises(ConfigError) as excinfo:
            schottky.form("missing")
        assert excinfo.value.field == "run.form"


class TestOverrides:
    def test_none_keeps_value(self, schottky):
        changed = schottky.with_overrides(ball_length=4, seed=None)
        assert changed.run.ball_length == 4
        assert changed.run.seed == schottky.run.seed
        assert schottky.run.ball_length == 10

    def test_scales_string(self, schottky):
        changed = schottky.with_overrides(scales="1e-3:1e-1:10")
        assert changed.run.scales == (1e-3, 1e-1, 10)

    def test_unknown_form_override(self, schottky):
        with pytest.raises(ConfigError) as excinfo:
            schottky.with_overrides(form="missing")
        assert excinfo.value.field == "run.form"

    def test_unknown_key(self, schottky):
        with pytest.raises(ConfigError) as excinfo:
            schottky.with_overrides(colour="red")
        assert excinfo.value.field == "run"


class TestFamily:
    """The deformation family of the self-joining scenario."""

    def test_grid(self, selfjoin):
        grid = selfjoin.family.grid
        assert len(grid) == 11
        assert grid[0] == pytest.approx(-0.5)
        assert grid[-1] == pytest.approx(0.5)

    def test_zero_is_the_base_point(self, selfjoin):
        at_zero = selfjoin.generators_at(0.0)
        for label, matrix in selfjoin.generators.items():
            assert np.allclose(at_zero[label], matrix, atol=1e-12)

    def test_only_last_factor_bends(self, selfjoin):
        bent = selfjoin.generators_at(0.5)
        assert np.allclose(bent["b"][0], selfjoin.generators["b"][0])
        assert not np.allclose(bent["b"][1], selfjoin.generators["b"][1])
        assert np.isclose(np.linalg.det(bent["b"][1]), 1.0)
        assert np.allclose(bent["a"], selfjoin.generators["a"])

    def test_no_family(self, schottky):
        with pytest.raises(ConfigError) as excinfo:
            schottky.generators_at(0.1)
        assert excinfo.value.field == "family"


class TestValidation:
    """Every failure names the offending field."""

    def test_minimal_document(self):
        scenario = load_scenario_text(MINIMAL)
        assert scenario.name == "scenario"
        assert scenario.run.ball_length == 8

    @pytest.mark.parametrize("text,field", [
        ("[[[", "<document>"),
        ("extra = 1\n" + MINIMAL, "<root>"),
        (MINIMAL + "\n[run]\nball_length = -1\n", "run.ball_length"),
        (MINIMAL.replace("n = 2\n", ""), "group.n"),
        (MINIMAL.replace("0.5]]", "1.0]]"), "generators.a.matrix"),
        (MINIMAL.replace("[[2.0, 0.0], [0.0, 0.5]]", "[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]"),
         "generators.a.matrix"),
        (MINIMAL.replace("2.0, 0.0]", '"foo", 0.0]'), "generators.a.matrix"),
        (MINIMAL.replace("roots = [1]", "roots = [2]"), "theta.roots"),
        (MINIMAL + '\n[forms.f]\nbasis = "root"\ncoefficients = [1.0, 2.0]\n', "forms.f"),
        (MINIMAL + '\n[run]\nscales = "1:0.1:10"\n', "run.scales"),
        (MINIMAL + '\n[run]\nform = "missing"\n', "run.form"),
    ])
    def test_error_field(self, text, field):
        assert config_field(text) == field

    def test_unknown_family_generator(self):
        text = MINIMAL + (
            '\n[family]\nparameter = "t"\ngrid = [0.0]\n\n'
            '[family.generators.c]\nmatrix = [["1", "t"], ["0", "1"]]\n'
        )
        assert config_field(text) == "family.generators.c.matrix"

    def test_family_determinant(self):
        text = MINIMAL + (
            '\n[family]\nparameter = "t"\ngrid = [0.0, 1.0]\n\n'
            '[family.generators.a]\nmatrix = [["1 + t", "0"], ["0", "1"]]\n'
        )
        assert config_field(text) == "family.generators.a.matrix"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as excinfo:
            load_scenario(tmp_path / "absent.toml")
        assert excinfo.value.field == "--config"


class TestScales:
    def test_parse(self):
        assert parse_scales("0.001:0.5:12") == (0.001, 0.5, 12)

    @pytest.mark.parametrize("text", ["0.1:0.01:5", "0.1:1", "a:b:c", "0.1:1:1"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_scales(text)

    def test_grid(self):
        grid = scale_grid((1e-3, 1.0, 4))
        assert np.allclose(grid, [1e-3, 1e-2, 1e-1, 1.0])
