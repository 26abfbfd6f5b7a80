"""
Tests for Gromov products, conformal premetrics and quasi-metric constants.
"""

import numpy as np
import pytest

from lie_core import Flag, LinearForm, builtin_forms
from limit_sampler import sample_limit_set
from premetric import (
    PremetricMatrix,
    circle_flag,
    comparison_ratio,
    d_pq,
    d_psi,
    gromov_product,
    gromov_products_batch,
    pq_form,
    premetric_matrix,
    premetric_rows,
    quasi_metric_constants,
)
from utils.errors import BasisMismatch, InsufficientSample, NotAntipodal


def line_flag(descriptor, angle):
    c, s = np.cos(angle), np.sin(angle)
    return Flag(descriptor, np.array([[c, -s], [s, c]]), (1,))


def half_plane_gromov(x, y, height=1e-10):
    """(x | y)_i for boundary points x, y of the upper half-plane, from the distance formula just above them."""

    def dist(z, w):
        return np.arccosh(1.0 + abs(z - w) ** 2 / (2.0 * z.imag * w.imag))

    p, q = complex(x, height), complex(y, height)
    return 0.5 * (dist(1j, p) + dist(1j, q) - dist(p, q))


@pytest.fixture(scope="module")
def sl3_sample(sl3_ball):
    return sample_limit_set(sl3_ball, [1, 2], dedupe_eps=1e-6)


class TestGromovProduct:
    """Both backends and the determinant formula."""

    @pytest.mark.parametrize("backend", ["busemann", "angle"])
    @pytest.mark.parametrize("phi", [0.1, 0.7, 1.5])
    def test_sl2_chordal(self, sl2, backend, phi):
        """e^{-alpha(G)} is the sine of the angle between the lines."""
        alpha = builtin_forms(sl2)["alpha1"]
        value = d_psi(line_flag(sl2, 0.2), line_flag(sl2, 0.2 + phi), alpha, backend)
        assert np.isclose(value, np.sin(phi), rtol=1e-9)

    @pytest.mark.parametrize("backend", ["busemann", "angle"])
    @pytest.mark.parametrize("phi,chi", [(0.3, 1.2), (0.5, 2.6), (1.0, 1.05), (1.6, 2.9)])
    def test_sl2_half_plane(self, sl2, backend, phi, chi):
        """The line through (cos phi, sin phi) is the boundary point cot phi; o is i."""
        omega = builtin_forms(sl2)["omega1"]
        product = gromov_product(line_flag(sl2, phi), line_flag(sl2, chi), backend)
        expected = np.exp(-half_plane_gromov(1.0 / np.tan(phi), 1.0 / np.tan(chi)))
        assert np.isclose(np.exp(-2.0 * omega(product)), expected, rtol=1e-8)

    @pytest.mark.parametrize("seed", range(4))
    def test_backends_agree(self, sl3, seed):
        rng = np.random.default_rng(seed)
        xi = Flag.from_basis(sl3, rng.normal(size=(3, 3)), (1, 2))
        eta = Flag.from_basis(sl3, rng.normal(size=(3, 3)), (1, 2))
        busemann = gromov_product(xi, eta, "busemann")
        angle = gromov_product(xi, eta, "angle")
        batch = gromov_products_batch(xi.frame, eta.frame, sl3)
        assert busemann.allclose(angle, atol=1e-8)
        assert np.allclose(busemann.coords, batch, atol=1e-8)

    def test_gromov_product_of_opposite_standard_flags(self, sl3):
        g = gromov_product(Flag.standard(sl3), Flag.opposite_standard(sl3))
        assert np.allclose(g.coords, 0.0, atol=1e-12)

    def test_not_antipodal(self, sl3):
        with pytest.raises(NotAntipodal):
            gromov_product(Flag.standard(sl3), Flag.standard(sl3))

    def test_unknown_backend(self, sl3):
        with pytest.raises(ValueError):
            gromov_product(Flag.standard(sl3), Flag.opposite_standard(sl3), "exact")

    def test_diagonal_is_zero(self, sl3):
        psi = builtin_forms(sl3)["omega1"]
        assert d_psi(Flag.standard(sl3), Flag.standard(sl3), psi) == 0.0

    def test_partial_flags_use_theta_and_its_opposite(self, sl3, rng):
        xi = Flag.from_basis(sl3, rng.normal(size=(3, 3)), (1,))
        eta = Flag.from_basis(sl3, rng.normal(size=(3, 3)), (2,))
        partial = gromov_product(xi, eta)
        full = gromov_product(xi.with_theta((1, 2)), eta.with_theta((1, 2)))
        assert partial.allclose(full, atol=1e-12)

    def test_form_of_other_group(self, sl2, sl3):
        with pytest.raises(BasisMismatch):
            d_psi(Flag.standard(sl3), Flag.opposite_standard(sl3), builtin_forms(sl2)["alpha1"])


class TestProductPremetric:
    """d_pq on a product of two circles."""

    @pytest.mark.parametrize("p,q", [(1.0, 1.0), (2.0, 1.0), (1.0, 3.0)])
    def test_d_pq_closed_form(self, product2, p, q):
        xi = circle_flag(product2, [0.0, 0.0])
        eta = circle_flag(product2, [np.pi / 3, np.pi / 4])
        assert np.isclose(d_pq(xi, eta, p, q), np.sin(np.pi / 3) ** p * np.sin(np.pi / 4) ** q)

    @pytest.mark.parametrize("p,q", [(1.0, 1.0), (2.0, 1.0)])
    def test_d_pq_is_a_form_premetric(self, product2, p, q):
        xi = circle_flag(product2, [0.3, 1.1])
        eta = circle_flag(product2, [2.0, 0.4])
        expected = d_pq(xi, eta, p, q)
        assert np.isclose(d_psi(xi, eta, pq_form(product2, p, q)), expected, rtol=1e-9)
        assert np.isclose(d_psi(xi, eta, pq_form(product2, p, q), "angle"), expected, rtol=1e-9)

    def test_d_pq_needs_two_factors(self, sl3):
        with pytest.raises(BasisMismatch):
            d_pq(Flag.standard(sl3), Flag.opposite_standard(sl3), 1.0, 1.0)

    def test_pq_form_coefficients(self, product2):
        psi = pq_form(product2, 2.0, 1.0)
        assert np.allclose(psi.weight_coefficients, [4.0, 2.0])
        assert psi.name == "pq(2,1)"


class TestPremetricMatrix:
    """Pairwise values over a sample."""

    def test_hyperbolic_form_is_symmetric(self, schottky_ball):
        sample = sample_limit_set(schottky_ball, [1], max_sample=80)
        matrix = premetric_matrix(sample, builtin_forms(sample.descriptor)["alpha1"])
        assert matrix.is_symmetric()
        assert np.all(np.diag(matrix.values) == 0.0)
        off = ~np.eye(len(matrix), dtype=bool)
        assert np.all((matrix.values[off] > 0) & (matrix.values[off] <= 1.0))
        assert matrix.excluded_pairs == 0

    def test_backends_give_same_matrix(self, sl3_sample):
        sub = sl3_sample.subset(range(12))
        psi = builtin_forms(sub.descriptor)["omega1"]
        fast = premetric_matrix(sub, psi)
        slow = premetric_matrix(sub, psi, backend="busemann")
        assert np.allclose(fast.values, slow.values, rtol=1e-6, atol=1e-12)

    def test_weight_form_is_not_symmetric(self, sl3_sample):
        sub = sl3_sample.subset(range(40))
        matrix = premetric_matrix(sub, builtin_forms(sub.descriptor)["omega1"])
        assert not matrix.is_symmetric()
        assert np.allclose(matrix.symmetrized(), matrix.symmetrized().T)

    def test_rows_match_matrix(self, sl3_sample):
        sub = sl3_sample.subset(range(30))
        psi = builtin_forms(sub.descriptor)["rho"]
        matrix = premetric_matrix(sub, psi)
        rows = premetric_rows(sub.frames[:5], sub.frames, psi)
        mask = ~np.eye(30, dtype=bool)[:5]
        assert np.allclose(rows[mask], matrix.values[:5][mask])

    def test_workers_give_same_matrix(self, sl3_sample):
        psi = builtin_forms(sl3_sample.descriptor)["rho"]
        serial = premetric_matrix(sl3_sample, psi)
        parallel = premetric_matrix(sl3_sample, psi, workers=2)
        assert np.array_equal(serial.values, parallel.values)

    def test_power(self, sl3_sample):
        sub = sl3_sample.subset(range(10))
        psi = builtin_forms(sub.descriptor)["rho"]
        matrix = premetric_matrix(sub, psi)
        doubled = premetric_matrix(sub, psi * 2.0)
        assert np.allclose(matrix.power(2.0).values, doubled.values)
        assert np.isclose(comparison_ratio(matrix.power(2.0), doubled), 1.0)

    def test_swapped(self, sl3_sample):
        sub = sl3_sample.subset(range(10))
        matrix = premetric_matrix(sub, builtin_forms(sub.descriptor)["alpha1"])
        swapped = matrix.swapped()
        assert np.array_equal(swapped.values, matrix.values.T)
        assert comparison_ratio(matrix, swapped) >= 1.0
        assert comparison_ratio(swapped, matrix) == pytest.approx(comparison_ratio(matrix, swapped))

    def test_unknown_backend(self, sl3_sample):
        with pytest.raises(ValueError):
            premetric_matrix(sl3_sample.subset(range(3)), builtin_forms(sl3_sample.descriptor)["rho"], "exact")

    def test_export_binary(self, sl3_sample, tmp_path):
        sub = sl3_sample.subset(range(6))
        matrix = premetric_matrix(sub, builtin_forms(sub.descriptor)["omega1"])
        raw = matrix.export_binary(tmp_path / "premetric.bin").read_bytes()
        assert raw[:8] == b"ANOSPREM"
        assert len(raw) == 8 + 8 + 1 + 2 * 15 * 8


class TestQuasiMetricConstants:
    """Empirical quasi-triangle and quasi-symmetry constants."""

    def test_metric_has_unit_constants(self, sl2, rng):
        points = rng.normal(size=(20, 2))
        values = np.linalg.norm(points[:, None] - points[None, :], axis=-1)
        matrix = PremetricMatrix(values, LinearForm(sl2, [1.0], "root"), "determinant")
        result = quasi_metric_constants(matrix)
        assert result["N_est"] <= 1.0 + 1e-12
        assert result["R_est"] == 1.0
        assert result["triples"] == 20 * 19 * 18

    def test_sampled_triples(self, sl2, rng):
        points = rng.normal(size=(80, 2))
        values = np.linalg.norm(points[:, None] - points[None, :], axis=-1)
        matrix = PremetricMatrix(values, LinearForm(sl2, [1.0], "root"), "determinant")
        result = quasi_metric_constants(matrix, max_triples=5000, rng=np.random.default_rng(0))
        assert result["N_est"] <= 1.0 + 1e-12
        assert result["triples"] <= 5000

    def test_squared_metric_breaks_triangle(self, sl2):
        points = np.array([[0.0], [1.0], [2.0]])
        values = np.abs(points - points.T) ** 2
        matrix = PremetricMatrix(values, LinearForm(sl2, [1.0], "root"), "determinant")
        assert np.isclose(quasi_metric_constants(matrix)["N_est"], 2.0)

    def test_sample_constants(self, sl3_sample):
        sub = sl3_sample.subset(range(40))
        matrix = premetric_matrix(sub, builtin_forms(sub.descriptor)["omega1"])
        result = quasi_metric_constants(matrix)
        assert 0.0 < result["N_est"] < np.inf
        assert result["R_est"] > 1.0

    def test_needs_three_points(self, sl2):
        matrix = PremetricMatrix(np.zeros((2, 2)), LinearForm(sl2, [1.0], "root"), "determinant")
        with pytest.raises(InsufficientSample) as excinfo:
            quasi_metric_constants(matrix)
        assert excinfo.value.exit_code == 1
        assert excinfo.value.to_dict()["error"] == "insufficient_sample"
