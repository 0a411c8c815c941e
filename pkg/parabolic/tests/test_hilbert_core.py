import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from scipy import optimize

from parabolic.exceptions import (
    IndeterminacyError, NonFiniteError, ShapeError, SingularityError,
)
from parabolic.hilbert_core import (
    DIRICHLET, H1, HMINUS1, L2, L4, ROBIN, Field, Grid, NormTag, dual_norm,
    duality_map_F, duality_map_inverse, gamma_apply, gamma_power, inner_product,
    laplacian_matrix, norm, random_smooth_field, resolvent_eF_NK, resolvent_rows, row_norms, sign,
    spectral_laplacian, yosida_apply,
)


class GridTests(SimpleTestCase):
    def test_dirichlet_grid_holds_interior_nodes(self):
        grid = Grid.interval(9, boundary=DIRICHLET)
        self.assertAlmostEqual(grid.spacing[0], 0.1)
        assert_allclose(grid.coordinates[0], 0.1 * np.arange(1, 10))
        self.assertAlmostEqual(grid.measure, 0.9)

    def test_neumann_weights_integrate_constants_exactly(self):
        grid = Grid.interval(11, length=2.0)
        self.assertAlmostEqual(grid.measure, 2.0)
        self.assertEqual(grid.weights[0], grid.weights[1] / 2)

    def test_rectangle_is_tensor_product(self):
        grid = Grid.rectangle((4, 5), (1.0, 2.0))
        self.assertEqual(grid.size, 20)
        self.assertAlmostEqual(grid.measure, 2.0)

    def test_rejects_degenerate_grids(self):
        with self.assertRaises(ShapeError):
            Grid.interval(2)
        with self.assertRaises(ShapeError):
            Grid.interval(5, boundary=ROBIN, robin_gamma=0.0)

    def test_field_rejects_bad_shapes_and_values(self):
        grid = Grid.interval(5)
        with self.assertRaises(ShapeError):
            Field(grid, np.zeros(4))
        with self.assertRaises(NonFiniteError):
            Field(grid, [0.0, np.nan, 0.0, 0.0, 0.0])
        with self.assertRaises(ShapeError):
            Field.zeros(grid) + Field.zeros(Grid.interval(6))


class LaplacianTests(SimpleTestCase):
    def test_self_adjoint_in_weighted_product(self):
        for grid in (Grid.interval(12), Grid.interval(12, boundary=ROBIN, robin_gamma=2.0),
                     Grid.rectangle((5, 6), boundary=DIRICHLET)):
            stiffness = grid.weights[:, None] * laplacian_matrix(grid)
            assert_allclose(stiffness, stiffness.T, atol=1e-9)

    def test_dirichlet_eigenvalues_approach_continuum(self):
        spectrum = spectral_laplacian(Grid.interval(63, boundary=DIRICHLET))
        self.assertAlmostEqual(spectrum.eigenvalues[0] / np.pi ** 2, 1.0, places=3)
        self.assertAlmostEqual(spectrum.eigenvalues[1] / (4 * np.pi ** 2), 1.0, places=2)

    def test_neumann_kernel_is_constants(self):
        spectrum = spectral_laplacian(Grid.interval(20))
        self.assertEqual(spectrum.eigenvalues[0], 0.0)
        first = spectrum.eigenvector(0)
        assert_allclose(first, first[0] * np.ones(20), atol=1e-10)

    def test_negative_powers_need_an_invertible_operator(self):
        grid = Grid.interval(10)
        with self.assertRaises(SingularityError):
            gamma_power(Field.constant(grid, 1.0), spectral_laplacian(grid), -0.5)
        shifted = gamma_power(Field.constant(grid, 1.0), spectral_laplacian(grid, 1.0), -0.5)
        assert_allclose(shifted.values, 1.0, atol=1e-10)

    def test_sine_has_the_continuum_norm(self):
        grid = Grid.interval(199, boundary=DIRICHLET)
        y = Field.from_function(grid, lambda x: np.sin(np.pi * x))
        self.assertAlmostEqual(norm(y), 1.0 / np.sqrt(2.0), places=12)

    def test_gamma_acts_on_eigenvectors_by_eigenvalues(self):
        grid = Grid.interval(15, boundary=ROBIN, robin_gamma=1.5)
        spectrum = spectral_laplacian(grid, 0.5)
        for index in (0, 3, 14):
            vector = Field(grid, spectrum.eigenvector(index))
            assert_allclose(gamma_apply(vector, spectrum).values,
                            spectrum.eigenvalues[index] * vector.values, atol=1e-8)

    def test_fractional_powers_form_a_group(self):
        grid = Grid.interval(21, boundary=DIRICHLET)
        spectrum = spectral_laplacian(grid)
        y = random_smooth_field(grid, np.random.default_rng(11))
        twice = gamma_power(gamma_power(y, spectrum, 0.3), spectrum, 0.4)
        assert_allclose(twice.values, gamma_power(y, spectrum, 0.7).values, rtol=1e-8, atol=1e-10)
        back = gamma_power(gamma_power(y, spectrum, 0.5), spectrum, -0.5)
        assert_allclose(back.values, y.values, atol=1e-10)
        assert_allclose(gamma_power(y, spectrum, 1.0).values, gamma_apply(y, spectrum).values,
                        rtol=1e-8, atol=1e-8)
        assert_allclose(gamma_power(y, spectrum, 0.0).values, y.values, atol=1e-12)

    def test_yosida_approximation_is_dominated_and_shrinks_with_nu(self):
        grid = Grid.interval(31, boundary=DIRICHLET)
        spectrum = spectral_laplacian(grid)
        rng = np.random.default_rng(12)
        for _ in range(5):
            y = random_smooth_field(grid, rng)
            full = norm(gamma_apply(y, spectrum))
            nus = (1e-5, 1e-3, 1e-2, 1e-1, 1.0)
            sizes = [norm(yosida_apply(y, spectrum, nu)) for nu in nus]
            self.assertLessEqual(sizes[0], full * (1.0 + 1e-12))
            self.assertTrue(all(later < earlier for earlier, later in zip(sizes, sizes[1:])),
                            sizes)
            self.assertLess(abs(sizes[0] - full) / full, 0.05)


class DualityMapTests(SimpleTestCase):
    def test_duality_contract_over_random_fields(self):
        rng = np.random.default_rng(3)
        cases = ((L2, Grid.interval(16)), (L4, Grid.interval(16)),
                 (HMINUS1, Grid.interval(16, boundary=DIRICHLET)))
        for tag, grid in cases:
            for _ in range(1000):
                u = Field(grid, rng.standard_normal(grid.size) * rng.uniform(0.1, 10.0))
                image = duality_map_F(u, tag)
                size = norm(u, tag)
                self.assertAlmostEqual(inner_product(image, u) / size ** 2, 1.0, places=9)
                self.assertAlmostEqual(dual_norm(image, tag) / size, 1.0, places=9)

    def test_inverse_undoes_the_duality_map(self):
        rng = np.random.default_rng(4)
        grid = Grid.interval(12, boundary=DIRICHLET)
        for tag in (L2, L4, H1, HMINUS1):
            u = Field(grid, rng.standard_normal(grid.size))
            assert_allclose(duality_map_inverse(duality_map_F(u, tag), tag).values, u.values,
                            atol=1e-9)

    def test_hilbert_inner_products_are_symmetric(self):
        rng = np.random.default_rng(5)
        grid = Grid.interval(10, boundary=DIRICHLET)
        a = random_smooth_field(grid, rng)
        b = random_smooth_field(grid, rng)
        for tag in (L2, H1, HMINUS1):
            self.assertAlmostEqual(inner_product(a, b, tag), inner_product(b, a, tag), places=10)

    def test_norm_tags_parse(self):
        self.assertEqual(NormTag.parse('Lp(4)'), L4)
        self.assertEqual(NormTag.parse('L4'), L4)
        self.assertEqual(NormTag.parse('Hminus1'), HMINUS1)
        self.assertAlmostEqual(L4.conjugate, 4.0 / 3.0)
        self.assertEqual(NormTag.parse('HMINUS1'), HMINUS1)
        for text in ('Lp(3)', 'L3', 'Lp(x)'):
            with self.assertRaises(ShapeError):
                NormTag.parse(text)

    def test_hminus1_needs_dirichlet_data(self):
        with self.assertRaises(ShapeError):
            norm(Field.constant(Grid.interval(5), 1.0), HMINUS1)


def _ball_minimizer(zeta, tag, eps, rho):
    """min (ε/2)‖u‖² − ⟨ζ, u⟩ over ‖u‖ ≤ ρ by a general-purpose constrained solver."""
    grid = zeta.grid

    def objective(values):
        u = Field(grid, values)
        return 0.5 * eps * norm(u, tag) ** 2 - inner_product(zeta, u)

    constraint = {'type': 'ineq', 'fun': lambda values: rho ** 2 - norm(Field(grid, values), tag) ** 2}
    result = optimize.minimize(objective, np.zeros(grid.size), method='SLSQP',
                               constraints=[constraint],
                               options={'ftol': 1e-15, 'maxiter': 1000})
    return Field(grid, result.x), objective


class ResolventTests(SimpleTestCase):
    def test_matches_constrained_minimization_in_l2(self):
        rng = np.random.default_rng(6)
        grid = Grid.interval(6)
        for scale in (0.05, 20.0):
            zeta = Field(grid, scale * rng.standard_normal(grid.size))
            exact = resolvent_eF_NK(zeta, L2, 0.5, 1.0)
            brute, _ = _ball_minimizer(zeta, L2, 0.5, 1.0)
            assert_allclose(exact.values, brute.values, atol=1e-5)

    def test_is_optimal_in_l4(self):
        rng = np.random.default_rng(7)
        grid = Grid.interval(5)
        for scale in (0.05, 20.0):
            zeta = Field(grid, scale * rng.standard_normal(grid.size))
            exact = resolvent_eF_NK(zeta, L4, 0.5, 1.0)
            brute, objective = _ball_minimizer(zeta, L4, 0.5, 1.0)
            self.assertLessEqual(norm(exact, L4), 1.0 + 1e-12)
            self.assertLessEqual(objective(exact.values), objective(brute.values) + 1e-8)

    def test_saturates_on_the_ball(self):
        grid = Grid.interval(8)
        zeta = Field.constant(grid, 100.0)
        self.assertAlmostEqual(norm(resolvent_eF_NK(zeta, L2, 1e-3, 2.0)), 2.0, places=12)
        interior = resolvent_eF_NK(Field.constant(grid, 0.01), L2, 1.0, 2.0)
        assert_allclose(interior.values, 0.01)

    def test_zero_direction(self):
        zero = Field.zeros(Grid.interval(5))
        assert_allclose(sign(zero).values, 0.0)
        assert_allclose(resolvent_eF_NK(zero, L2, 0.1, 1.0).values, 0.0)
        with self.assertRaises(IndeterminacyError):
            resolvent_eF_NK(zero, L2, 0.0, 1.0)

    def test_sign_has_unit_norm(self):
        rng = np.random.default_rng(8)
        grid = Grid.interval(9, boundary=DIRICHLET)
        for tag in (L2, L4, H1, HMINUS1):
            zeta = Field(grid, rng.standard_normal(grid.size))
            self.assertAlmostEqual(norm(sign(zeta, tag), tag), 1.0, places=9)


class RowTests(SimpleTestCase):
    def test_row_norms_match_field_norms(self):
        rng = np.random.default_rng(9)
        grid = Grid.interval(7, boundary=DIRICHLET)
        rows = rng.standard_normal((4, 2 * grid.size))
        for tag in (L2, L4, H1, HMINUS1):
            fields = [Field(grid, row, 2) for row in rows]
            assert_allclose(row_norms(grid, 2, rows, tag), [norm(f, tag) for f in fields],
                            rtol=1e-12)
            assert_allclose(row_norms(grid, 2, rows, tag, dual=True),
                            [dual_norm(f, tag) for f in fields], rtol=1e-12)

    def test_resolvent_rows_match_the_single_field_resolvent(self):
        rng = np.random.default_rng(10)
        grid = Grid.interval(6, boundary=DIRICHLET)
        scales = np.array([0.01, 0.1, 1.0, 10.0, 0.0])
        rows = rng.standard_normal((5, grid.size)) * scales[:, None]
        for tag in (L2, L4, H1):
            expected = [resolvent_eF_NK(Field(grid, row), tag, 0.5, 1.0).values for row in rows]
            assert_allclose(resolvent_rows(grid, 1, rows, tag, 0.5, 1.0), expected,
                            rtol=1e-12, atol=1e-15)
