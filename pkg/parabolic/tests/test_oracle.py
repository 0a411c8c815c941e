import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from parabolic.exceptions import HypothesisError
from parabolic.forward_solver import Control, solve_forward
from parabolic.hilbert_core import DIRICHLET, Field, Grid
from parabolic.operators import (
    FIRST_COMPONENT, LINEAR, PROJECTION_FIRST, ControlMap, Nonlinearity, PotentialDrift, apply_A,
    preset,
)
from parabolic.oracle import OdeReduction, analytic_min_time_scalar, brute_force_min_time


class AnalyticTests(SimpleTestCase):
    def test_logarithmic_minimal_time(self):
        result = analytic_min_time_scalar(1.0, 0.0, 0.5, 1.0)
        self.assertTrue(result.feasible)
        self.assertAlmostEqual(result.t_star, np.log(2.0), places=12)

    def test_pure_integrator(self):
        self.assertAlmostEqual(analytic_min_time_scalar(0.0, 1.0, -1.0, 4.0).t_star, 0.5)

    def test_target_equal_to_start(self):
        self.assertEqual(analytic_min_time_scalar(1.0, 0.3, 0.3, 1.0).t_star, 0.0)

    def test_unreachable_target(self):
        result = analytic_min_time_scalar(1.0, 0.0, 2.0, 1.0)
        self.assertFalse(result.feasible)
        self.assertIsNone(result.t_star)

    def test_decreasing_in_the_bound(self):
        times = [analytic_min_time_scalar(1.0, 0.0, 0.5, rho).t_star for rho in (1.0, 2.0, 4.0)]
        self.assertTrue(times[0] > times[1] > times[2])


class BruteForceTests(SimpleTestCase):
    def test_scalar_matches_the_closed_form(self):
        dt = 1e-3
        result = brute_force_min_time(OdeReduction.scalar(1.0, 0.0, 0.5, 1.0), dt, 1, 2.0)
        self.assertTrue(result.feasible)
        self.assertLessEqual(abs(result.t_star - np.log(2.0)), 2 * dt)
        self.assertEqual(result.detail['initial_sign'], 1.0)
        self.assertEqual(result.detail['switch_times'], [])

    def test_grid_refinement_is_consistent(self):
        red = OdeReduction.scalar(0.5, 1.0, -0.5, 2.0)
        coarse = brute_force_min_time(red, 2e-3, 1, 3.0)
        fine = brute_force_min_time(red, 1e-3, 1, 3.0)
        self.assertLessEqual(abs(coarse.t_star - fine.t_star), 2e-3)
        self.assertEqual(coarse.detail['initial_sign'], -1.0)

    def test_unreachable_within_the_horizon(self):
        result = brute_force_min_time(OdeReduction.scalar(1.0, 0.0, 2.0, 1.0), 1e-2, 0, 2.0)
        self.assertFalse(result.feasible)

    def test_target_equal_to_start(self):
        result = brute_force_min_time(OdeReduction.scalar(1.0, 0.3, 0.3, 1.0), 1e-2, 1)
        self.assertEqual(result.t_star, 0.0)

    def test_full_target_of_a_linear_system(self):
        red = OdeReduction([[0.0, 1.0], [0.0, 0.0]], 1.0, [0.0, 0.0], [0.0, 0.0])
        self.assertEqual(brute_force_min_time(red, 1e-2, 1).t_star, 0.0)
        red = OdeReduction([[1.0, 0.0], [0.0, 1.0]], 1.0, [0.0, 0.0], [0.3, 0.0],
                           gain=[1.0, 0.0])
        result = brute_force_min_time(red, 1e-3, 1, 2.0)
        self.assertTrue(result.feasible)
        self.assertIsNotNone(result.detail['distance_tol'])
        self.assertLessEqual(abs(result.t_star - np.log(1.0 / 0.7)), 1e-2)

    def test_more_switches_never_take_longer(self):
        dt = 1e-2
        red = OdeReduction([[0.0, -1.0], [0.0, 0.0]], 1.0, [1.0, 0.0], [0.0, 0.0], gain=[0.0, 1.0])
        self.assertFalse(brute_force_min_time(red, dt, 0, 3.0).feasible)
        results = [brute_force_min_time(red, dt, budget, 3.0) for budget in (1, 2, 3)]
        self.assertTrue(all(result.feasible for result in results))
        times = [result.t_star for result in results]
        self.assertLessEqual(abs(times[0] - 2.0), dt)
        for fewer, more in zip(times, times[1:]):
            self.assertLessEqual(more, fewer + dt)
        for result in results:
            self.assertLessEqual(result.detail['distance_tol'], dt ** 2 * 2.0 + 1e-15)
        self.assertAlmostEqual(results[0].detail['switch_times'][0], 1.0, delta=dt)
        self.assertEqual(results[0].detail['initial_sign'], -1.0)

    def test_switch_budget_is_bounded(self):
        with self.assertRaises(ValueError):
            brute_force_min_time(OdeReduction.scalar(1.0, 0.0, 0.5, 1.0), 1e-2, 4)


class ReductionTests(SimpleTestCase):
    def test_scalar_reduction_of_a_linear_potential(self):
        spec = PotentialDrift(Grid.interval(3, length=4.0), beta=Nonlinearity(LINEAR, a=1.0))
        red = OdeReduction.from_spec(spec, ControlMap.for_spec(spec), [0.0], [0.5], 2.0)
        assert_allclose(red.matrix, [[1.0]])
        self.assertAlmostEqual(red.rho, 1.0)

    def test_needs_neumann_data(self):
        spec = preset('heat', Grid.interval(5, boundary=DIRICHLET))
        with self.assertRaises(HypothesisError):
            OdeReduction.from_spec(spec, ControlMap.for_spec(spec), [0.0], [0.5], 1.0)

    def test_systems_need_first_component_control(self):
        spec = preset('reaction_case_iii', Grid.interval(3))
        with self.assertRaises(HypothesisError):
            OdeReduction.from_spec(spec, ControlMap.for_spec(spec), [0.0, 0.0], [0.5, 0.0], 1.0)

    def test_phase_field_potential_acts_on_the_order_parameter(self):
        spec = preset('phase_field', Grid.interval(3))
        cmap = ControlMap.for_spec(spec, mode=FIRST_COMPONENT, projection=PROJECTION_FIRST)
        red = OdeReduction.from_spec(spec, cmap, [0.0, 0.5], [0.2, 0.0], 1.0)
        states = np.array([[0.3, -0.7]])
        expected = apply_A(spec, Field.constant(spec.grid, states[0], 2)).matrix[:, 0]
        assert_allclose(red.drift(states)[0], expected, atol=1e-12)

    def test_bang_sequence_drives_the_pde_to_the_target(self):
        grid = Grid.interval(3)
        spec = preset('reaction_case_iii', grid)
        cmap = ControlMap.for_spec(spec, mode=FIRST_COMPONENT, projection=PROJECTION_FIRST)
        red = OdeReduction.from_spec(spec, cmap, [0.0, 0.0], [0.5, 0.0], 2.0)
        result = brute_force_min_time(red, 1e-3, 1, 2.0)
        self.assertTrue(result.feasible)

        steps = int(round(result.t_star / 1e-3))
        switches = result.detail['switch_times']

        def bang(t):
            sign = result.detail['initial_sign'] * (-1.0) ** sum(t >= s for s in switches)
            return Field.constant(grid, [sign * red.rho, 0.0], 2)

        control = Control.from_function(cmap, result.t_star, steps, 2.0, bang)
        final = solve_forward(spec, cmap, Field.zeros(grid, 2), control).final
        assert_allclose(final.matrix[0], 0.5, atol=1e-2)
