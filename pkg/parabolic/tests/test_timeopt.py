import time

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from parabolic.exceptions import HypothesisError
from parabolic.forward_solver import Control, solve_forward
from parabolic.hilbert_core import Field, Grid
from parabolic.operators import (
    FIRST_COMPONENT, LINEAR, NONLOCAL, PROJECTION_FIRST, ControlMap, Nonlinearity, PotentialDrift,
    preset,
)
from parabolic.oracle import OdeReduction, brute_force_min_time
from parabolic.timeopt import (
    PenalizedProblem, eps_continuation, eval_J_eps, horizon_derivative, inner_solve_control,
    outer_minimize,
)

LN2 = np.log(2.0)


def scalar_problem(eps=1e-2, dt=1e-2, **options):
    """y′ + y = u on a three-node Neumann grid from 0 to 1/2 with |u| ≤ 1; T* = ln 2."""
    grid = Grid.interval(3)
    spec = PotentialDrift(grid, beta=Nonlinearity(LINEAR, a=1.0))
    return PenalizedProblem(spec, ControlMap.for_spec(spec), Field.zeros(grid),
                            Field.constant(grid, 0.5), 1.0, eps, dt, **options)


class ProblemTests(SimpleTestCase):
    def test_rejects_bad_parameters(self):
        with self.assertRaises(HypothesisError):
            scalar_problem(eps=0.0)
        with self.assertRaises(HypothesisError):
            scalar_problem(theta0=1.5)

    def test_target_must_differ_from_the_start(self):
        grid = Grid.interval(3)
        spec = preset('heat', grid)
        with self.assertRaises(HypothesisError):
            PenalizedProblem(spec, ControlMap.for_spec(spec), Field.zeros(grid),
                             Field.zeros(grid), 1.0, 0.1, 0.01)


class ObjectiveTests(SimpleTestCase):
    def test_matches_the_closed_form_for_a_saturated_control(self):
        prob = scalar_problem()
        control = Control.constant(prob.control_map, 0.5, 50, 1.0,
                                   Field.constant(prob.y0.grid, 1.0))
        final = 1.0 - 1.01 ** -50
        expected = 0.5 + (final - 0.5) ** 2 / (2 * prob.eps) + 0.5 * prob.eps * 0.5
        self.assertAlmostEqual(eval_J_eps(prob, 0.5, control) / expected, 1.0, places=10)

    def test_reference_equal_to_the_control_adds_nothing(self):
        prob = scalar_problem()
        control = Control.constant(prob.control_map, 0.5, 50, 1.0,
                                   Field.constant(prob.y0.grid, 0.3))
        plain = eval_J_eps(prob, 0.5, control)
        same = prob.with_eps(prob.eps, control)
        self.assertAlmostEqual(eval_J_eps(same, 0.5, control), plain, places=12)
        zero = prob.with_eps(prob.eps, control.with_values(np.zeros_like(control.values)))
        self.assertGreater(eval_J_eps(zero, 0.5, control), plain)

    def test_short_horizon_limit(self):
        prob = scalar_problem()
        control = Control.zeros(prob.control_map, 1e-6, 1, 1.0)
        self.assertAlmostEqual(eval_J_eps(prob, 1e-6, control), 0.25 / (2 * prob.eps), places=5)

    def test_horizon_must_match_the_control(self):
        prob = scalar_problem()
        with self.assertRaises(ValueError):
            eval_J_eps(prob, 0.7, Control.zeros(prob.control_map, 0.5, 50, 1.0))


class InnerSolveTests(SimpleTestCase):
    def test_short_horizons_saturate_the_bound(self):
        prob = scalar_problem()
        inner = inner_solve_control(prob, 0.5)
        self.assertTrue(inner.converged)
        assert_allclose(inner.control.values, 1.0, atol=1e-8)
        self.assertLessEqual(inner.stationarity, 1e-5 * np.sqrt(0.5))
        self.assertTrue(np.all(np.diff(inner.history) <= 0.0))
        self.assertAlmostEqual(inner.objective, eval_J_eps(prob, 0.5, inner.control), places=12)

    def test_iterates_stay_admissible(self):
        prob = scalar_problem(eps=1e-3, max_iterations=30)
        inner = inner_solve_control(prob, 0.9)
        self.assertTrue(np.all(inner.control.norms() <= 1.0 + 1e-12))
        self.assertTrue(np.all(np.diff(inner.history) <= 0.0))
        self.assertLessEqual(inner.iterations, 30)

    def test_large_penalty_barely_controls(self):
        inner = inner_solve_control(scalar_problem(eps=100.0), 0.5)
        self.assertTrue(inner.converged)
        self.assertLess(np.abs(inner.control.values).max(), 1e-3)

    def test_iteration_budget(self):
        inner = inner_solve_control(scalar_problem(max_iterations=0), 0.5)
        self.assertFalse(inner.converged)
        self.assertEqual(inner.iterations, 0)

    def test_unconstrained_quadratic_matches_the_normal_equations(self):
        grid = Grid.interval(3)
        spec = preset('heat', grid)
        cmap = ControlMap.for_spec(spec)
        target = Field(grid, [0.2, 0.1, -0.1])
        T, steps, rho = 0.5, 10, 1e6
        prob = PenalizedProblem(spec, cmap, Field.zeros(grid), target, rho, 1.0, T / steps)

        size = steps * grid.size
        sensitivity = np.zeros((grid.size, size))
        for column in range(size):
            unit = np.zeros(size)
            unit[column] = 1.0
            control = Control(cmap, T, unit.reshape(steps, grid.size), rho)
            sensitivity[:, column] = solve_forward(spec, cmap, prob.y0, control).final.values
        W = np.diag(grid.weights)
        D = np.kron(np.eye(steps), W) * (T / steps)
        lhs = sensitivity.T @ W @ sensitivity + D
        rhs = sensitivity.T @ W @ target.values
        expected = np.linalg.solve(lhs, rhs).reshape(steps, grid.size)

        inner = inner_solve_control(prob, T)
        self.assertTrue(inner.converged)
        assert_allclose(inner.control.values, expected, atol=1e-6)


class OuterSearchTests(SimpleTestCase):
    def test_continuation_approaches_the_minimal_time(self):
        prob = scalar_problem(max_iterations=25, t_tol=1e-6)
        reports = eps_continuation(prob, [1e-2, 1e-3, 1e-4], (0.4, 1.0))
        times = [report.T for report in reports]
        self.assertTrue(times[0] < times[1] < times[2], times)
        final = reports[-1]
        self.assertLessEqual(abs(final.T - LN2), 1e-2)
        for report in reports:
            self.assertTrue(report.converged)
            self.assertFalse(report.at_boundary)
            self.assertLessEqual(report.miss, np.sqrt(2 * report.eps * LN2
                                                      + report.eps ** 2 * LN2))
            self.assertLessEqual(abs(report.dJ_dT), 0.05)
            self.assertGreaterEqual(report.saturation, 0.95)
        self.assertLessEqual(final.hamiltonian_residual, 0.05)
        self.assertLessEqual(final.bang_bang_residual, 1e-8)
        self.assertEqual(final.bang_bang_skipped, 0)
        self.assertEqual(list(final.series.columns),
                         ['t', 'norm_U', 'norm_Bstar_p', 'hamiltonian', 'bang_bang', 'transversality'])
        self.assertEqual(final.as_dict()['T_eps_star'], final.T)

    def test_penalized_time_sits_below_the_minimal_time(self):
        prob = scalar_problem(max_iterations=25)
        report = outer_minimize(prob, (0.4, 1.0))
        self.assertLess(report.T, LN2)
        self.assertGreater(report.T, LN2 - 0.1)
        self.assertLessEqual(abs(horizon_derivative(prob, report.inner)), 0.05)

    def test_schedule_validation(self):
        prob = scalar_problem()
        with self.assertRaises(ValueError):
            eps_continuation(prob, [1e-3, 1e-2], (0.4, 1.0))
        with self.assertRaises(ValueError):
            eps_continuation(prob, [1e-2, -1e-3], (0.4, 1.0))
        with self.assertRaises(ValueError):
            outer_minimize(prob, (1.0, 0.4))

    def test_rescaled_units_keep_the_optimal_horizon(self):
        grid = Grid.interval(3)
        spec = PotentialDrift(grid, beta=Nonlinearity(LINEAR, a=1.0))
        kernel = np.diag(1.0 / grid.weights)
        reports = []
        for scale in (1.0, 2.0):
            cmap = ControlMap.for_spec(spec, mode=NONLOCAL, kernel=scale ** 2 * kernel,
                                       control_grid=grid)
            prob = PenalizedProblem(spec, cmap, Field.zeros(grid), Field.constant(grid, 0.5 * scale),
                                    1.0 / scale, 1e-2 * scale ** 2, 1e-2)
            reports.append(outer_minimize(prob, (0.4, 1.0)))
        plain, scaled = reports
        self.assertTrue(plain.converged and scaled.converged)
        self.assertAlmostEqual(plain.T, scaled.T, delta=1e-6)
        self.assertAlmostEqual(plain.objective, scaled.objective, delta=1e-8)
        assert_allclose(scaled.inner.control.values, 0.5 * plain.inner.control.values, atol=1e-6)

    def test_chained_reference_energy_shrinks_along_the_schedule(self):
        prob = scalar_problem()
        reports = eps_continuation(prob, [1e-1, 1e-2, 1e-3, 1e-4], (0.4, 1.0),
                                   chain_reference=True)
        self.assertEqual(reports[0].h_energy, 0.0)
        energies = [report.h_energy for report in reports[1:]]
        self.assertTrue(all(later <= earlier for earlier, later in zip(energies, energies[1:])),
                        energies)
        self.assertTrue(all(report.converged for report in reports))


class AcceptanceTests(SimpleTestCase):
    def test_scalar_schedule_at_the_fine_step(self):
        started = time.perf_counter()
        reports = eps_continuation(scalar_problem(dt=1e-3), [1e-1, 1e-2, 1e-3, 1e-4], (0.4, 1.0))
        elapsed = time.perf_counter() - started
        self.assertLess(elapsed, 60.0)
        self.assertTrue(all(report.converged for report in reports))
        self.assertLessEqual(abs(reports[-1].T - LN2), 1e-2)

    def test_first_component_system_matches_the_switching_oracle(self):
        grid = Grid.interval(3)
        spec = preset('reaction_case_iii', grid)
        cmap = ControlMap.for_spec(spec, mode=FIRST_COMPONENT, projection=PROJECTION_FIRST)
        target = Field.constant(grid, [0.5, 0.0], 2)
        dt = 1e-2
        oracle = brute_force_min_time(OdeReduction.from_spec(spec, cmap, [0.0, 0.0], [0.5, 0.0],
                                                             1.0), dt, horizon=2.0)
        self.assertTrue(oracle.feasible)
        self.assertAlmostEqual(oracle.t_star, 0.71094, delta=dt)

        prob = PenalizedProblem(spec, cmap, Field.zeros(grid, 2), target, 1.0, 1e-2, dt)
        reports = eps_continuation(prob, [1e-2, 1e-3, 1e-4], (0.4, 1.2))
        final = reports[-1]
        self.assertTrue(all(report.converged for report in reports))
        self.assertLessEqual(final.hamiltonian_residual, 0.05)
        self.assertLessEqual(final.transversality, 0.05)
        self.assertLessEqual(abs(final.dJ_dT), 0.05)
        self.assertGreaterEqual(final.saturation, 0.95)
        self.assertLessEqual(abs(final.T - oracle.t_star), 0.05 * oracle.t_star)
