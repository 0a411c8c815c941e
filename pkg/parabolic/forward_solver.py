"""
Backward Euler integration of y′ + A_H y = Bu.

Each step solves y⁺ + Δt·A_H(y⁺) = y + Δt·Bu with a full Newton iteration
(Jacobian I + Δt·A′(y⁺)). A step whose Newton loop fails is split in two,
recursively, up to ``MAX_HALVINGS`` times; the accepted substeps are stored
on the trajectory because the variation and adjoint sweeps replay them.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
from scipy import linalg

from .exceptions import AdmissibilityError, ShapeError, SolverError, StepFailure
from .hilbert_core import Field
from .operators import apply_A, control_row_norms

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
MAX_NEWTON = 25
MAX_HALVINGS = 6
ADMISSIBILITY_SLACK = 1e-12


@dataclass(eq=False)
class Control:
    """Piecewise constant control: row k acts on [t_k, t_k+1)."""
    control_map: object
    horizon: float
    values: np.ndarray
    rho: float

    def __post_init__(self):
        self.horizon = float(self.horizon)
        self.rho = float(self.rho)
        values = np.array(self.values, dtype=float)
        size = self.control_map.control_components * self.control_map.control_grid.size
        if values.ndim != 2 or values.shape[1] != size or values.shape[0] < 1:
            raise ShapeError('Control samples do not match the control space',
                             shape=values.shape, expected=size)
        if not self.horizon > 0 or not self.rho > 0:
            raise ValueError('Horizon and control bound must be positive')
        self.values = values
        norms = self.norms()
        worst = int(np.argmax(norms))
        if norms[worst] > self.rho * (1.0 + ADMISSIBILITY_SLACK):
            raise AdmissibilityError(step=worst, norm=float(norms[worst]), rho=self.rho)

    @classmethod
    def zeros(cls, control_map, horizon, steps, rho):
        size = control_map.control_components * control_map.control_grid.size
        return cls(control_map, horizon, np.zeros((steps, size)), rho)

    @classmethod
    def constant(cls, control_map, horizon, steps, rho, value):
        control_map.check_control(value)
        return cls(control_map, horizon, np.tile(value.values, (steps, 1)), rho)

    @classmethod
    def from_function(cls, control_map, horizon, steps, rho, function):
        """``function(t)`` returns the control Field applied on the step starting at t."""
        times = horizon / steps * np.arange(steps)
        rows = []
        for t in times:
            value = function(t)
            control_map.check_control(value)
            rows.append(value.values)
        return cls(control_map, horizon, np.array(rows), rho)

    @property
    def steps(self):
        return self.values.shape[0]

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    def step(self, k):
        return Field(self.control_map.control_grid, self.values[k],
                     self.control_map.control_components)

    def norms(self):
        return control_row_norms(self.control_map, self.values)

    def with_values(self, values):
        return Control(self.control_map, self.horizon, values, self.rho)

    def resample(self, horizon, steps):
        """Same profile in normalized time s = t/T on a new horizon."""
        centers = (np.arange(steps) + 0.5) / steps
        source = np.minimum((centers * self.steps).astype(int), self.steps - 1)
        return Control(self.control_map, horizon, self.values[source], self.rho)

    def l2_distance(self, other):
        gaps = control_row_norms(self.control_map, self.values - other.values)
        return float(np.sqrt(self.dt * np.sum(gaps ** 2)))

    def as_frame(self, nodes=False):
        frame = pd.DataFrame({'t': self.times[:-1], 'norm_U': self.norms()})
        if nodes:
            columns = [f'u{i}' for i in range(self.values.shape[1])]
            frame = pd.concat([frame, pd.DataFrame(self.values, columns=columns)], axis=1)
        return frame


@dataclass(eq=False)
class Trajectory:
    spec: object
    times: np.ndarray
    states: np.ndarray
    substeps: list
    iterations: np.ndarray
    residuals: np.ndarray
    image: object = None

    def __len__(self):
        return len(self.times)

    @property
    def steps(self):
        return len(self.times) - 1

    def state(self, k):
        return Field(self.spec.grid, self.states[k], self.spec.components)

    @property
    def final(self):
        return self.state(-1)

    @cached_property
    def diagnostics(self):
        image = self.image or (lambda k, f: apply_A(self.spec, f))
        return state_diagnostics(self.spec, self.states, image)

    @property
    def norm_H(self):
        return self.diagnostics[0]

    @property
    def norm_V(self):
        return self.diagnostics[1]

    @property
    def norm_AH(self):
        return self.diagnostics[2]

    def energy_estimate(self):
        """sup ‖y‖_V and ∫‖A_H y‖²_H (right-endpoint quadrature)."""
        widths = np.diff(self.times)
        return {
            'sup_norm_V': float(np.max(self.norm_V)),
            'integral_AH_squared': float(np.sum(widths * self.norm_AH[1:] ** 2)),
        }

    def as_frame(self, nodes=False):
        frame = pd.DataFrame({'t': self.times, 'norm_H': self.norm_H,
                              'norm_V': self.norm_V, 'norm_AH': self.norm_AH})
        if nodes:
            n = self.spec.grid.size
            columns = [f'y{i // n}_{i % n}' for i in range(self.states.shape[1])]
            frame = pd.concat([frame, pd.DataFrame(self.states, columns=columns)], axis=1)
        return frame


def _residual_norm(values, weights):
    return float(np.sqrt(np.sum(weights * values ** 2)))


def _newton(spec, start, rhs, dt, weights):
    """Solve x + dt·A(x) = rhs from ``start``; returns (x, iterations, residual)."""
    x = start.copy()
    tolerance = NEWTON_TOL * (1.0 + _residual_norm(start, weights))
    if spec.linear:
        x = spec.step_inverse(dt) @ rhs
        residual = _residual_norm(x + dt * spec.apply(x) - rhs, weights)
        if residual <= tolerance:
            return x, 1, residual
    identity = np.eye(x.size)
    residual = np.inf
    for iteration in range(MAX_NEWTON + 1):
        defect = x + dt * spec.apply(x) - rhs
        residual = _residual_norm(defect, weights)
        if not np.isfinite(residual):
            break
        if residual <= tolerance:
            return x, iteration, residual
        if iteration == MAX_NEWTON:
            break
        try:
            x = x - linalg.solve(identity + dt * spec.jacobian(x), defect)
        except linalg.LinAlgError:
            break
    raise StepFailure(residual=residual, iterations=iteration, dt=dt)


def step_implicit(spec, control_map, y, u_step, dt):
    if not dt > 0:
        raise ValueError('Time step must be positive')
    spec.check(y)
    control_map.check_control(u_step)
    weights = y.weights
    source = control_map.matrix @ u_step.values
    values, _, _ = _newton(spec, y.values, y.values + dt * source, dt, weights)
    return y.with_values(values)


def _split_step(spec, y, source, dt, weights, depth=0):
    """One control step, split recursively on Newton failure. Returns substeps and stats."""
    try:
        values, iterations, residual = _newton(spec, y, y + dt * source, dt, weights)
        return [(dt, values)], iterations, residual
    except StepFailure as failure:
        if depth >= MAX_HALVINGS:
            raise
        logger.warning('Newton failed (residual %.3e), halving step to %.3e',
                       failure.detail['residual'], dt / 2)
    first, it_a, res_a = _split_step(spec, y, source, dt / 2, weights, depth + 1)
    second, it_b, res_b = _split_step(spec, first[-1][1], source, dt / 2, weights, depth + 1)
    return first + second, it_a + it_b, max(res_a, res_b)


def advance(spec, y, source, dt, weights, step=0):
    """Advance flat state ``y`` over one control step with constant source Bu."""
    try:
        return _split_step(spec, y, source, dt, weights)
    except StepFailure as failure:
        raise SolverError(step=step, time=step * dt, residual=failure.detail['residual'],
                          halvings=MAX_HALVINGS) from failure


def state_diagnostics(spec, states, image):
    """Norms ‖y‖_H, ‖y‖_V and ‖image(k, y)‖_H along a state sequence."""
    fields = [Field(spec.grid, row, spec.components) for row in states]
    norm_H = np.array([spec.norm_H(f) for f in fields])
    norm_V = np.array([spec.norm_V(f) for f in fields])
    norm_AH = np.array([spec.norm_H(image(k, f)) for k, f in enumerate(fields)])
    return norm_H, norm_V, norm_AH


def build_trajectory(spec, times, states, substeps, iterations, residuals):
    return Trajectory(spec, np.asarray(times, dtype=float), np.array(states), substeps,
                      np.array(iterations, dtype=int), np.array(residuals, dtype=float))


def solve_forward(spec, control_map, y0, control, T=None):
    spec.check(y0)
    if T is not None and not np.isclose(T, control.horizon, rtol=1e-12, atol=0.0):
        raise ValueError(f'Horizon {T} does not match the control grid ({control.horizon})')
    weights = y0.weights
    states = [y0.values.copy()]
    substeps, iterations, residuals = [], [], []
    dt = control.dt
    for k in range(control.steps):
        source = control_map.matrix @ control.values[k]
        parts, count, residual = advance(spec, states[-1], source, dt, weights, step=k)
        substeps.append(parts)
        states.append(parts[-1][1])
        iterations.append(count)
        residuals.append(residual)
        logger.debug('step %d: t=%.6g newton=%d residual=%.3e', k, (k + 1) * dt, count, residual)
    return build_trajectory(spec, control.times, states, substeps, iterations, residuals)


def stability_constant(spec, control_map, y0, control, other):
    """sup_t ‖y¹ − y²‖_H / ‖u¹ − u²‖_{L²(0,T;U)} for one pair of controls."""
    gap = control.l2_distance(other)
    if gap == 0.0:
        return 0.0
    first = solve_forward(spec, control_map, y0, control)
    second = solve_forward(spec, control_map, y0, other)
    spread = max(spec.norm_H(first.state(k) - second.state(k)) for k in range(len(first)))
    return spread / gap
