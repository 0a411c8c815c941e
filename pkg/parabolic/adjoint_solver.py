"""
First-order variations and the backward adjoint sweep.

Both replay the substeps stored on a forward trajectory. The adjoint step is
the weighted transpose of the linearized forward step,

    p_before = W⁻¹ (I + h A′(y⁺))⁻ᵀ W p_after,

so that ⟨Y(T), p(T)⟩ = Σ_k ⟨B v_k, ∫_step p⟩ holds to rounding.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import AdjointSingularError, SolverError
from .forward_solver import Trajectory
from .hilbert_core import Field
from .operators import apply_Aprime

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class AdjointState:
    """p at the trajectory's grid times and ∫p over each control step."""
    spec: object
    times: np.ndarray
    values: np.ndarray
    integrated: np.ndarray

    def state(self, k):
        return Field(self.spec.grid, self.values[k], self.spec.components)

    @property
    def terminal(self):
        return self.state(-1)

    def step_mean(self, k):
        width = self.times[k + 1] - self.times[k]
        return Field(self.spec.grid, self.integrated[k] / width, self.spec.components)


def terminal_payload(spec, control_map, y_final, target, eps):
    """p(T) = (1/ε) P R_H P (y(T) − y^tar), the L² representative of the terminal miss."""
    if not eps > 0:
        raise ValueError('Penalty parameter must be positive')
    miss = control_map.project(y_final - target)
    return control_map.project(spec.riesz_H(miss)) / eps


def solve_variation(spec, control_map, traj, v):
    """Y′ + A′(y*(t))Y = Bv, Y(0) = 0, frozen at the trajectory's substep states."""
    if v.steps != traj.steps or not np.isclose(v.horizon, traj.times[-1]):
        raise ValueError('Variation control is not aligned with the trajectory')
    size = traj.states.shape[1]
    identity = np.eye(size)
    current = np.zeros(size)
    states = [current]
    substeps = []
    for k, parts in enumerate(traj.substeps):
        source = control_map.matrix @ v.values[k]
        replay = []
        for h, anchor in parts:
            if spec.linear:
                current = spec.step_inverse(h) @ (current + h * source)
            else:
                try:
                    current = linalg.solve(identity + h * spec.jacobian(anchor),
                                           current + h * source)
                except linalg.LinAlgError as error:
                    raise SolverError('Singular linearized step', step=k) from error
            replay.append((h, current))
        substeps.append(replay)
        states.append(current)
    zeros = np.zeros(traj.steps)
    return Trajectory(spec, traj.times.copy(), np.array(states), substeps, zeros.astype(int),
                      zeros, image=lambda k, f: apply_Aprime(spec, traj.state(k), f))


def solve_adjoint(spec, traj, terminal):
    spec.check(terminal)
    weights = terminal.weights
    size = weights.size
    identity = np.eye(size)
    values = np.zeros((traj.steps + 1, size))
    integrated = np.zeros((traj.steps, size))
    values[-1] = terminal.values
    current = terminal.values.copy()
    for k in range(traj.steps - 1, -1, -1):
        total = np.zeros(size)
        for h, anchor in reversed(traj.substeps[k]):
            if spec.linear:
                current = spec.step_inverse(h).T @ (weights * current) / weights
            else:
                matrix = identity + h * spec.jacobian(anchor)
                try:
                    current = linalg.solve(matrix.T, weights * current) / weights
                except linalg.LinAlgError as error:
                    raise AdjointSingularError(step=k, time=float(traj.times[k])) from error
            if not np.all(np.isfinite(current)):
                raise AdjointSingularError('Adjoint became non-finite', step=k)
            total += h * current
        values[k] = current
        integrated[k] = total
    logger.debug('Adjoint sweep over %d steps, |p(0)|=%.3e', traj.steps,
                 float(np.sqrt(np.sum(weights * values[0] ** 2))))
    return AdjointState(spec, traj.times.copy(), values, integrated)


def control_gradient(control_map, adjoint):
    """Rows B* of the step mean of p; the derivative along v is Σ_k Δt_k ⟨row_k, v_k⟩."""
    widths = np.diff(adjoint.times)
    return (adjoint.integrated / widths[:, None]) @ control_map.adjoint.T


def pairing_identity(spec, control_map, traj, v, terminal):
    """Both sides of ⟨Y(T), p(T)⟩_H-pairing = Σ_k ⟨v_k, B* ∫_step p⟩."""
    variation = solve_variation(spec, control_map, traj, v)
    adjoint = solve_adjoint(spec, traj, terminal)
    lhs = float(np.sum(terminal.weights * variation.states[-1] * terminal.values))
    control_weights = np.tile(control_map.control_grid.weights, control_map.control_components)
    rhs = 0.0
    for k in range(traj.steps):
        rhs += float(np.sum(control_weights * v.values[k]
                            * (control_map.adjoint @ adjoint.integrated[k])))
    return lhs, rhs
