"""
Sign feedback u = −ρ Sign(B* P (y − y^tar)) and the sliding regime after
the controlled components reach their target.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import SaturationError
from .forward_solver import Control, advance, build_trajectory
from .hilbert_core import sign
from .operators import control_norm, equivalent_control, feedback_direction, manifold_point

logger = logging.getLogger(__name__)

SATURATION_SLACK = 1e-12


@dataclass(eq=False)
class SlidingRun:
    trajectory: object
    control: Control
    deviation: np.ndarray
    rho: float
    hit_tol: float
    hit_index: int = None
    t_hit: float = None
    t_hit_refined: float = None
    t_star: float = None

    @property
    def hit(self):
        return self.hit_index is not None

    @property
    def post_hit_deviation(self):
        if not self.hit:
            return np.array([])
        return self.deviation[self.hit_index:]

    def summary(self):
        post = self.post_hit_deviation
        return {
            'rho': self.rho,
            'hit_tol': self.hit_tol,
            'dt': self.control.dt,
            'T_max': self.control.horizon,
            'T_hit': self.t_hit,
            'T_hit_refined': self.t_hit_refined,
            'T_star': self.t_star,
            'initial_deviation': float(self.deviation[0]),
            'max_post_hit_deviation': float(post.max()) if post.size else None,
            'steps': self.control.steps,
        }

    def as_frame(self):
        times = self.trajectory.times
        sliding = np.zeros(len(times), dtype=bool)
        if self.hit:
            sliding[self.hit_index:] = True
        return pd.DataFrame({
            't': times,
            'deviation': self.deviation,
            'norm_U': np.append(self.control.norms(), np.nan),
            'hit': sliding,
        })


def deviation_norm(spec, control_map, y, y_tar):
    return spec.norm_H(control_map.project(y - y_tar))


def sign_feedback(control_map, y, y_tar, rho):
    if not rho > 0:
        raise ValueError('Control bound must be positive')
    zeta = feedback_direction(control_map, y - y_tar)
    return sign(zeta, control_map.norm_tag) * (-rho)


def hit_time_bound(rho, drift_norm, c1, initial_deviation, coercivity=1.0):
    """
    Time at which d′ = C₁d + a − ρc_B, d(0) = d₀ reaches zero; ``None`` when
    ρc_B does not dominate a + C₁d₀.

    This is ln[m/(m − C₁d₀)]/C₁ with m = ρc_B − a. Dividing by C₁ is what
    solving the inequality gives; the same logarithm multiplied by C₁ has the
    wrong units and is not an upper bound.
    """
    margin = rho * coercivity - drift_norm
    if margin <= 0 or margin - c1 * initial_deviation <= 0:
        return None
    if c1 <= 0:
        return initial_deviation / margin
    return float(-np.log1p(-c1 * initial_deviation / margin) / c1)


def _slide(spec, control_map, start, y_tar, steps, dt, rho, first_step=0):
    """Equivalent-control steps from ``start``; returns per-step records."""
    weights = start.weights
    current = start
    records = []
    for k in range(steps):
        u = equivalent_control(spec, control_map, manifold_point(control_map, y_tar, current))
        size = control_norm(control_map, u)
        if size > rho * (1.0 + SATURATION_SLACK):
            raise SaturationError(step=first_step + k, norm=size, rho=rho)
        source = control_map.matrix @ u.values
        parts, count, residual = advance(spec, current.values, source, dt, weights,
                                         step=first_step + k)
        current = current.with_values(parts[-1][1])
        records.append((u.values, parts, count, residual))
    return records


def _coast(spec, control_map, start, steps, dt, first_step=0):
    """Uncontrolled steps, used when the continuation is switched off."""
    zero = control_map.zero_control()
    current = start
    records = []
    for k in range(steps):
        parts, count, residual = advance(spec, current.values, np.zeros(start.values.size), dt,
                                         start.weights, step=first_step + k)
        current = current.with_values(parts[-1][1])
        records.append((zero.values, parts, count, residual))
    return records


def sliding_continuation(spec, control_map, state_at_hit, y_tar, T_extra, dt, rho, hit_tol=None):
    """Keep P y on P y^tar with the equivalent control ũ = B⁻¹ P A_H(ŷ)."""
    spec.check(state_at_hit)
    if hit_tol is not None:
        gap = deviation_norm(spec, control_map, state_at_hit, y_tar)
        if gap > hit_tol:
            raise ValueError(f'State is {gap:.3e} away from the manifold (tolerance {hit_tol})')
    steps = max(1, int(round(T_extra / dt)))
    dt = T_extra / steps
    records = _slide(spec, control_map, state_at_hit, y_tar, steps, dt, rho)
    states = [state_at_hit.values] + [parts[-1][1] for _, parts, _, _ in records]
    return build_trajectory(spec, dt * np.arange(steps + 1), states,
                            [parts for _, parts, _, _ in records],
                            [count for *_, count, _ in records],
                            [residual for *_, residual in records])


def run_sliding(spec, control_map, y0, y_tar, rho, T_max, dt, hit_tol, audit=None,
                continuation=True):
    """
    Closed loop under the sign feedback until P(y − y^tar) is within
    ``hit_tol``, then the sliding continuation for the rest of the horizon.
    With an audit report the explicit hit-time bound is attached.
    """
    if not hit_tol > 0:
        raise ValueError('Hit tolerance must be positive')
    spec.check(y0)
    spec.check(y_tar)
    steps = max(1, int(round(T_max / dt)))
    dt = T_max / steps
    weights = y0.weights

    deviation = [deviation_norm(spec, control_map, y0, y_tar)]
    t_star = None
    if audit is not None:
        if rho <= audit.drift_norm:
            logger.warning('rho=%g does not exceed the drift surrogate %.4g', rho, audit.drift_norm)
        t_star = hit_time_bound(rho, audit.drift_norm, audit.c3, deviation[0], audit.b_coercivity)

    current = y0
    states = [y0.values.copy()]
    substeps, controls, iterations, residuals = [], [], [], []
    hit_index = 0 if deviation[0] <= hit_tol else None
    k = 0
    while k < steps and hit_index is None:
        u = sign_feedback(control_map, current, y_tar, rho)
        parts, count, residual = advance(spec, current.values, control_map.matrix @ u.values,
                                         dt, weights, step=k)
        current = current.with_values(parts[-1][1])
        states.append(current.values)
        substeps.append(parts)
        controls.append(u.values)
        iterations.append(count)
        residuals.append(residual)
        deviation.append(deviation_norm(spec, control_map, current, y_tar))
        k += 1
        if deviation[-1] <= hit_tol:
            hit_index = k
        logger.debug('feedback step %d: deviation %.4e', k, deviation[-1])

    t_hit = t_hit_refined = None
    if hit_index is not None:
        t_hit = hit_index * dt
        t_hit_refined = t_hit
        if hit_index > 0:
            before, after = deviation[hit_index - 1], deviation[hit_index]
            t_hit_refined = (hit_index - 1) * dt + dt * (before - hit_tol) / (before - after)
        logger.info('Manifold reached at t=%.6g (rho=%g, bound %s)', t_hit, rho, t_star)
    else:
        logger.info('No hit within T=%g for rho=%g', T_max, rho)

    remaining = steps - k
    if remaining:
        if continuation:
            records = _slide(spec, control_map, current, y_tar, remaining, dt, rho, first_step=k)
        else:
            records = _coast(spec, control_map, current, remaining, dt, first_step=k)
        for values, parts, count, residual in records:
            current = current.with_values(parts[-1][1])
            states.append(current.values)
            substeps.append(parts)
            controls.append(values)
            iterations.append(count)
            residuals.append(residual)
            deviation.append(deviation_norm(spec, control_map, current, y_tar))

    trajectory = build_trajectory(spec, dt * np.arange(steps + 1), states, substeps,
                                  iterations, residuals)
    control = Control(control_map, T_max, np.array(controls), rho)
    return SlidingRun(trajectory, control, np.array(deviation), float(rho), float(hit_tol),
                      hit_index, t_hit, t_hit_refined, t_star)


def sweep_rho(spec, control_map, y0, y_tar, rhos, T_max, dt, hit_tol, audit=None, workers=None):
    """Independent closed loops over a list of bounds, run on a thread pool."""
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_sliding, spec, control_map, y0, y_tar, rho, T_max, dt,
                               hit_tol, audit) for rho in rhos]
        return [future.result() for future in futures]
