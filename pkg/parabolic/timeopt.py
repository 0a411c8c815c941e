"""
Penalized minimal-time problem

    J_ε(T, u) = T + (1/2ε)‖P(y(T) − y^tar)‖²_H + (ε/2)∫‖Pu‖²_U [+ ½∫‖h‖²_U],

with h(t) = ∫₀ᵗ P(u − u_ref) present only when a reference control is set.

The inner problem at fixed T is the fixed point
Pu = −(εF + N_K)⁻¹(B*p + ∫ₜᵀF(h)), solved by Anderson mixing with a damped
fallback; the outer problem is a bounded scalar search over T. All adjoints
here are ε-level adjoints in the L² pairing.
"""
import logging
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from .adjoint_solver import control_gradient, solve_adjoint, terminal_payload
from .exceptions import HypothesisError
from .forward_solver import Control, solve_forward
from .hilbert_core import (
    KIND_L2, KIND_LP, Field, duality_map_F, duality_map_inverse, inner_product, resolvent_rows,
)
from .operators import (
    NONLOCAL, apply_A, apply_Bstar, control_dual_norm, control_norm, control_row_norms,
)

logger = logging.getLogger(__name__)

INNER_TOL = 1e-8
MAX_INNER = 500
THETA0 = 0.5
MIN_THETA = 1e-12
T_TOL = 1e-4
SATURATION_LEVEL = 0.99
SWITCH_TOL = 1e-12
FD_STEP = 1e-4
STATIONARITY_LEVEL = 1e-5
ANDERSON_DEPTH = 8
LSTSQ_COND = 1e-10
BACKTRACK = (0.1, 0.5)


@dataclass(eq=False)
class PenalizedProblem:
    spec: object
    control_map: object
    y0: Field
    y_tar: Field
    rho: float
    eps: float
    dt: float
    u_ref: Control = None
    max_iterations: int = MAX_INNER
    tolerance: float = INNER_TOL
    theta0: float = THETA0
    t_tol: float = T_TOL
    audit: object = None

    def __post_init__(self):
        if not self.eps > 0:
            raise HypothesisError('Penalty parameter must be positive', eps=self.eps)
        if not self.rho > 0 or not self.dt > 0:
            raise HypothesisError('Control bound and time step must be positive',
                                  rho=self.rho, dt=self.dt)
        if not 0 < self.theta0 <= 1:
            raise HypothesisError('Initial damping must lie in (0, 1]', theta0=self.theta0)
        self.spec.check(self.y0)
        self.spec.check(self.y_tar)
        if self.spec.norm_H(self.control_map.project(self.y0 - self.y_tar)) == 0.0:
            raise HypothesisError('Initial state already satisfies the target')
        if self.audit is not None and self.rho <= self.audit.rho1:
            logger.warning('rho=%g does not exceed the audited bound %.4g; the target may be '
                           'unreachable', self.rho, self.audit.rho1)

    def steps(self, T):
        return max(1, int(round(T / self.dt)))

    def with_eps(self, eps, u_ref=None):
        return replace(self, eps=eps, u_ref=u_ref if u_ref is not None else self.u_ref)

    def reference(self, T, steps):
        if self.u_ref is None:
            return None
        return self.u_ref.resample(T, steps).values

    def describe(self):
        return {'eps': self.eps, 'rho': self.rho, 'dt': self.dt,
                'reference': self.u_ref is not None, 'max_iterations': self.max_iterations,
                'tolerance': self.tolerance, 'theta0': self.theta0}


@dataclass(eq=False)
class InnerResult:
    control: Control
    trajectory: object
    adjoint: object
    objective: float
    stationarity: float
    iterations: int
    accepted: int
    converged: bool
    theta: float
    history: list = field(default_factory=list)


@dataclass(eq=False)
class OptimalityReport:
    eps: float
    T: float
    objective: float
    miss: float
    stationarity: float
    transversality: float
    bang_bang_residual: float
    bang_bang_skipped: int
    hamiltonian_residual: float
    saturation: float
    dJ_dT: float
    h_energy: float
    inner_iterations: int
    outer_evaluations: int
    converged: bool
    at_boundary: bool
    bracket: tuple
    inner: InnerResult = None
    series: pd.DataFrame = None

    def as_dict(self):
        return {
            'eps': self.eps,
            'T_eps_star': self.T,
            'J_eps': self.objective,
            'terminal_miss': self.miss,
            'stationarity_residual': self.stationarity,
            'transversality_residual': self.transversality,
            'bang_bang_residual': self.bang_bang_residual,
            'bang_bang_skipped_steps': self.bang_bang_skipped,
            'hamiltonian_residual': self.hamiltonian_residual,
            'saturation_fraction': self.saturation,
            'dJ_dT': self.dJ_dT,
            'h_energy': self.h_energy,
            'inner_iterations': self.inner_iterations,
            'outer_evaluations': self.outer_evaluations,
            'converged': self.converged,
            'at_boundary': self.at_boundary,
            'bracket': list(self.bracket),
        }


def _control_field(control_map, values):
    return Field(control_map.control_grid, values, control_map.control_components)


def _project_controls(control_map, values):
    """P on control rows; nonlocal controls act on the first component only."""
    if control_map.mode == NONLOCAL:
        return values
    return values * control_map.mask


def _memory(prob, control, reference):
    """Cumulative h at the step ends, or ``None`` without a reference control."""
    if reference is None:
        return None
    gap = _project_controls(prob.control_map, control.values - reference)
    return np.cumsum(control.dt * gap, axis=0)


def _memory_tail(prob, control, memory):
    """Rows ∫ₜᵀF(h) at each step start, as Σ_{m≥k} Δt F(h_m)."""
    cmap = prob.control_map
    images = _duality_rows(cmap, memory)
    return np.cumsum((control.dt * images)[::-1], axis=0)[::-1]


def _terms(prob, control, trajectory, memory):
    cmap = prob.control_map
    miss = prob.spec.norm_H(cmap.project(trajectory.final - prob.y_tar))
    projected = _project_controls(cmap, control.values)
    sizes = control_row_norms(cmap, projected)
    effort = float(control.dt * np.sum(sizes ** 2))
    h_energy = 0.0
    if memory is not None:
        h_sizes = control_row_norms(cmap, memory)
        h_energy = float(control.dt * np.sum(h_sizes ** 2))
    total = (control.horizon + miss ** 2 / (2.0 * prob.eps) + 0.5 * prob.eps * effort
             + 0.5 * h_energy)
    return {'total': float(total), 'miss': float(miss), 'effort': effort, 'h_energy': h_energy}


def _evaluate(prob, control, reference):
    trajectory = solve_forward(prob.spec, prob.control_map, prob.y0, control)
    return _terms(prob, control, trajectory, _memory(prob, control, reference)), trajectory


def eval_J_eps(prob, T, u):
    if not np.isclose(T, u.horizon, rtol=1e-12, atol=0.0):
        raise ValueError(f'Control horizon {u.horizon} does not match T={T}')
    reference = prob.reference(u.horizon, u.steps)
    terms, _ = _evaluate(prob, u, reference)
    return terms['total']


def _optimality_map(prob, control, trajectory, reference):
    """Adjoint, the rows ζ_k = P(B*p̄_k + ∫F(h)) and the image −(εF + N_K)⁻¹ζ."""
    cmap = prob.control_map
    terminal = terminal_payload(prob.spec, cmap, trajectory.final, prob.y_tar, prob.eps)
    adjoint = solve_adjoint(prob.spec, trajectory, terminal)
    zeta = control_gradient(cmap, adjoint)
    memory = _memory(prob, control, reference)
    if memory is not None:
        zeta = zeta + _memory_tail(prob, control, memory)
    zeta = _project_controls(cmap, zeta)
    image = resolvent_rows(cmap.control_grid, cmap.control_components, -zeta, cmap.norm_tag,
                           prob.eps, prob.rho)
    return adjoint, zeta, image


def _row_weights(control, cmap):
    """dt-weighted quadrature weights of one control row."""
    return control.dt * np.tile(cmap.control_grid.weights, cmap.control_components)


def _duality_rows(cmap, rows):
    tag = cmap.norm_tag
    if tag.kind in (KIND_L2, KIND_LP) and tag.p == 2.0:
        return rows
    return np.array([duality_map_F(_control_field(cmap, row), tag).values for row in rows])


def _size(control, cmap, rows):
    """‖rows‖ in L²(0,T;U)."""
    return float(np.sqrt(control.dt * np.sum(control_row_norms(cmap, rows) ** 2)))


def _clamp_rows(prob, values):
    """Radial scaling of every row back into the ball of radius ρ."""
    sizes = control_row_norms(prob.control_map, values)
    factor = np.minimum(1.0, prob.rho / np.where(sizes > 0, sizes, prob.rho))
    return values * factor[:, None]


def _extrapolate(memory, image, residual_rows, weights):
    """Anderson mixing R(u) − ΔR·γ, with γ the least-squares fit of r by Δr."""
    root = np.sqrt(weights)
    d_image = np.stack([pair[0].ravel() for pair in memory], axis=1)
    d_residual = np.stack([(root * pair[1]).ravel() for pair in memory], axis=1)
    gamma = linalg.lstsq(d_residual, (root * residual_rows).ravel(), cond=LSTSQ_COND)[0]
    return image - (d_image @ gamma).reshape(image.shape)


def _backtrack(theta, before, after, slope):
    """Minimizer of the quadratic through J(0), J′(0) and J(θ), kept in [θ/10, θ/2]."""
    low, high = BACKTRACK[0] * theta, BACKTRACK[1] * theta
    curvature = after - before - slope * theta
    if slope >= 0 or not curvature > 0:
        return high
    return float(np.clip(-slope * theta ** 2 / (2.0 * curvature), low, high))


def inner_solve_control(prob, T, initial=None, steps=None, theta=None):
    """
    Damped fixed point u ← (1 − θ)u + θ·R(u) at fixed horizon T, accelerated
    by Anderson mixing over the last ``ANDERSON_DEPTH`` accepted iterates.

    No trial may increase J_ε. A rejected extrapolation is followed by a
    damped trial; a rejected damped trial shrinks θ by a safeguarded quadratic
    fit along the step. After every accepted step θ becomes the
    Barzilai–Borwein length ⟨s, s⟩/⟨s, r_old − r_new⟩ clipped to (0, 1], which
    tracks the ε² scale of the terminal curvature. ``theta`` warm-starts the
    damping. Every trial counts towards ``max_iterations``; running out returns
    the best iterate with ``converged`` unset.
    """
    if not T > 0:
        raise ValueError('Horizon must be positive')
    steps = steps or prob.steps(T)
    cmap = prob.control_map
    if initial is None:
        control = Control.zeros(cmap, T, steps, prob.rho)
    else:
        control = initial.resample(T, steps)
    reference = prob.reference(T, steps)
    weights = _row_weights(control, cmap)
    stationary = STATIONARITY_LEVEL * prob.rho * np.sqrt(T)

    terms, trajectory = _evaluate(prob, control, reference)
    objective = terms['total']
    adjoint, zeta, image = _optimality_map(prob, control, trajectory, reference)
    rows = image - control.values
    history = [objective]
    theta = prob.theta0 if theta is None else float(np.clip(theta, MIN_THETA, 1.0))
    memory = deque(maxlen=ANDERSON_DEPTH)
    extrapolate = False
    change = np.inf
    converged = False
    accepted = 0
    iteration = 0
    while True:
        residual = _size(control, cmap, rows)
        tolerance = prob.tolerance * max(1.0, _size(control, cmap, control.values))
        if residual <= tolerance or (change <= tolerance and residual <= stationary):
            converged = True
            break
        if iteration >= prob.max_iterations or theta < MIN_THETA:
            break
        iteration += 1
        if extrapolate:
            values = _clamp_rows(prob, _extrapolate(memory, image, rows, weights))
        else:
            values = control.values + theta * rows
        candidate = control.with_values(values)
        trial_terms, trial = _evaluate(prob, candidate, reference)
        if trial_terms['total'] <= objective:
            step = candidate.values - control.values
            next_adjoint, next_zeta, next_image = _optimality_map(prob, candidate, trial, reference)
            next_rows = next_image - candidate.values
            memory.append((next_image - image, next_rows - rows))
            bending = float(np.sum(weights * step * (rows - next_rows)))
            if bending > 0:
                theta = float(np.clip(np.sum(weights * step ** 2) / bending, MIN_THETA, 1.0))
            else:
                theta = min(1.0, 2.0 * theta)
            change = _size(control, cmap, step) if extrapolate else np.inf
            control, trajectory, objective = candidate, trial, trial_terms['total']
            adjoint, zeta, image, rows = next_adjoint, next_zeta, next_image, next_rows
            history.append(objective)
            accepted += 1
            extrapolate = True
        elif extrapolate:
            extrapolate = False
        else:
            effort = _duality_rows(cmap, _project_controls(cmap, control.values))
            slope = float(np.sum(weights * (zeta + prob.eps * effort) * rows))
            theta = _backtrack(theta, objective, trial_terms['total'], slope)
    if not converged:
        logger.warning('Inner iteration stopped at T=%.6g after %d trials (residual %.3e)',
                       T, iteration, residual)
    logger.debug('Inner solve T=%.6g: J=%.10g, %d trials, %d accepted', T, objective, iteration,
                 accepted)
    return InnerResult(control, trajectory, adjoint, objective, residual, iteration, accepted,
                       converged, theta, history)


def _step_series(prob, inner):
    """Per-step maximum-principle quantities along a converged inner solution."""
    spec, cmap = prob.spec, prob.control_map
    control, trajectory, adjoint = inner.control, inner.trajectory, inner.adjoint
    reference = prob.reference(control.horizon, control.steps)
    memory = _memory(prob, control, reference)
    tail = np.zeros_like(control.values) if memory is None else _memory_tail(prob, control, memory)
    h_final = 0.0 if memory is None else control_norm(cmap, _control_field(cmap, memory[-1]))
    eps, rho = prob.eps, prob.rho

    rows = []
    for k in range(control.steps):
        u = _control_field(cmap, _project_controls(cmap, control.values[k]))
        mean = apply_Bstar(cmap, adjoint.step_mean(k))
        mean = mean.with_values(_project_controls(cmap, mean.values))
        grid_dual = control_dual_norm(cmap, apply_Bstar(cmap, adjoint.state(k)))
        pairing = inner_product(apply_A(spec, trajectory.state(k)), adjoint.state(k))
        h_tail = _control_field(cmap, tail[k])
        size = control_norm(cmap, u)
        shifted = mean + h_tail + duality_map_F(u, cmap.norm_tag) * eps
        transversal = (rho * control_dual_norm(cmap, shifted)
                       + pairing + inner_product(u, h_tail) + 0.5 * eps * size ** 2
                       - 1.0 - 0.5 * h_final ** 2)
        mean_size = control_dual_norm(cmap, mean)
        if mean_size > SWITCH_TOL:
            bang = u + duality_map_inverse(mean, cmap.norm_tag) * (rho / mean_size)
            bang_gap = control_norm(cmap, bang)
        else:
            bang_gap = np.nan
        rows.append({
            't': control.times[k],
            'norm_U': size,
            'norm_Bstar_p': grid_dual,
            'hamiltonian': abs(rho * grid_dual + pairing - 1.0),
            'bang_bang': bang_gap,
            'transversality': abs(transversal),
        })
    return pd.DataFrame(rows)


def _report(prob, inner, evaluations, bracket, at_boundary, dJ_dT):
    series = _step_series(prob, inner)
    dt = inner.control.dt
    skipped = int(series['bang_bang'].isna().sum())
    bang = series['bang_bang'].dropna().to_numpy()
    reference = prob.reference(inner.control.horizon, inner.control.steps)
    terms = _terms(prob, inner.control, inner.trajectory,
                   _memory(prob, inner.control, reference))
    return OptimalityReport(
        eps=prob.eps,
        T=float(inner.control.horizon),
        objective=inner.objective,
        miss=terms['miss'],
        stationarity=float(inner.stationarity),
        transversality=float(series['transversality'].mean()),
        bang_bang_residual=float(np.sqrt(dt * np.sum(bang ** 2))),
        bang_bang_skipped=skipped,
        hamiltonian_residual=float(series['hamiltonian'].mean()),
        saturation=float(np.mean(series['norm_U'] >= SATURATION_LEVEL * prob.rho)),
        dJ_dT=float(dJ_dT),
        h_energy=terms['h_energy'],
        inner_iterations=inner.iterations,
        outer_evaluations=evaluations,
        converged=inner.converged,
        at_boundary=at_boundary,
        bracket=tuple(float(t) for t in bracket),
        inner=inner,
        series=series,
    )


def horizon_derivative(prob, inner, step=None):
    """Central difference of the inner optimal value in T with the step count held fixed."""
    T = inner.control.horizon
    steps = inner.control.steps
    step = step or FD_STEP * T
    upper = inner_solve_control(prob, T + step, inner.control, steps, inner.theta)
    lower = inner_solve_control(prob, T - step, inner.control, steps, inner.theta)
    return (upper.objective - lower.objective) / (2.0 * step)


def outer_minimize(prob, T_bracket, initial=None, theta=None):
    """
    Bounded scalar search of T ↦ min_u J_ε(T, u), warm-starting each evaluation
    from the previous one. The step count is fixed by the upper end of the
    bracket so the evaluations differ only through Δt = T/N. ``theta`` warm-starts
    the inner damping.
    """
    T_lo, T_hi = (float(t) for t in T_bracket)
    if not 0 < T_lo < T_hi:
        raise ValueError('Bracket must satisfy 0 < T_lo < T_hi')
    steps = prob.steps(T_hi)
    xatol = prob.t_tol * T_hi
    cache = {}
    warm = {'control': initial, 'theta': theta}

    def objective(T):
        inner = inner_solve_control(prob, T, warm['control'], steps, warm['theta'])
        warm['control'], warm['theta'] = inner.control, inner.theta
        cache[T] = inner
        return inner.objective

    result = optimize.minimize_scalar(objective, bounds=(T_lo, T_hi), method='bounded',
                                      options={'xatol': xatol})
    T_opt = float(result.x)
    inner = cache.get(T_opt) or inner_solve_control(prob, T_opt, warm['control'], steps,
                                                    warm['theta'])
    at_boundary = T_opt - T_lo <= 2.0 * xatol or T_hi - T_opt <= 2.0 * xatol
    if at_boundary:
        logger.warning('Minimizer T=%.6g sits at the bracket [%g, %g]', T_opt, T_lo, T_hi)
    dJ_dT = horizon_derivative(prob, inner)
    report = _report(prob, inner, int(result.nfev), (T_lo, T_hi), at_boundary, dJ_dT)
    logger.info('eps=%g: T=%.8g J=%.8g miss=%.3e saturation=%.3f', prob.eps, report.T,
                report.objective, report.miss, report.saturation)
    return report


def eps_continuation(prob, eps_schedule, T_bracket, chain_reference=False):
    """
    Outer searches along a strictly decreasing ε schedule, each warm-started
    from the previous control. The damping carries over scaled by the squared
    ratio of consecutive ε. With ``chain_reference`` the previous control also
    becomes u_ref of the next stage.
    """
    schedule = [float(eps) for eps in eps_schedule]
    if not schedule or any(eps <= 0 for eps in schedule):
        raise ValueError('Penalty schedule must be positive')
    if any(later >= earlier for earlier, later in zip(schedule, schedule[1:])):
        raise ValueError('Penalty schedule must be strictly decreasing')
    reports = []
    control = theta = None
    for index, eps in enumerate(schedule):
        stage = prob.with_eps(eps, u_ref=control if chain_reference else None)
        if index:
            theta = reports[-1].inner.theta * (eps / schedule[index - 1]) ** 2
        report = outer_minimize(stage, T_bracket, control, theta)
        reports.append(report)
        control = report.inner.control
    return reports
