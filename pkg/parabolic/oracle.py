"""
Independent minimal-time references on spatially constant reductions.

On a Neumann grid with no drift the systems keep constant fields constant,
so x′ + M x + r(x) = g·u with a scalar bang control reproduces the PDE
exactly. The brute-force search integrates every bang sequence with up to a
few switches at once with classical RK4, first on a strided switch grid and
then around the best sequences at successively finer spacing.
"""
import itertools
import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .exceptions import HypothesisError
from .hilbert_core import NEUMANN, Field
from .operators import (
    FitzHughNagumo, Nonlinearity, PhaseField, PotentialDrift, ReactionDiffusion2, apply_A,
)

logger = logging.getLogger(__name__)

MAX_CANDIDATES = 50_000
MAX_SWITCHES = 3
REFINE_SEEDS = 8
REFINE_POINTS = 9


@dataclass(frozen=True)
class OracleResult:
    feasible: bool
    t_star: float = None
    method: str = 'analytic'
    detail: dict = field(default_factory=dict)

    def as_dict(self):
        return {'feasible': self.feasible, 't_star': self.t_star, 'method': self.method,
                'detail': self.detail}


def analytic_min_time_scalar(a, y0, c, rho):
    """Minimal time for y′ + a y = u, |u| ≤ ρ, to move y0 onto c."""
    if not rho > 0:
        raise ValueError('Control bound must be positive')
    if c == y0:
        return OracleResult(True, 0.0)
    s = 1.0 if c > y0 else -1.0
    if a == 0:
        return OracleResult(True, abs(c - y0) / rho)
    numer = rho * s - a * c
    denom = rho * s - a * y0
    if s * numer <= 0 or s * denom <= 0:
        return OracleResult(False, detail={'reason': 'control bound cannot hold the target'})
    return OracleResult(True, float(-np.log(numer / denom) / a))


@dataclass(eq=False)
class OdeReduction:
    """x′ + M x + r(x) = g u on at most two components, |u| ≤ ρ."""
    matrix: np.ndarray
    rho: float
    x0: np.ndarray
    target: np.ndarray
    nonlinear: tuple = ()
    gain: np.ndarray = None
    target_mode: str = 'full'
    arguments: tuple = ()

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.target = np.atleast_1d(np.asarray(self.target, dtype=float))
        dimension = self.matrix.shape[0]
        if dimension not in (1, 2) or self.matrix.shape != (dimension, dimension):
            raise HypothesisError('Reductions have one or two components', shape=self.matrix.shape)
        if self.gain is None:
            self.gain = np.eye(dimension)[0]
        self.gain = np.asarray(self.gain, dtype=float)
        arrays = (self.matrix, self.x0, self.target, self.gain)
        if not all(np.all(np.isfinite(array)) for array in arrays) or not np.isfinite(self.rho):
            raise HypothesisError('Reduction parameters must be finite')
        if self.target_mode not in ('full', 'first_component'):
            raise HypothesisError('Unknown target mode', target_mode=self.target_mode)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @classmethod
    def scalar(cls, a, y0, c, rho):
        return cls([[a]], rho, [y0], [c])

    @classmethod
    def from_spec(cls, spec, control_map, x0, target, rho):
        """
        Constant-field reduction of a configured operator. The control bound is
        rescaled to the constant amplitude ρ/√|Ω| allowed in L².
        """
        if spec.grid.boundary != NEUMANN:
            raise HypothesisError('Constant reductions need a Neumann grid',
                                  boundary=spec.grid.boundary)
        if isinstance(spec, PotentialDrift):
            if any(spec.drift):
                raise HypothesisError('Drift does not preserve constant fields')
            matrix, nonlinear = [[spec.a1]], (spec.beta,)
        elif isinstance(spec, PhaseField):
            matrix = [[0.0, 0.0], [-spec.coupling, spec.coupling * spec.latent]]
            nonlinear = (Nonlinearity(), spec.potential)
        elif isinstance(spec, (ReactionDiffusion2, FitzHughNagumo)):
            matrix, nonlinear = np.zeros((2, 2)), (spec.f, spec.g)
        else:
            raise HypothesisError('Operator has no constant reduction', kind=spec.kind)
        if spec.components == 2 and control_map.mode != 'first_component':
            raise HypothesisError('Systems reduce with a first-component control only',
                                  mode=control_map.mode)
        arguments = ((0, 1), (1, 0)) if isinstance(spec, PhaseField) else ()
        amplitude = rho / spec.grid.measure ** (1.0 / control_map.norm_tag.p)
        reduction = cls(matrix, amplitude, x0, target, nonlinear, None, control_map.projection,
                        arguments)
        sample = np.linspace(-1.0, 1.0, spec.components) + 0.25
        field_value = apply_A(spec, Field.constant(spec.grid, sample, spec.components))
        if not np.allclose(field_value.matrix, reduction.drift(sample[None, :])[0][:, None],
                           rtol=1e-10, atol=1e-10):
            raise HypothesisError('Operator does not map constants to constants', kind=spec.kind)
        return reduction

    def drift(self, states):
        """M x + r(x) for a batch of states, shape (batch, dimension)."""
        value = states @ self.matrix.T
        columns = [states[:, i] for i in range(self.dimension)] + [np.zeros(len(states))]
        for i, term in enumerate(self.nonlinear):
            first, second = self.arguments[i] if self.arguments else (0, 1)
            value[:, i] += term.value(columns[first], columns[min(second, self.dimension)])
        return value

    def velocity(self, states, signs):
        return -self.drift(states) + self.rho * signs[:, None] * self.gain


def _switch_positions(steps, budget):
    """Strided switch grid keeping the candidate count under MAX_CANDIDATES."""
    stride = 1
    while True:
        positions = np.arange(stride, steps, stride)
        count = 2 * sum(comb(len(positions), j) for j in range(budget + 1))
        if count <= MAX_CANDIDATES:
            return positions, stride, count
        stride += 1


def _rk4(red, states, signs, h):
    h = h[:, None]
    k1 = red.velocity(states, signs)
    k2 = red.velocity(states + 0.5 * h * k1, signs)
    k3 = red.velocity(states + 0.5 * h * k2, signs)
    k4 = red.velocity(states + h * k3, signs)
    return states + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _closest_approach(previous, states, target):
    """Distance from the target to each step's chord and where along it the minimum sits."""
    chord = states - previous
    length = np.sum(chord ** 2, axis=1)
    tau = np.sum((target - previous) * chord, axis=1) / np.where(length > 0, length, 1.0)
    tau = np.clip(tau, 0.0, 1.0)
    return np.linalg.norm(previous + tau[:, None] * chord - target, axis=1), tau


def _arrivals(red, switch_times, initial, dt, steps, distance_tol):
    """
    First arrival time of every bang sequence in a batch. ``switch_times`` is
    (batch, width) in time units, padded with inf; a step containing a switch
    is integrated in two pieces. ``distance_tol=None`` detects a sign change of
    the first component instead of a closest approach.
    """
    batch = len(switch_times)
    states = np.tile(red.x0, (batch, 1))
    best = np.full(batch, np.inf)
    gap = states[:, 0] - red.target[0]
    for n in range(steps):
        start = n * dt
        signs = initial * (-1.0) ** np.sum(switch_times <= start, axis=1)
        inside = np.where((switch_times > start) & (switch_times < start + dt), switch_times,
                          np.inf).min(axis=1)
        split = np.where(np.isfinite(inside), inside - start, dt)
        previous = states
        states = _rk4(red, states, signs, split)
        if np.any(split < dt):
            states = _rk4(red, states, np.where(split < dt, -signs, signs), dt - split)
        open_ = np.isinf(best)
        if distance_tol is None:
            new_gap = states[:, 0] - red.target[0]
            hit = open_ & (np.sign(new_gap) != np.sign(gap))
            best[hit] = start + gap[hit] / (gap[hit] - new_gap[hit]) * dt
            gap = new_gap
        else:
            distance, tau = _closest_approach(previous, states, red.target)
            hit = open_ & (distance <= distance_tol)
            best[hit] = start + tau[hit] * dt
        if not np.all(np.isfinite(states)):
            states = np.nan_to_num(states, nan=0.0, posinf=1e6, neginf=-1e6)
        if np.isfinite(best).any() and (n + 1) * dt >= best.min():
            break
    return best


def _refined(seeds, spacing, horizon):
    """Every seed with each switch moved by ``REFINE_POINTS`` offsets ``spacing`` apart."""
    half = REFINE_POINTS // 2
    offsets = spacing * np.arange(-half, half + 1)
    rows, signs = [], []
    for times, sign in seeds:
        real = times[np.isfinite(times)]
        for shift in itertools.product(offsets, repeat=len(real)):
            moved = real + np.array(shift)
            if len(moved) and (moved[0] <= 0 or moved[-1] >= horizon
                               or np.any(np.diff(moved) <= 0)):
                continue
            rows.append(np.concatenate([moved, times[len(real):]]))
            signs.append(sign)
    unique, index = np.unique(np.column_stack([rows, signs]), axis=0, return_index=True)
    return np.array(rows)[np.sort(index)], np.array(signs)[np.sort(index)]


def _leaders(switch_times, initial, best):
    order = np.argsort(best, kind='stable')[:REFINE_SEEDS]
    return [(switch_times[i], initial[i]) for i in order if np.isfinite(best[i])]


def brute_force_min_time(red, dt, switch_budget=MAX_SWITCHES, horizon=5.0):
    """
    Smallest time any bang sequence with ≤ switch_budget switches reaches the target.

    Switches are first enumerated on a strided grid, with a loose arrival
    tolerance, to seed the search. The best ``REFINE_SEEDS`` sequences are then
    refined level by level, the switch spacing shrinking by ``REFINE_POINTS // 2``
    each time, down to dt². Full-state targets are hit when a step's chord
    passes within the level's tolerance, which ends at dt²·(ρ|g| + ‖M‖·‖x‖).
    """
    if switch_budget > MAX_SWITCHES or switch_budget < 0:
        raise ValueError(f'Switch budget must lie in [0, {MAX_SWITCHES}]')
    if red.target_mode == 'first_component' or red.dimension == 1:
        if red.x0[0] == red.target[0]:
            return OracleResult(True, 0.0, 'brute_force')
    elif np.array_equal(red.x0, red.target):
        return OracleResult(True, 0.0, 'brute_force')

    steps = int(round(horizon / dt))
    horizon = steps * dt
    positions, stride, count = _switch_positions(steps, switch_budget)
    width = max(switch_budget, 1)
    sequences = [[p * dt for p in chosen] + [np.inf] * (width - len(chosen))
                 for j in range(switch_budget + 1)
                 for chosen in itertools.combinations(positions, j)]
    base = np.array(sequences, dtype=float).reshape(-1, width)
    switch_times = np.vstack([base, base])
    initial = np.repeat([1.0, -1.0], len(base))
    logger.debug('Brute force over %d bang sequences, %d steps', len(switch_times), steps)

    crossing = red.target_mode == 'first_component' or red.dimension == 1
    speed = (red.rho * np.linalg.norm(red.gain) + np.linalg.norm(red.matrix, 2)
             * max(np.linalg.norm(red.x0), np.linalg.norm(red.target)))

    def tolerance(spacing):
        return None if crossing else max(spacing, dt ** 2) * speed

    spacing = stride * dt
    best = _arrivals(red, switch_times, initial, dt, steps, tolerance(spacing))
    found = (switch_times, initial, best, spacing) if np.isfinite(best).any() else None
    evaluated = len(best)
    while found is not None and switch_budget and spacing > dt ** 2:
        spacing = max(spacing / (REFINE_POINTS // 2), dt ** 2)
        candidates, signs = _refined(_leaders(*found[:3]), spacing, horizon)
        trial = _arrivals(red, candidates, signs, dt, steps, tolerance(spacing))
        evaluated += len(trial)
        if not np.isfinite(trial).any():
            logger.warning('Switch refinement found no arrival at spacing %.3g', spacing)
            break
        found = (candidates, signs, trial, spacing)

    if found is None:
        return OracleResult(False, None, 'brute_force',
                            {'candidates': evaluated, 'horizon': horizon})
    switch_times, initial, best, spacing = found
    winner = int(np.argmin(best))
    used = [float(s) for s in switch_times[winner] if s <= best[winner]]
    return OracleResult(True, float(best[winner]), 'brute_force', {
        'candidates': evaluated, 'initial_sign': float(initial[winner]), 'switch_times': used,
        'distance_tol': tolerance(spacing), 'resolution': spacing, 'enumerated': count,
    })
