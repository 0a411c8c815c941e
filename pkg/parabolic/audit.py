"""
Empirical audit of the structural inequalities an operator and control map
are expected to satisfy.

Each constant is fitted over sampled smooth fields: pure Laplacian
eigenmodes first, then random combinations of the lowest modes. Constants of
coercivity type (main ≥ α·leading − β·lower) keep the slack nonnegative on
at least 99 % of the samples; bound type constants take the sample maximum.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .hilbert_core import Field, random_smooth_field, spectral_laplacian
from .operators import (
    apply_A, apply_Aprime, apply_Bstar, control_dual_norm, feedback_direction, manifold_point,
)

logger = logging.getLogger(__name__)

MIN_SAMPLES = 100
EIGENMODE_SAMPLES = 8
TINY = 1e-14


@dataclass
class AuditReport:
    kind: str
    samples: int
    seed: int
    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    gamma1: float
    gamma2: float
    observability_constant: float
    fractional_c1: float
    fractional_c2: float
    c_star: float
    c3: float
    b_coercivity: float
    drift_norm: float
    rho1: float
    fractional_alpha: float
    yosida_nu: float
    degenerate: int = 0
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())

    def as_dict(self):
        payload = asdict(self)
        payload['passed'] = self.passed
        return payload


def coercivity_constants(main, leading, lower, quantile=1.0):
    """
    Fit main ≥ α·leading − β·lower.

    β stays zero when main/leading is already positive on every sample;
    otherwise β absorbs the worst negative part (at least one unit of the
    lower order norm) and α is the given lower percentile of the slack ratio.
    """
    main, leading, lower = (np.asarray(values, dtype=float) for values in (main, leading, lower))
    keep = leading > TINY
    main, leading, lower = main[keep], leading[keep], lower[keep]
    if main.size == 0:
        return float('nan'), float('nan')
    shift = 0.0
    if np.min(main / leading) <= 1e-12:
        usable = lower > TINY
        worst = np.max(-main[usable] / lower[usable]) if usable.any() else 0.0
        shift = max(2.0 * worst, 1.0)
    alpha = float(np.percentile((main + shift * lower) / leading, quantile))
    return alpha, shift


def _eigenmode_fields(spec, scale):
    spectrum = spectral_laplacian(spec.grid)
    count = min(EIGENMODE_SAMPLES, spec.grid.size)
    return [Field(spec.grid, np.tile(spectrum.eigenvector(k), spec.components) * scale,
                  spec.components) for k in range(count)]


def _random_field(spec, rng):
    return random_smooth_field(spec.grid, rng, spec.components, amplitude=rng.uniform(0.2, 2.0))


def audit_hypotheses(spec, control_map, samples=200, seed=0, target=None,
                     fractional_alpha=0.5, yosida_nu=0.1):
    if samples < MIN_SAMPLES:
        raise ValueError(f'Audit needs at least {MIN_SAMPLES} samples')
    rng = np.random.default_rng(seed)
    target = target if target is not None else spec.zeros()
    spec.check(target)

    eigenmodes = _eigenmode_fields(spec, 1.0)
    pairs = [(mode, spec.zeros()) for mode in eigenmodes]
    while len(pairs) < samples:
        pairs.append((_random_field(spec, rng), _random_field(spec, rng)))
    singles = eigenmodes + [_random_field(spec, rng) for _ in range(samples - len(eigenmodes))]
    degenerate = 0

    # monotonicity in the V*, V duality
    mono = []
    for y, ybar in pairs:
        w = y - ybar
        mono.append((spec.inner_H(apply_A(spec, y) - apply_A(spec, ybar), w),
                     spec.norm_V(w) ** 2, spec.norm_H(w) ** 2))
    alpha1, alpha2 = coercivity_constants(*zip(*mono))

    # regularity (A_H y, Γ_H y)_H
    regular = []
    for y in singles:
        gy = spec.gamma(y)
        regular.append((spec.inner_H(apply_A(spec, y), gy), spec.norm_H(gy) ** 2,
                        spec.norm_V(y) ** 2))
    alpha3, alpha4 = coercivity_constants(*zip(*regular))

    # adjoint regularity against the Yosida approximation
    yosida_rows = []
    for (y, z) in pairs:
        gz = spec.yosida(z, yosida_nu)
        yosida_rows.append((spec.inner_H(apply_Aprime(spec, y, gz), z), spec.norm_H(gz) ** 2,
                            spec.norm_V(z) ** 2))
    gamma1, gamma2 = coercivity_constants(*zip(*yosida_rows))

    # fractional inequalities on the eigenbasis
    fractional = []
    for index, v in enumerate(eigenmodes * (samples // len(eigenmodes) + 1)):
        if len(fractional) >= samples:
            break
        y = singles[index % len(singles)]
        fractional.append((
            spec.inner_H(apply_Aprime(spec, y, spec.fractional_power(v, -fractional_alpha)), v),
            spec.norm_H(spec.fractional_power(v, (1.0 - fractional_alpha) / 2.0)) ** 2,
            spec.norm_H(v) ** 2,
        ))
    fractional_c1, fractional_c2 = coercivity_constants(*zip(*fractional))

    observability_ratios, star_ratios, coercive_ratios = [], [], []
    for v in singles:
        zeta = apply_Bstar(control_map, spec.riesz_H(v))
        size = control_dual_norm(control_map, zeta)
        projected = control_map.project(v)
        if size <= TINY * max(spec.norm_H(v), 1.0):
            if spec.norm_H(projected) > TINY:
                degenerate += 1
            continue
        observability_ratios.append(spec.norm_H(control_map.project(
            spec.fractional_power(v, -fractional_alpha / 2.0))) / size)
        star_ratios.append(spec.norm_Vstar(projected) / size)
        projected_size = spec.norm_H(projected)
        if projected_size > TINY:
            coercive_ratios.append(
                control_dual_norm(control_map, feedback_direction(control_map, v))
                / projected_size)
    observability_constant = max(observability_ratios) if observability_ratios else float('inf')
    c_star = max(star_ratios) if star_ratios else float('inf')
    b_coercivity = min(coercive_ratios) if coercive_ratios else 0.0

    # one-sided Lipschitz bound towards the manifold point
    c3 = 0.0
    drift = 0.0
    drift_v = 0.0
    for y in singles:
        anchor = manifold_point(control_map, target, y)
        image = apply_A(spec, anchor)
        drift = max(drift, spec.norm_H(control_map.project(image)))
        drift_v = max(drift_v, spec.norm_V(image))
        w = control_map.project(y - anchor)
        size = spec.norm_H(w) ** 2
        if size <= TINY:
            continue
        c3 = max(c3, -spec.inner_H(apply_A(spec, y) - image, w) / size)

    report = AuditReport(
        kind=spec.kind, samples=samples, seed=seed,
        alpha1=alpha1, alpha2=alpha2, alpha3=alpha3, alpha4=alpha4,
        gamma1=gamma1, gamma2=gamma2, observability_constant=float(observability_constant),
        fractional_c1=fractional_c1, fractional_c2=fractional_c2, c_star=float(c_star), c3=float(c3),
        b_coercivity=float(b_coercivity), drift_norm=float(drift),
        rho1=float(c_star * drift_v), fractional_alpha=fractional_alpha,
        yosida_nu=yosida_nu, degenerate=degenerate,
    )
    report.checks = {
        'zero_fixed_point': spec.norm_H(apply_A(spec, spec.zeros())) == 0.0,
        'monotonicity': bool(alpha1 > 0),
        'regularity': bool(alpha3 > 0),
        'adjoint_regularity': bool(gamma1 > 0),
        'fractional_observability': bool(np.isfinite(observability_constant)),
        'fractional_coercivity': bool(fractional_c1 > 0),
        'observability': bool(np.isfinite(c_star)),
        'manifold': bool(np.isfinite(c3)),
        'controllability': bool(b_coercivity > 0),
    }
    failed = [name for name, ok in report.checks.items() if not ok]
    if failed:
        logger.warning('Audit of %s failed checks: %s', spec.kind, ', '.join(failed))
    else:
        logger.info('Audit of %s passed (alpha1=%.4g, C*=%.4g, C3=%.4g)',
                    spec.kind, alpha1, c_star, c3)
    return report
