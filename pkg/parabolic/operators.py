"""
Nonlinear operators A_H of the controlled parabolic systems, their
linearizations, the control map B and the projection P.

Every operator is assembled as a dense Jacobian on the flat state vector.
Derivatives of the nonlinear terms are hand-coded for each family of the
catalog, so the adjoint below (the weighted transpose of that Jacobian)
satisfies the L² pairing identity to rounding.
"""
import logging
from dataclasses import dataclass, field as dataclass_field
from functools import cached_property

import numpy as np
from scipy import linalg, special

from .exceptions import HypothesisError, ShapeError
from .hilbert_core import (
    DIRICHLET, HMINUS1, L2, NEUMANN, Field, NormTag, dual_norm, gamma_apply,
    gamma_power, inner_product, laplacian_matrix, norm, riesz, row_norms, spectral_laplacian,
    yosida_apply,
)

logger = logging.getLogger(__name__)


ZERO = 'zero'
LINEAR = 'linear'
CUBIC = 'cubic'
SATURATING = 'saturating'
SATURATING_PRODUCT = 'saturating_product'
LOGISTIC = 'logistic'
FAMILY_CHOICES = (ZERO, LINEAR, CUBIC, SATURATING, SATURATING_PRODUCT, LOGISTIC)

STEP_CACHE = 64


@dataclass(frozen=True)
class Nonlinearity:
    """
    Named analytic family r(y, z) with coefficients a, b, c.

    zero                0
    linear              a·y + b·z
    cubic               c·y³ + a·y
    saturating          a·y + c·y/√(1+y²)
    saturating_product  c·y·z²/(1+z²)
    logistic            c·(σ(a·y + b·z) − ½)

    All families vanish at the origin.
    """
    family: str = ZERO
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILY_CHOICES:
            raise HypothesisError('Unknown nonlinearity family', family=self.family)
        for name in ('a', 'b', 'c'):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise HypothesisError('Nonlinearity coefficients must be finite',
                                      family=self.family, **{name: value})
            object.__setattr__(self, name, value)

    def value(self, y, z=0.0):
        if self.family == LINEAR:
            return self.a * y + self.b * z
        if self.family == CUBIC:
            return self.c * y ** 3 + self.a * y
        if self.family == SATURATING:
            return self.a * y + self.c * y / np.sqrt(1.0 + y ** 2)
        if self.family == SATURATING_PRODUCT:
            return self.c * y * z ** 2 / (1.0 + z ** 2)
        if self.family == LOGISTIC:
            return self.c * (special.expit(self.a * y + self.b * z) - 0.5)
        return np.zeros_like(y + z, dtype=float)

    def d_y(self, y, z=0.0):
        ones = np.ones_like(y + z, dtype=float)
        if self.family == LINEAR:
            return self.a * ones
        if self.family == CUBIC:
            return 3.0 * self.c * y ** 2 + self.a
        if self.family == SATURATING:
            return self.a + self.c * (1.0 + y ** 2) ** -1.5
        if self.family == SATURATING_PRODUCT:
            return self.c * z ** 2 / (1.0 + z ** 2) * ones
        if self.family == LOGISTIC:
            s = special.expit(self.a * y + self.b * z)
            return self.c * self.a * s * (1.0 - s)
        return 0.0 * ones

    def d_z(self, y, z=0.0):
        ones = np.ones_like(y + z, dtype=float)
        if self.family == LINEAR:
            return self.b * ones
        if self.family == SATURATING_PRODUCT:
            return 2.0 * self.c * y * z / (1.0 + z ** 2) ** 2
        if self.family == LOGISTIC:
            s = special.expit(self.a * y + self.b * z)
            return self.c * self.b * s * (1.0 - s)
        return 0.0 * ones

    @property
    def lower_slope(self):
        """Infimum of ∂r/∂y over the whole plane."""
        if self.family == LINEAR:
            return self.a
        if self.family == CUBIC:
            return self.a if self.c >= 0 else -np.inf
        if self.family == SATURATING:
            return self.a + min(self.c, 0.0)
        if self.family == SATURATING_PRODUCT:
            return min(self.c, 0.0)
        if self.family == LOGISTIC:
            return min(self.c * self.a / 4.0, 0.0)
        return 0.0

    @property
    def is_linear(self):
        return self.family in (ZERO, LINEAR)

    @property
    def growth_exponent(self):
        """κ in |∂r/∂y| ≤ C(|y|^κ + 1)."""
        return 2.0 if self.family == CUBIC and self.c != 0 else 0.0

    def describe(self):
        return {'family': self.family, 'a': self.a, 'b': self.b, 'c': self.c}


def _finite(**values):
    for name, value in values.items():
        if not np.isfinite(value):
            raise HypothesisError('Operator parameters must be finite', **{name: value})


def _axis_divergence(n, h, speed, boundary):
    matrix = (np.eye(n, k=1) - np.eye(n, k=-1)) / (2.0 * h)
    speeds = np.full(n, speed)
    if boundary != DIRICHLET:
        # b·ν = 0: the flux is reflected through the boundary node
        speeds[0] = speeds[-1] = 0.0
        matrix[0, 1] = 1.0 / h
        matrix[-1, -2] = -1.0 / h
    return matrix * speeds


def divergence_matrix(grid, drift):
    """Centered ∇·(b y) for a drift with constant speed along each axis."""
    blocks = [_axis_divergence(n, h, speed, grid.boundary)
              for n, h, speed in zip(grid.nodes, grid.spacing, drift)]
    if grid.dimension == 1:
        return blocks[0]
    nx, ny = grid.nodes
    return np.kron(blocks[0], np.eye(ny)) + np.kron(np.eye(nx), blocks[1])


class OperatorSpec:
    """
    Configured operator A_H on a grid.

    Subclasses provide ``apply`` and ``jacobian`` on flat state vectors.
    ``pivot`` is the norm tag of H; the energy space V is encoded through
    ``gamma_spectra``, one Γ per component (``None`` means the component's V
    coincides with L²).
    """
    kind = None
    components = 1
    pivot = L2

    def __init__(self, grid):
        self.grid = grid

    @cached_property
    def laplacian(self):
        return laplacian_matrix(self.grid)

    @property
    def size(self):
        return self.components * self.grid.size

    @property
    def gamma_shift(self):
        return 1.0 if self.grid.boundary == NEUMANN else 0.0

    def gamma_spectra(self):
        spectrum = spectral_laplacian(self.grid, self.gamma_shift)
        return (spectrum,) * self.components

    def apply(self, values):
        raise NotImplementedError

    def jacobian(self, values):
        raise NotImplementedError

    @property
    def linear(self):
        """True when A is a matrix, so the Jacobian does not depend on the state."""
        return False

    def step_inverse(self, dt):
        """(I + dt·A)⁻¹ for linear operators, cached per step size."""
        cache = self.__dict__.setdefault('_step_inverses', {})
        key = float(dt)
        if key not in cache:
            if len(cache) >= STEP_CACHE:
                cache.clear()
            matrix = self.jacobian(np.zeros(self.size))
            cache[key] = linalg.inv(np.eye(self.size) + key * matrix)
        return cache[key]

    def parameters(self):
        return {}

    def describe(self):
        return {'kind': self.kind, 'components': self.components,
                'pivot': self.pivot.label, 'parameters': self.parameters()}

    def check(self, y):
        if y.grid != self.grid or y.components != self.components:
            raise ShapeError('Field does not match the operator state space', kind=self.kind,
                             expected=self.components, received=y.components)

    def zeros(self):
        return Field.zeros(self.grid, self.components)

    # H and V geometry

    def inner_H(self, a, b):
        return inner_product(a, b, self.pivot)

    def norm_H(self, a):
        return norm(a, self.pivot)

    def riesz_H(self, a):
        return riesz(a, self.pivot)

    def gamma(self, y):
        return _per_component(y, self.gamma_spectra(), gamma_apply, lambda part: part)

    def fractional_power(self, y, alpha):
        return _per_component(y, self.gamma_spectra(),
                              lambda part, s: gamma_power(part, s, alpha), lambda part: part)

    def gamma_inverse(self, y):
        return self.fractional_power(y, -1.0)

    def yosida(self, y, nu):
        return _per_component(y, self.gamma_spectra(),
                              lambda part, s: yosida_apply(part, s, nu),
                              lambda part: part / (1.0 + nu))

    def norm_V(self, y):
        return float(np.sqrt(max(self.inner_H(self.gamma(y), y), 0.0)))

    def norm_Vstar(self, y):
        return float(np.sqrt(max(self.inner_H(self.gamma_inverse(y), y), 0.0)))


def _per_component(y, spectra, with_spectrum, without):
    parts = []
    for index, spectrum in enumerate(spectra):
        part = y.component(index)
        parts.append(without(part) if spectrum is None else with_spectrum(part, spectrum))
    return Field.stack(parts)


class PotentialDrift(OperatorSpec):
    """−Δy + β(y) + a₁y − ∇·(b y) with the grid's boundary condition."""
    kind = 'potential_drift'

    def __init__(self, grid, beta=None, a1=0.0, drift=None):
        super().__init__(grid)
        self.beta = beta or Nonlinearity()
        self.a1 = float(a1)
        self.drift = tuple(float(v) for v in (drift or (0.0,) * grid.dimension))
        _finite(a1=self.a1, **{f'drift_{axis}': v for axis, v in enumerate(self.drift)})
        if len(self.drift) != grid.dimension:
            raise HypothesisError('One drift speed per axis', drift=self.drift)
        if self.beta.lower_slope < 0:
            raise HypothesisError('Potential must be monotone nondecreasing',
                                  lower_slope=self.beta.lower_slope)
        self._divergence = divergence_matrix(grid, self.drift)

    @property
    def linear(self):
        return self.beta.is_linear

    def apply(self, values):
        return (self.laplacian @ values + self.beta.value(values) + self.a1 * values
                - self._divergence @ values)

    def jacobian(self, values):
        return (self.laplacian + np.diag(self.beta.d_y(values) + self.a1)
                - self._divergence)

    def parameters(self):
        return {'beta': self.beta.describe(), 'a1': self.a1, 'drift': list(self.drift),
                'robin_gamma': self.grid.robin_gamma}


class PorousMedia(OperatorSpec):
    """−Δβ(y) on a Dirichlet grid, posed in H = H⁻¹ with V = L²."""
    kind = 'porous_media'
    pivot = HMINUS1

    def __init__(self, grid, beta, a0, kappa=0.0):
        super().__init__(grid)
        self.beta = beta
        self.a0 = float(a0)
        self.kappa = float(kappa)
        _finite(a0=self.a0, kappa=self.kappa)
        if grid.boundary != DIRICHLET:
            raise HypothesisError('Porous media requires homogeneous Dirichlet data',
                                  boundary=grid.boundary)
        if beta.family == SATURATING_PRODUCT or beta.b != 0:
            raise HypothesisError('Porous media needs a single-variable β', family=beta.family)
        if not self.a0 > 0 or beta.lower_slope < self.a0:
            raise HypothesisError("β' must stay above a positive a0",
                                  a0=self.a0, lower_slope=beta.lower_slope)
        if not 0 <= self.kappa < 1 or beta.growth_exponent > self.kappa:
            raise HypothesisError('Slow diffusion needs growth exponent kappa in [0, 1)',
                                  kappa=self.kappa, growth=beta.growth_exponent)

    def gamma_spectra(self):
        return (spectral_laplacian(self.grid),)

    @property
    def linear(self):
        return self.beta.is_linear

    def apply(self, values):
        return self.laplacian @ self.beta.value(values)

    def jacobian(self, values):
        return self.laplacian * self.beta.d_y(values)

    def parameters(self):
        return {'beta': self.beta.describe(), 'a0': self.a0, 'kappa': self.kappa}


class ReactionDiffusion2(OperatorSpec):
    """(−D₁Δy + f(y, z), −D₂Δz + g(y, z)) with a shared boundary condition."""
    kind = 'reaction_diffusion'
    components = 2

    def __init__(self, grid, d1, d2, f, g):
        super().__init__(grid)
        self.d1 = float(d1)
        self.d2 = float(d2)
        self.f = f
        self.g = g
        _finite(d1=self.d1, d2=self.d2)
        self._check_diffusivities()

    @property
    def linear(self):
        return self.f.is_linear and self.g.is_linear

    def _check_diffusivities(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise HypothesisError('Diffusivities must be positive', d1=self.d1, d2=self.d2)

    def _split(self, values):
        n = self.grid.size
        return values[:n], values[n:]

    def apply(self, values):
        y, z = self._split(values)
        lap = self.laplacian
        return np.concatenate([self.d1 * (lap @ y) + self.f.value(y, z),
                               self.d2 * (lap @ z) + self.g.value(y, z)])

    def jacobian(self, values):
        y, z = self._split(values)
        lap = self.laplacian
        return np.block([
            [self.d1 * lap + np.diag(self.f.d_y(y, z)), np.diag(self.f.d_z(y, z))],
            [np.diag(self.g.d_y(y, z)), self.d2 * lap + np.diag(self.g.d_z(y, z))],
        ])

    def parameters(self):
        return {'d1': self.d1, 'd2': self.d2, 'f': self.f.describe(), 'g': self.g.describe()}


class FitzHughNagumo(ReactionDiffusion2):
    """f = α₀y + z, g = −σy + γz, D₂ = 0; the second component lives in V₂ = L²."""
    kind = 'fitzhugh_nagumo'

    def __init__(self, grid, alpha0, sigma, gamma, d1=1.0):
        self.alpha0 = float(alpha0)
        self.sigma = float(sigma)
        self.recovery = float(gamma)
        super().__init__(grid, d1, 0.0,
                         Nonlinearity(LINEAR, a=self.alpha0, b=1.0),
                         Nonlinearity(LINEAR, a=-self.sigma, b=self.recovery))

    def _check_diffusivities(self):
        if not self.d1 > 0:
            raise HypothesisError('Diffusivity must be positive', d1=self.d1)

    def gamma_spectra(self):
        return (spectral_laplacian(self.grid, self.gamma_shift), None)

    def parameters(self):
        return {'alpha0': self.alpha0, 'sigma': self.sigma, 'gamma': self.recovery,
                'd1': self.d1}


class PhaseField(OperatorSpec):
    """
    Caginalp-type system for (σ, φ):

        (−kΔσ + klΔφ,  −νΔφ + β(φ) + π(φ) − γσ + γlφ)

    ``potential`` is β + π, the double well r³ − r unless configured otherwise.
    """
    kind = 'phase_field'
    components = 2

    def __init__(self, grid, k, latent, nu, gamma, potential=None):
        super().__init__(grid)
        self.k = float(k)
        self.latent = float(latent)
        self.nu = float(nu)
        self.coupling = float(gamma)
        self.potential = potential or Nonlinearity(CUBIC, a=-1.0, c=1.0)
        _finite(k=self.k, latent=self.latent, nu=self.nu, gamma=self.coupling)
        if not (self.k > 0 and self.nu > 0):
            raise HypothesisError('Diffusivities must be positive', k=self.k, nu=self.nu)

    @property
    def linear(self):
        return self.potential.is_linear

    def apply(self, values):
        n = self.grid.size
        sigma, phi = values[:n], values[n:]
        lap = self.laplacian
        return np.concatenate([
            self.k * (lap @ sigma) - self.k * self.latent * (lap @ phi),
            self.nu * (lap @ phi) + self.potential.value(phi)
            - self.coupling * sigma + self.coupling * self.latent * phi,
        ])

    def jacobian(self, values):
        n = self.grid.size
        phi = values[n:]
        lap = self.laplacian
        return np.block([
            [self.k * lap, -self.k * self.latent * lap],
            [-self.coupling * np.eye(n),
             self.nu * lap + np.diag(self.potential.d_y(phi) + self.coupling * self.latent)],
        ])

    def parameters(self):
        return {'k': self.k, 'latent': self.latent, 'nu': self.nu, 'gamma': self.coupling,
                'potential': self.potential.describe()}


def apply_A(spec, y):
    spec.check(y)
    return y.with_values(spec.apply(y.values))


def apply_Aprime(spec, y, z):
    spec.check(y)
    spec.check(z)
    return z.with_values(spec.jacobian(y.values) @ z.values)


def apply_Aprime_adjoint(spec, y, p):
    """Transpose of A′(y) with respect to the weighted L² pairing."""
    spec.check(y)
    spec.check(p)
    weights = p.weights
    return p.with_values(spec.jacobian(y.values).T @ (weights * p.values) / weights)


def adjoint_matrix(spec, values):
    weights = np.tile(spec.grid.weights, spec.components)
    return spec.jacobian(values).T * weights / weights[:, None]


IDENTITY = 'identity'
FIRST_COMPONENT = 'first_component'
NONLOCAL = 'nonlocal'
CONTROL_MODES = (IDENTITY, FIRST_COMPONENT, NONLOCAL)

PROJECTION_FULL = 'full'
PROJECTION_FIRST = 'first_component'
PROJECTION_CHOICES = (PROJECTION_FULL, PROJECTION_FIRST)


@dataclass(eq=False)
class ControlMap:
    """
    B: U → H, its L²-adjoint B*, and the projection P.

    Nonlocal kernels act on the first state component from a scalar control
    on ``control_grid``: (Bu)_i = Σ_j K_ij w_j u_j.
    """
    grid: object
    components: int = 1
    mode: str = IDENTITY
    norm_tag: NormTag = L2
    pivot: NormTag = L2
    projection: str = PROJECTION_FULL
    kernel: np.ndarray = None
    control_grid: object = None
    matrix: np.ndarray = dataclass_field(init=False, repr=False)
    adjoint: np.ndarray = dataclass_field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in CONTROL_MODES:
            raise HypothesisError('Unknown control mode', mode=self.mode)
        if self.projection not in PROJECTION_CHOICES:
            raise HypothesisError('Unknown projection', projection=self.projection)
        if self.projection == PROJECTION_FIRST and self.components < 2:
            raise HypothesisError('First-component projection needs a system',
                                  components=self.components)
        if self.mode == FIRST_COMPONENT and self.projection != PROJECTION_FIRST:
            raise HypothesisError('First-component control pairs with the first-component projection',
                                  projection=self.projection)
        if self.control_grid is None or self.mode != NONLOCAL:
            self.control_grid = self.grid
        self.matrix = self._assemble()
        state_weights = np.tile(self.grid.weights, self.components)
        control_weights = np.tile(self.control_grid.weights, self.control_components)
        self.adjoint = self.matrix.T * state_weights / control_weights[:, None]

    @classmethod
    def for_spec(cls, spec, **options):
        options.setdefault('pivot', spec.pivot)
        return cls(spec.grid, spec.components, **options)

    @property
    def control_components(self):
        return 1 if self.mode == NONLOCAL else self.components

    @property
    def mask(self):
        mask = np.ones((self.components, self.grid.size))
        if self.projection == PROJECTION_FIRST:
            mask[1:] = 0.0
        return mask.ravel()

    def _assemble(self):
        n = self.grid.size
        total = self.components * n
        if self.mode == IDENTITY:
            return np.eye(total)
        if self.mode == FIRST_COMPONENT:
            matrix = np.zeros((total, total))
            matrix[:n, :n] = np.eye(n)
            return matrix
        kernel = np.asarray(self.kernel, dtype=float)
        if kernel.shape != (n, self.control_grid.size):
            raise ShapeError('Kernel shape does not match the grids',
                             kernel=kernel.shape, expected=(n, self.control_grid.size))
        if not np.all(np.isfinite(kernel)):
            raise HypothesisError('Kernel entries must be finite')
        matrix = np.zeros((total, self.control_grid.size))
        matrix[:n] = kernel * self.control_grid.weights
        return matrix

    def check_control(self, u):
        if u.grid != self.control_grid or u.components != self.control_components:
            raise ShapeError('Control does not live on the control grid',
                             expected=self.control_components, received=u.components)

    def zero_control(self):
        return Field.zeros(self.control_grid, self.control_components)

    def project(self, v):
        return v.with_values(self.mask * v.values)

    def describe(self):
        return {'mode': self.mode, 'norm': self.norm_tag.label, 'projection': self.projection,
                'control_nodes': self.control_grid.size}


def apply_B(control_map, u):
    control_map.check_control(u)
    return Field(control_map.grid, control_map.matrix @ u.values, control_map.components)


def apply_Bstar(control_map, v):
    if v.grid != control_map.grid or v.components != control_map.components:
        raise ShapeError('Field does not match the state space of the control map',
                         expected=control_map.components, received=v.components)
    return Field(control_map.control_grid, control_map.adjoint @ v.values,
                 control_map.control_components)


def feedback_direction(control_map, deviation):
    """ζ = B* R_H P(deviation): the U* element paired with the H-projection of a deviation."""
    return apply_Bstar(control_map, riesz(control_map.project(deviation), control_map.pivot))


def equivalent_control(spec, control_map, state):
    """Control ũ with Bũ = P A_H(state), solved in least squares for nonlocal maps."""
    drift = control_map.project(apply_A(spec, state))
    if control_map.mode == NONLOCAL:
        values, *_ = linalg.lstsq(control_map.matrix, drift.values)
        return Field(control_map.control_grid, values, 1)
    return Field(control_map.grid, drift.values, control_map.components)


def control_norm(control_map, u):
    return norm(u, control_map.norm_tag)


def control_dual_norm(control_map, zeta):
    return dual_norm(zeta, control_map.norm_tag)


def control_row_norms(control_map, rows, dual=False):
    return row_norms(control_map.control_grid, control_map.control_components, rows,
                     control_map.norm_tag, dual)


def preset(name, grid):
    """Operators of the worked examples with the parameters used throughout the tests."""
    factories = {
        'heat': lambda: PotentialDrift(grid),
        'allen_cahn': lambda: PotentialDrift(grid, beta=Nonlinearity(CUBIC, c=1.0), a1=-1.0),
        'porous_media': lambda: PorousMedia(
            grid, Nonlinearity(SATURATING, a=0.5, c=0.5), a0=0.5),
        'reaction_case_i': lambda: ReactionDiffusion2(
            grid, 1.0, 1.0, Nonlinearity(LOGISTIC, a=1.0, b=1.0, c=0.5),
            Nonlinearity(LINEAR, a=-0.5, b=1.0)),
        'reaction_case_ii': lambda: ReactionDiffusion2(
            grid, 1.0, 1.0, Nonlinearity(SATURATING_PRODUCT, c=1.0),
            Nonlinearity(LINEAR, b=1.0)),
        'reaction_case_iii': lambda: ReactionDiffusion2(
            grid, 1.0, 1.0, Nonlinearity(LINEAR, a=1.0, b=0.5),
            Nonlinearity(LINEAR, a=-0.5, b=1.0)),
        'fitzhugh_nagumo': lambda: FitzHughNagumo(grid, alpha0=1.0, sigma=1.0, gamma=0.5),
        'phase_field': lambda: PhaseField(grid, k=1.0, latent=1.0, nu=1.0, gamma=1.0),
    }
    if name not in factories:
        raise HypothesisError('Unknown operator preset', preset=name)
    return factories[name]()


PRESET_CHOICES = ('heat', 'allen_cahn', 'porous_media', 'reaction_case_i', 'reaction_case_ii',
                  'reaction_case_iii', 'fitzhugh_nagumo', 'phase_field')


def manifold_point(control_map, target, y):
    """ŷ: the target's controlled component with the running uncontrolled components of y."""
    if control_map.projection != PROJECTION_FIRST:
        return target
    return Field.stack([target.component(0)] + [y.component(i) for i in range(1, y.components)])
