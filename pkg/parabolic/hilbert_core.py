"""
Discrete function spaces on uniform structured grids.

Fields are nodal values on a 1D or 2D grid, possibly with several state
components. The discrete measure uses trapezoid weights (Neumann/Robin grids
include the boundary nodes, Dirichlet grids carry only interior nodes), and
the Laplacian is a centered second-order stencil with ghost-node elimination
at Neumann/Robin boundaries. With those two choices ``W @ L`` is symmetric,
so every spectral quantity below comes from one dense generalized
eigendecomposition.
"""
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import linalg

from .exceptions import IndeterminacyError, NonFiniteError, ShapeError, SingularityError

logger = logging.getLogger(__name__)

DIRICHLET = 'dirichlet'
NEUMANN = 'neumann'
ROBIN = 'robin'
BOUNDARY_CHOICES = (DIRICHLET, NEUMANN, ROBIN)

ORTHONORMALITY_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on a box; one boundary condition shared by all components."""
    dimension: int
    lengths: tuple
    nodes: tuple
    boundary: str = NEUMANN
    robin_gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'lengths', tuple(float(value) for value in self.lengths))
        object.__setattr__(self, 'nodes', tuple(int(value) for value in self.nodes))
        object.__setattr__(self, 'robin_gamma', float(self.robin_gamma))
        if self.dimension not in (1, 2):
            raise ShapeError('Grid dimension must be 1 or 2', dimension=self.dimension)
        if len(self.lengths) != self.dimension or len(self.nodes) != self.dimension:
            raise ShapeError('One length and one node count per axis',
                             lengths=self.lengths, nodes=self.nodes)
        if min(self.nodes) < 3:
            raise ShapeError('At least 3 nodes per axis', nodes=self.nodes)
        if min(self.lengths) <= 0 or not all(np.isfinite(self.lengths)):
            raise ShapeError('Axis lengths must be positive', lengths=self.lengths)
        if self.boundary not in BOUNDARY_CHOICES:
            raise ShapeError('Unknown boundary condition', boundary=self.boundary)
        if self.boundary == ROBIN and not self.robin_gamma > 0:
            raise ShapeError('Robin coefficient must be strictly positive',
                             robin_gamma=self.robin_gamma)

    @classmethod
    def interval(cls, nodes, length=1.0, boundary=NEUMANN, robin_gamma=0.0):
        return cls(1, (length,), (nodes,), boundary, robin_gamma)

    @classmethod
    def rectangle(cls, nodes, lengths=(1.0, 1.0), boundary=NEUMANN, robin_gamma=0.0):
        return cls(2, tuple(lengths), tuple(nodes), boundary, robin_gamma)

    @property
    def size(self):
        return int(np.prod(self.nodes))

    @property
    def spacing(self):
        if self.boundary == DIRICHLET:
            return tuple(length / (n + 1) for length, n in zip(self.lengths, self.nodes))
        return tuple(length / (n - 1) for length, n in zip(self.lengths, self.nodes))

    def axis_coordinates(self, axis):
        h = self.spacing[axis]
        n = self.nodes[axis]
        if self.boundary == DIRICHLET:
            return h * np.arange(1, n + 1)
        return h * np.arange(n)

    def axis_weights(self, axis):
        h = self.spacing[axis]
        weights = np.full(self.nodes[axis], h)
        if self.boundary != DIRICHLET:
            weights[0] = weights[-1] = h / 2
        return weights

    @cached_property
    def coordinates(self):
        axes = [self.axis_coordinates(axis) for axis in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return tuple(np.ascontiguousarray(part.ravel()) for part in mesh)

    @cached_property
    def weights(self):
        weights = self.axis_weights(0)
        for axis in range(1, self.dimension):
            weights = np.kron(weights, self.axis_weights(axis))
        weights.setflags(write=False)
        return weights

    @property
    def measure(self):
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values of ``components`` state components, stored component-major."""
    grid: Grid
    values: np.ndarray
    components: int = 1

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if self.components < 1 or values.size != self.components * self.grid.size:
            raise ShapeError('Field length does not match grid and components',
                             length=values.size, nodes=self.grid.size,
                             components=self.components)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(count=int(np.count_nonzero(~np.isfinite(values))))
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, grid, components=1):
        return cls(grid, np.zeros(components * grid.size), components)

    @classmethod
    def constant(cls, grid, value, components=1):
        levels = np.broadcast_to(np.asarray(value, dtype=float), (components,))
        return cls(grid, np.repeat(levels, grid.size), components)

    @classmethod
    def from_function(cls, grid, function, components=1):
        """Sample ``function(*coordinates)``; it returns one array per component."""
        sampled = function(*grid.coordinates)
        if components == 1:
            sampled = [sampled]
        parts = [np.broadcast_to(np.asarray(part, dtype=float), (grid.size,)) for part in sampled]
        return cls(grid, np.concatenate(parts), components)

    @classmethod
    def stack(cls, parts):
        grid = parts[0].grid
        for part in parts[1:]:
            if part.grid != grid:
                raise ShapeError('Cannot stack fields on different grids')
        return cls(grid, np.concatenate([part.values for part in parts]),
                   sum(part.components for part in parts))

    @property
    def matrix(self):
        return self.values.reshape(self.components, self.grid.size)

    @property
    def weights(self):
        return np.tile(self.grid.weights, self.components)

    def component(self, index):
        return Field(self.grid, self.matrix[index], 1)

    def with_values(self, values):
        return Field(self.grid, values, self.components)

    def _check_compatible(self, other):
        if other.grid != self.grid or other.components != self.components:
            raise ShapeError('Fields live on different grids or component counts',
                             left=self.components, right=other.components)

    def __add__(self, other):
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __neg__(self):
        return self.with_values(-self.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self.with_values(self.values / float(scalar))


KIND_L2 = 'L2'
KIND_H1 = 'H1'
KIND_H1DUAL = 'H1dual'
KIND_LP = 'Lp'
KIND_HMINUS1 = 'Hminus1'
NORM_KINDS = (KIND_L2, KIND_H1, KIND_H1DUAL, KIND_LP, KIND_HMINUS1)


@dataclass(frozen=True)
class NormTag:
    kind: str
    p: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, 'p', float(self.p))
        if self.kind not in NORM_KINDS:
            raise ShapeError(f'Unknown norm kind {self.kind!r}', kind=self.kind)
        if self.kind == KIND_LP and self.p not in (2.0, 4.0):
            raise ShapeError('Only L2 and L4 Lebesgue norms are supported', p=self.p)
        if self.kind != KIND_LP and self.p != 2.0:
            raise ShapeError('Exponent only applies to Lp norms', kind=self.kind, p=self.p)

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text.startswith('Lp(') and text.endswith(')'):
            try:
                return cls(KIND_LP, float(text[3:-1]))
            except ValueError:
                raise ShapeError('Lebesgue exponent must be a number', tag=text) from None
        if text == 'L4':
            return cls(KIND_LP, 4.0)
        return cls({kind.upper(): kind for kind in NORM_KINDS}.get(text.upper(), text))

    @property
    def label(self):
        if self.kind == KIND_LP:
            return f'Lp({self.p:g})'
        return self.kind

    @property
    def is_hilbert(self):
        return self.kind != KIND_LP or self.p == 2.0

    @property
    def conjugate(self):
        return self.p / (self.p - 1.0)


L2 = NormTag(KIND_L2)
H1 = NormTag(KIND_H1)
H1DUAL = NormTag(KIND_H1DUAL)
HMINUS1 = NormTag(KIND_HMINUS1)
L4 = NormTag(KIND_LP, 4.0)


def _axis_laplacian(n, h, boundary, gamma):
    matrix = (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h ** 2
    if boundary != DIRICHLET:
        # ghost nodes y[-1] = y[1] - 2h y'(0) eliminated
        matrix[0, 1] = matrix[-1, -2] = -2.0 / h ** 2
        if boundary == ROBIN:
            matrix[0, 0] += 2.0 * gamma / h
            matrix[-1, -1] += 2.0 * gamma / h
    return matrix


@lru_cache(maxsize=64)
def laplacian_matrix(grid):
    """Dense ``-Δ_h`` including Robin boundary terms; self-adjoint in the weighted inner product."""
    blocks = [_axis_laplacian(n, h, grid.boundary, grid.robin_gamma)
              for n, h in zip(grid.nodes, grid.spacing)]
    matrix = blocks[0]
    if grid.dimension == 2:
        nx, ny = grid.nodes
        matrix = np.kron(blocks[0], np.eye(ny)) + np.kron(np.eye(nx), blocks[1])
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class SpectralLaplacian:
    """``Γ_H = shift·I − Δ_h`` with its W-orthonormal eigenbasis."""
    grid: Grid
    shift: float
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def boundary(self):
        return self.grid.boundary

    def coefficients(self, vector):
        return self.eigenvectors.T @ (self.grid.weights * vector)

    def synthesize(self, coefficients):
        return self.eigenvectors @ coefficients

    def eigenvector(self, index):
        return self.eigenvectors[:, index].copy()

    def apply_function(self, matrix, function):
        """Apply ``function(λ)`` spectrally to each row of a (components, nodes) array."""
        multipliers = function(self.eigenvalues)
        coefficients = self.eigenvectors.T @ (self.grid.weights[:, None] * matrix.T)
        return (self.eigenvectors @ (multipliers[:, None] * coefficients)).T


@lru_cache(maxsize=64)
def spectral_laplacian(grid, shift=0.0):
    matrix = laplacian_matrix(grid) + shift * np.eye(grid.size)
    weights = grid.weights
    stiffness = weights[:, None] * matrix
    stiffness = 0.5 * (stiffness + stiffness.T)
    eigenvalues, eigenvectors = linalg.eigh(stiffness, np.diag(weights))
    scale = max(abs(eigenvalues[-1]), 1.0)
    eigenvalues[np.abs(eigenvalues) < 1e-12 * scale] = 0.0

    gram = eigenvectors.T @ (weights[:, None] * eigenvectors)
    defect = np.abs(gram - np.eye(grid.size)).max()
    if defect > ORTHONORMALITY_TOL:
        logger.warning('Eigenbasis orthonormality defect %.3e on %s', defect, grid)
    logger.debug('Spectral Laplacian on %s nodes, shift %g, λ in [%.4g, %.4g]',
                 grid.size, shift, eigenvalues[0], eigenvalues[-1])

    for array in (matrix, eigenvalues, eigenvectors):
        array.setflags(write=False)
    return SpectralLaplacian(grid, float(shift), matrix, eigenvalues, eigenvectors)


def _check_pair(a, b):
    if a.grid != b.grid or a.components != b.components:
        raise ShapeError('Inner product of fields on different grids',
                         left=(a.grid.size, a.components), right=(b.grid.size, b.components))


def _map_components(field, function):
    return field.with_values(function(field.matrix).ravel())


def _require_dirichlet(grid, tag):
    if grid.boundary != DIRICHLET:
        raise ShapeError(f'{tag.label} requires a Dirichlet grid', boundary=grid.boundary)


def _inverse_laplacian(field):
    spectral = spectral_laplacian(field.grid)
    return _map_components(field, lambda matrix: spectral.apply_function(matrix, np.reciprocal))


def _resolvent_h1(field):
    spectral = spectral_laplacian(field.grid, 1.0)
    return _map_components(field, lambda matrix: spectral.apply_function(matrix, np.reciprocal))


def _apply_laplacian(field, shift=0.0):
    matrix = laplacian_matrix(field.grid)
    return _map_components(field, lambda rows: rows @ matrix.T + shift * rows)


def inner_product(a, b, tag=L2):
    """
    Discrete inner product for Hilbert tags; for ``Lp`` it is the L² pairing
    between U* and U.
    """
    _check_pair(a, b)
    if tag.kind in (KIND_L2, KIND_LP):
        other = b
    elif tag.kind == KIND_H1:
        other = _apply_laplacian(b, 1.0)
    elif tag.kind == KIND_H1DUAL:
        other = _resolvent_h1(b)
    else:
        _require_dirichlet(a.grid, tag)
        other = _inverse_laplacian(b)
    return float(np.sum(a.weights * a.values * other.values))


def norm(a, tag=L2):
    if tag.kind == KIND_LP and tag.p != 2.0:
        return float(np.sum(a.weights * np.abs(a.values) ** tag.p) ** (1.0 / tag.p))
    return float(np.sqrt(max(inner_product(a, a, tag), 0.0)))


def dual_norm(z, tag=L2):
    """Norm of ``z`` in U* where U carries ``tag`` and the pairing is the L² integral."""
    if tag.kind == KIND_LP and tag.p != 2.0:
        q = tag.conjugate
        return float(np.sum(z.weights * np.abs(z.values) ** q) ** (1.0 / q))
    if tag.kind == KIND_H1:
        return norm(z, H1DUAL)
    if tag.kind == KIND_H1DUAL:
        return norm(z, H1)
    if tag.kind == KIND_HMINUS1:
        _require_dirichlet(z.grid, tag)
        return float(np.sqrt(max(np.sum(z.weights * z.values * _apply_laplacian(z).values), 0.0)))
    return norm(z, L2)


def gamma_apply(y, s):
    """Γ_H y with Γ_H = shift·I − Δ_h (Robin terms included)."""
    if y.grid != s.grid:
        raise ShapeError('Field and operator live on different grids')
    return _map_components(y, lambda rows: rows @ s.matrix.T)


def yosida_apply(y, s, nu):
    """Yosida approximation Γ_H (I + νΓ_H)⁻¹ y, evaluated on the eigenbasis."""
    if not nu > 0:
        raise ValueError('Yosida parameter must be positive')
    return _map_components(y, lambda rows: s.apply_function(rows, lambda lam: lam / (1.0 + nu * lam)))


def gamma_power(y, s, alpha):
    if not -1.0 <= alpha <= 1.0:
        raise ValueError('Fractional power must lie in [-1, 1]')
    if alpha < 0 and s.eigenvalues[0] <= 0:
        raise SingularityError(alpha=alpha, smallest_eigenvalue=float(s.eigenvalues[0]),
                               boundary=s.boundary, shift=s.shift)
    return _map_components(
        y, lambda rows: s.apply_function(rows, lambda lam: np.maximum(lam, 0.0) ** alpha))


def duality_map_F(u, tag=L2):
    """
    Duality mapping F: U → U* with ⟨F(u), u⟩ = ‖u‖², ‖F(u)‖_{U*} = ‖u‖.

    For Hilbert tags this is the Riesz map of the tag's inner product, which
    is also how H-inner products are routed through the L² pairing.
    """
    if tag.kind == KIND_L2 or (tag.kind == KIND_LP and tag.p == 2.0):
        return u
    if tag.kind == KIND_LP:
        size = norm(u, tag)
        if size == 0.0:
            return Field.zeros(u.grid, u.components)
        p = tag.p
        return u.with_values(size ** (2.0 - p) * np.abs(u.values) ** (p - 2.0) * u.values)
    if tag.kind == KIND_H1:
        return _apply_laplacian(u, 1.0)
    if tag.kind == KIND_H1DUAL:
        return _resolvent_h1(u)
    _require_dirichlet(u.grid, tag)
    return _inverse_laplacian(u)


riesz = duality_map_F


def duality_map_inverse(z, tag=L2):
    """F⁻¹: U* → U, the duality mapping of U*."""
    if tag.kind == KIND_L2 or (tag.kind == KIND_LP and tag.p == 2.0):
        return z
    if tag.kind == KIND_LP:
        q = tag.conjugate
        size = dual_norm(z, tag)
        if size == 0.0:
            return Field.zeros(z.grid, z.components)
        return z.with_values(size ** (2.0 - q) * np.sign(z.values) * np.abs(z.values) ** (q - 1.0))
    if tag.kind == KIND_H1:
        return _resolvent_h1(z)
    if tag.kind == KIND_H1DUAL:
        return _apply_laplacian(z, 1.0)
    _require_dirichlet(z.grid, tag)
    return _apply_laplacian(z)


def resolvent_eF_NK(zeta, tag, eps, rho):
    """
    u = (εF + N_K)⁻¹ ζ on the ball K = {‖u‖_U ≤ ρ}.

    Positive homogeneity of F reduces the resolvent to a clamp along F⁻¹(ζ):
    u = F⁻¹(ζ) · min(1/ε, ρ/‖ζ‖_{U*}); ε = 0 leaves the pure normal-cone inverse.
    """
    if not rho > 0:
        raise ValueError('Control bound must be positive')
    if eps < 0:
        raise ValueError('Regularization must be nonnegative')
    size = dual_norm(zeta, tag)
    if size == 0.0:
        if eps == 0:
            raise IndeterminacyError(eps=eps, rho=rho)
        return Field.zeros(zeta.grid, zeta.components)
    scale = rho / size if eps == 0 else min(1.0 / eps, rho / size)
    return duality_map_inverse(zeta, tag) * scale


def _lebesgue_exponent(tag):
    return tag.p if tag.kind == KIND_LP else 2.0 if tag.kind == KIND_L2 else None


def row_norms(grid, components, rows, tag=L2, dual=False):
    """‖·‖_U (or ‖·‖_{U*}) of every row of a (steps, components·nodes) array."""
    rows = np.atleast_2d(rows)
    p = _lebesgue_exponent(tag)
    if p is None:
        size = dual_norm if dual else norm
        return np.array([size(Field(grid, row, components), tag) for row in rows])
    if dual:
        p = p / (p - 1.0)
    weights = np.tile(grid.weights, components)
    return np.sum(weights * np.abs(rows) ** p, axis=1) ** (1.0 / p)


def resolvent_rows(grid, components, rows, tag, eps, rho):
    """``resolvent_eF_NK`` applied to every row of ``rows``."""
    rows = np.atleast_2d(rows)
    if _lebesgue_exponent(tag) is None or eps == 0:
        return np.array([resolvent_eF_NK(Field(grid, row, components), tag, eps, rho).values
                         for row in rows])
    if not rho > 0:
        raise ValueError('Control bound must be positive')
    if eps < 0:
        raise ValueError('Regularization must be nonnegative')
    sizes = row_norms(grid, components, rows, tag, dual=True)
    if tag.p == 2.0:
        inverse = rows
    else:
        q = tag.conjugate
        factor = np.where(sizes > 0, sizes, 1.0) ** (2.0 - q)
        inverse = factor[:, None] * np.sign(rows) * np.abs(rows) ** (q - 1.0)
    scale = np.minimum(1.0 / eps, rho / np.where(sizes > 0, sizes, 1.0))
    return inverse * np.where(sizes > 0, scale, 0.0)[:, None]


def sign(zeta, tag=L2):
    """Sign(ζ) = F⁻¹(ζ)/‖ζ‖_{U*}, with the zero element selected at ζ = 0."""
    size = dual_norm(zeta, tag)
    if size == 0.0:
        return Field.zeros(zeta.grid, zeta.components)
    return duality_map_inverse(zeta, tag) / size


def random_smooth_field(grid, rng, components=1, modes=8, amplitude=1.0, shift=None):
    """Random combination of the lowest Laplacian eigenmodes with decaying weights."""
    if shift is None:
        shift = 0.0 if grid.boundary != NEUMANN else 1.0
    spectral = spectral_laplacian(grid, shift)
    count = min(modes, grid.size)
    decay = 1.0 / (1.0 + np.arange(count))
    rows = []
    for _ in range(components):
        coefficients = np.zeros(grid.size)
        coefficients[:count] = amplitude * decay * rng.standard_normal(count)
        rows.append(spectral.synthesize(coefficients))
    return Field(grid, np.concatenate(rows), components)
