from dataclasses import dataclass

import numpy as np
from rest_framework import serializers

from .exceptions import ToolkitError
from .hilbert_core import BOUNDARY_CHOICES, NEUMANN, Field, Grid, NormTag
from .operators import (
    CONTROL_MODES, FAMILY_CHOICES, IDENTITY, NONLOCAL, PRESET_CHOICES, PROJECTION_CHOICES,
    PROJECTION_FULL, ControlMap, FitzHughNagumo, Nonlinearity, PhaseField, PorousMedia,
    PotentialDrift, ReactionDiffusion2, preset,
)

COMMAND_CHOICES = ('simulate', 'slide', 'optimize', 'audit', 'oracle')
OPERATOR_KINDS = ('potential_drift', 'porous_media', 'reaction_diffusion', 'fitzhugh_nagumo',
                  'phase_field')
PROFILE_CHOICES = ('zero', 'constant', 'sine', 'cosine', 'gaussian', 'nodes')

# parameters each operator kind cannot do without
OPERATOR_REQUIRES = {
    'potential_drift': (),
    'porous_media': ('beta', 'a0'),
    'reaction_diffusion': ('d1', 'd2', 'f', 'g'),
    'fitzhugh_nagumo': ('alpha0', 'sigma', 'gamma'),
    'phase_field': ('k', 'latent', 'nu', 'gamma'),
}

# blocks and fields each command reads on top of grid, operator and control
COMMAND_REQUIRES = {
    'simulate': {'control': ('rho',), 'numerics': ('T',)},
    'slide': {'control': ('rho',), 'targets': ('target',), 'numerics': ('T_max', 'hit_tol')},
    'optimize': {'control': ('rho',), 'targets': ('target',),
                 'numerics': ('eps_schedule', 'T_bracket')},
    'audit': {},
    'oracle': {'control': ('rho',), 'targets': ('target',)},
}


@dataclass
class RunSetup:
    """Domain objects resolved from a validated run config."""
    command: str
    seed: int
    grid: Grid
    spec: object
    control_map: ControlMap
    rho: float = None
    y0: Field = None
    y_tar: Field = None
    control_input: Field = None
    numerics: dict = None


def _defaults(serializer_class):
    serializer = serializer_class(data={})
    serializer.is_valid(raise_exception=True)
    return serializer.validated_data


def _hypothesis(block, error):
    return serializers.ValidationError({block: [error.message] + [
        f'{key}: {value}' for key, value in error.detail.items()]})


class GridSerializer(serializers.Serializer):
    nodes = serializers.ListField(child=serializers.IntegerField(min_value=3),
                                  min_length=1, max_length=2)
    lengths = serializers.ListField(child=serializers.FloatField(), required=False)
    boundary = serializers.ChoiceField(choices=BOUNDARY_CHOICES, default=NEUMANN)
    robin_gamma = serializers.FloatField(min_value=0.0, default=0.0)

    def validate_lengths(self, value):
        if any(not length > 0 for length in value):
            raise serializers.ValidationError('Axis lengths must be positive')
        return value

    def validate(self, data):
        lengths = data.setdefault('lengths', [1.0] * len(data['nodes']))
        if len(lengths) != len(data['nodes']):
            raise serializers.ValidationError({'lengths': 'One length per axis'})
        if data['boundary'] == 'robin' and not data['robin_gamma'] > 0:
            raise serializers.ValidationError(
                {'robin_gamma': 'Robin boundaries need a positive coefficient'})
        return data

    def create(self, validated_data):
        return Grid(len(validated_data['nodes']), validated_data['lengths'],
                    validated_data['nodes'], validated_data['boundary'],
                    validated_data['robin_gamma'])


class NonlinearitySerializer(serializers.Serializer):
    family = serializers.ChoiceField(choices=FAMILY_CHOICES)
    a = serializers.FloatField(default=0.0)
    b = serializers.FloatField(default=0.0)
    c = serializers.FloatField(default=0.0)

    def create(self, validated_data):
        return Nonlinearity(**validated_data)


class OperatorSerializer(serializers.Serializer):
    preset = serializers.ChoiceField(choices=PRESET_CHOICES, required=False)
    kind = serializers.ChoiceField(choices=OPERATOR_KINDS, required=False)
    beta = NonlinearitySerializer(required=False)
    potential = NonlinearitySerializer(required=False)
    f = NonlinearitySerializer(required=False)
    g = NonlinearitySerializer(required=False)
    a1 = serializers.FloatField(default=0.0)
    drift = serializers.ListField(child=serializers.FloatField(), required=False)
    a0 = serializers.FloatField(required=False)
    kappa = serializers.FloatField(default=0.0)
    d1 = serializers.FloatField(required=False)
    d2 = serializers.FloatField(required=False)
    alpha0 = serializers.FloatField(required=False)
    sigma = serializers.FloatField(required=False)
    gamma = serializers.FloatField(required=False)
    k = serializers.FloatField(required=False)
    latent = serializers.FloatField(required=False)
    nu = serializers.FloatField(required=False)

    def validate(self, data):
        if ('preset' in data) == ('kind' in data):
            raise serializers.ValidationError('Give exactly one of "preset" or "kind"')
        if 'kind' in data:
            missing = {name: 'This field is required for this operator kind.'
                       for name in OPERATOR_REQUIRES[data['kind']] if name not in data}
            if missing:
                raise serializers.ValidationError(missing)
        return data

    def create(self, validated_data, grid=None):
        data = validated_data
        if 'preset' in data:
            return preset(data['preset'], grid)
        nonlinear = {name: NonlinearitySerializer().create(data[name])
                     for name in ('beta', 'potential', 'f', 'g') if name in data}
        kind = data['kind']
        if kind == 'potential_drift':
            return PotentialDrift(grid, nonlinear.get('beta'), data['a1'], data.get('drift'))
        if kind == 'porous_media':
            return PorousMedia(grid, nonlinear['beta'], data['a0'], data['kappa'])
        if kind == 'reaction_diffusion':
            return ReactionDiffusion2(grid, data['d1'], data['d2'], nonlinear['f'], nonlinear['g'])
        if kind == 'fitzhugh_nagumo':
            return FitzHughNagumo(grid, data['alpha0'], data['sigma'], data['gamma'],
                                  data.get('d1', 1.0))
        return PhaseField(grid, data['k'], data['latent'], data['nu'], data['gamma'],
                          nonlinear.get('potential'))


class ProfileSerializer(serializers.Serializer):
    """One state or control component given as a named analytic profile."""
    profile = serializers.ChoiceField(choices=PROFILE_CHOICES)
    value = serializers.FloatField(default=0.0)
    mode = serializers.IntegerField(min_value=0, default=1)
    amplitude = serializers.FloatField(default=1.0)
    center = serializers.FloatField(default=0.5)
    width = serializers.FloatField(default=0.1)
    nodes = serializers.ListField(child=serializers.FloatField(), required=False)

    def validate(self, data):
        if data['profile'] == 'nodes' and 'nodes' not in data:
            raise serializers.ValidationError({'nodes': 'Node values are required'})
        if data['profile'] == 'gaussian' and not data['width'] > 0:
            raise serializers.ValidationError({'width': 'Width must be positive'})
        return data

    @staticmethod
    def sample(data, grid):
        """Nodal values of the profile; trigonometric modes are products over the axes."""
        profile = data['profile']
        if profile == 'zero':
            return np.zeros(grid.size)
        if profile == 'constant':
            return np.full(grid.size, data['value'])
        if profile == 'nodes':
            values = np.asarray(data['nodes'], dtype=float)
            if values.size != grid.size:
                raise serializers.ValidationError(
                    {'nodes': f'Expected {grid.size} node values, received {values.size}'})
            return values
        values = np.full(grid.size, data['amplitude'])
        for x, length in zip(grid.coordinates, grid.lengths):
            if profile == 'sine':
                values = values * np.sin(data['mode'] * np.pi * x / length)
            elif profile == 'cosine':
                values = values * np.cos(data['mode'] * np.pi * x / length)
            else:
                values = values * np.exp(-(x - data['center'] * length) ** 2
                                         / (2.0 * data['width'] ** 2))
        return values


class ControlSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=CONTROL_MODES, default=IDENTITY)
    norm = serializers.CharField(default='L2')
    projection = serializers.ChoiceField(choices=PROJECTION_CHOICES, default=PROJECTION_FULL)
    rho = serializers.FloatField(required=False)
    control_nodes = serializers.IntegerField(min_value=3, required=False)
    kernel = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()),
                                   required=False)
    kernel_width = serializers.FloatField(default=0.1)
    input = serializers.ListField(child=ProfileSerializer(), required=False)

    def validate_norm(self, value):
        try:
            NormTag.parse(value)
        except ToolkitError as error:
            raise serializers.ValidationError(error.message)
        return value

    def validate_rho(self, value):
        if not value > 0:
            raise serializers.ValidationError('Control bound must be positive')
        return value

    def create(self, validated_data, spec=None):
        data = validated_data
        options = {'mode': data['mode'], 'norm_tag': NormTag.parse(data['norm']),
                   'projection': data['projection']}
        if data['mode'] == NONLOCAL:
            grid = spec.grid
            control_grid = grid
            if 'control_nodes' in data:
                control_grid = Grid.interval(data['control_nodes'], grid.lengths[0], grid.boundary,
                                             grid.robin_gamma)
            if 'kernel' in data:
                kernel = np.asarray(data['kernel'], dtype=float)
            else:
                # Gaussian kernel between state nodes and control nodes
                x = grid.coordinates[0][:, None]
                s = control_grid.coordinates[0][None, :]
                kernel = np.exp(-(x - s) ** 2 / (2.0 * data['kernel_width'] ** 2))
            options.update(kernel=kernel, control_grid=control_grid)
        return ControlMap.for_spec(spec, **options)


class TargetsSerializer(serializers.Serializer):
    initial = serializers.ListField(child=ProfileSerializer(), min_length=1)
    target = serializers.ListField(child=ProfileSerializer(), min_length=1, required=False)


class NumericsSerializer(serializers.Serializer):
    dt = serializers.FloatField(default=1e-3)
    T = serializers.FloatField(required=False)
    T_max = serializers.FloatField(required=False)
    hit_tol = serializers.FloatField(required=False)
    rho_sweep = serializers.ListField(child=serializers.FloatField(), required=False)
    continuation = serializers.BooleanField(default=True)
    audit = serializers.BooleanField(default=False)
    eps_schedule = serializers.ListField(child=serializers.FloatField(), required=False)
    T_bracket = serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2,
                                      required=False)
    inner_tolerance = serializers.FloatField(default=1e-8)
    max_inner_iterations = serializers.IntegerField(min_value=1, default=500)
    theta0 = serializers.FloatField(default=0.5)
    t_tol = serializers.FloatField(default=1e-4)
    chain_reference = serializers.BooleanField(default=False)
    audit_samples = serializers.IntegerField(min_value=100, default=200)
    fractional_alpha = serializers.FloatField(default=0.5)
    yosida_nu = serializers.FloatField(default=0.1)
    switch_budget = serializers.IntegerField(min_value=0, max_value=3, default=1)
    horizon = serializers.FloatField(default=5.0)

    def validate(self, data):
        positive = ('dt', 'T', 'T_max', 'hit_tol', 'inner_tolerance', 't_tol', 'yosida_nu',
                    'horizon')
        errors = {name: 'Must be positive' for name in positive
                  if name in data and not data[name] > 0}
        if not 0 < data['theta0'] <= 1:
            errors['theta0'] = 'Damping must lie in (0, 1]'
        if not 0 < data['fractional_alpha'] < 1:
            errors['fractional_alpha'] = 'Fractional exponent must lie in (0, 1)'
        schedule = data.get('eps_schedule')
        if schedule is not None:
            if not schedule or any(eps <= 0 for eps in schedule):
                errors['eps_schedule'] = 'Penalty values must be positive'
            elif any(b >= a for a, b in zip(schedule, schedule[1:])):
                errors['eps_schedule'] = 'Penalty schedule must be strictly decreasing'
        bracket = data.get('T_bracket')
        if bracket is not None and not 0 < bracket[0] < bracket[1]:
            errors['T_bracket'] = 'Bracket must satisfy 0 < T_lo < T_hi'
        if any(rho <= 0 for rho in data.get('rho_sweep', [])):
            errors['rho_sweep'] = 'Control bounds must be positive'
        if errors:
            raise serializers.ValidationError(errors)
        return data


class RunConfigSerializer(serializers.Serializer):
    command = serializers.ChoiceField(choices=COMMAND_CHOICES)
    seed = serializers.IntegerField(min_value=0, default=0)
    output_dir = serializers.CharField(required=False)
    grid = GridSerializer()
    operator = OperatorSerializer()
    control = ControlSerializer(required=False)
    targets = TargetsSerializer(required=False)
    numerics = NumericsSerializer(required=False)

    def validate(self, data):
        data.setdefault('control', _defaults(ControlSerializer))
        data.setdefault('numerics', _defaults(NumericsSerializer))
        command = data['command']
        errors = {}
        for block, names in COMMAND_REQUIRES[command].items():
            if block not in data:
                errors[block] = [f'This block is required for {command}.']
                continue
            missing = {name: [f'This field is required for {command}.']
                       for name in names if name not in data[block]}
            if missing:
                errors[block] = missing
        if command != 'audit' and 'targets' not in data:
            errors['targets'] = [f'This block is required for {command}.']
        if errors:
            raise serializers.ValidationError(errors)
        return data

    def _field(self, profiles, spec, block, name):
        if len(profiles) != spec.components:
            raise serializers.ValidationError({block: {name: [
                f'Expected {spec.components} profiles, received {len(profiles)}']}})
        return Field(spec.grid, np.concatenate(
            [ProfileSerializer.sample(profile, spec.grid) for profile in profiles]),
            spec.components)

    def create(self, validated_data):
        data = validated_data
        try:
            grid = GridSerializer().create(data['grid'])
        except ToolkitError as error:
            raise _hypothesis('grid', error)
        try:
            spec = OperatorSerializer().create(data['operator'], grid)
        except ToolkitError as error:
            raise _hypothesis('operator', error)
        try:
            control_map = ControlSerializer().create(data['control'], spec)
        except ToolkitError as error:
            raise _hypothesis('control', error)
        setup = RunSetup(data['command'], data['seed'], grid, spec, control_map,
                         rho=data['control'].get('rho'), numerics=dict(data['numerics']))
        targets = data.get('targets')
        if targets:
            setup.y0 = self._field(targets['initial'], spec, 'targets', 'initial')
            if 'target' in targets:
                setup.y_tar = self._field(targets['target'], spec, 'targets', 'target')
        if 'input' in data['control']:
            profiles = data['control']['input']
            if len(profiles) != control_map.control_components:
                raise serializers.ValidationError({'control': {'input': [
                    f'Expected {control_map.control_components} profiles']}})
            setup.control_input = Field(control_map.control_grid, np.concatenate(
                [ProfileSerializer.sample(p, control_map.control_grid) for p in profiles]),
                control_map.control_components)
        return setup


class AuditReportSerializer(serializers.Serializer):
    kind = serializers.CharField()
    samples = serializers.IntegerField()
    seed = serializers.IntegerField()
    alpha1 = serializers.FloatField()
    alpha2 = serializers.FloatField()
    alpha3 = serializers.FloatField()
    alpha4 = serializers.FloatField()
    gamma1 = serializers.FloatField()
    gamma2 = serializers.FloatField()
    observability_constant = serializers.FloatField()
    fractional_c1 = serializers.FloatField()
    fractional_c2 = serializers.FloatField()
    c_star = serializers.FloatField()
    c3 = serializers.FloatField()
    b_coercivity = serializers.FloatField()
    drift_norm = serializers.FloatField()
    rho1 = serializers.FloatField()
    fractional_alpha = serializers.FloatField()
    yosida_nu = serializers.FloatField()
    degenerate = serializers.IntegerField()
    checks = serializers.DictField(child=serializers.BooleanField())
    passed = serializers.BooleanField()


class OptimalityReportSerializer(serializers.Serializer):
    eps = serializers.FloatField()
    T_eps_star = serializers.FloatField(source='T')
    J_eps = serializers.FloatField(source='objective')
    terminal_miss = serializers.FloatField(source='miss')
    stationarity_residual = serializers.FloatField(source='stationarity')
    transversality_residual = serializers.FloatField(source='transversality')
    bang_bang_residual = serializers.FloatField()
    bang_bang_skipped_steps = serializers.IntegerField(source='bang_bang_skipped')
    hamiltonian_residual = serializers.FloatField()
    saturation_fraction = serializers.FloatField(source='saturation')
    dJ_dT = serializers.FloatField()
    h_energy = serializers.FloatField()
    inner_iterations = serializers.IntegerField()
    outer_evaluations = serializers.IntegerField()
    converged = serializers.BooleanField()
    at_boundary = serializers.BooleanField()
    bracket = serializers.ListField(child=serializers.FloatField())


class SlidingRunSerializer(serializers.Serializer):
    rho = serializers.FloatField()
    hit_tol = serializers.FloatField()
    dt = serializers.FloatField()
    T_max = serializers.FloatField()
    T_hit = serializers.FloatField(allow_null=True)
    T_hit_refined = serializers.FloatField(allow_null=True)
    T_star = serializers.FloatField(allow_null=True)
    initial_deviation = serializers.FloatField()
    max_post_hit_deviation = serializers.FloatField(allow_null=True)
    steps = serializers.IntegerField()


class TrajectorySummarySerializer(serializers.Serializer):
    T = serializers.FloatField()
    steps = serializers.IntegerField()
    final_norm_H = serializers.FloatField()
    sup_norm_V = serializers.FloatField()
    integral_AH_squared = serializers.FloatField()
    max_newton_iterations = serializers.IntegerField()
    max_residual = serializers.FloatField()
    substeps = serializers.IntegerField()


class OracleResultSerializer(serializers.Serializer):
    feasible = serializers.BooleanField()
    t_star = serializers.FloatField(allow_null=True)
    method = serializers.CharField()
    detail = serializers.DictField()
