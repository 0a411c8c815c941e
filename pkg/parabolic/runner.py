"""
Batch orchestration shared by the management commands: validate a run
config, write the manifest, dispatch to the numerical modules and persist
report.json plus the CSV artifacts.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from .audit import audit_hypotheses
from .exceptions import HypothesisError, ToolkitError
from .forward_solver import Control, solve_forward
from .oracle import OdeReduction, analytic_min_time_scalar, brute_force_min_time
from .operators import LINEAR, ZERO, PotentialDrift
from .serializers import (
    AuditReportSerializer, OptimalityReportSerializer, OracleResultSerializer,
    RunConfigSerializer, SlidingRunSerializer, TrajectorySummarySerializer,
)
from .sliding_control import run_sliding, sweep_rho
from .timeopt import PenalizedProblem, eps_continuation

logger = logging.getLogger(__name__)

CONSTANT_TOL = 1e-12


@dataclass
class RunOutcome:
    status: int
    out_dir: Path
    report: dict = None
    error: dict = None


def _json_ready(value):
    """NaN and infinities become null."""
    if isinstance(value, dict):
        return {key: _json_ready(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(item) for item in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_json(path, payload):
    text = json.dumps(_json_ready(payload), sort_keys=True, indent=2, allow_nan=False, default=str)
    Path(path).write_text(text + '\n')


def write_csv(path, frame):
    frame.to_csv(path, float_format='%.17g', index=False)


def _solver_frame(trajectory):
    return pd.DataFrame({
        'step': np.arange(trajectory.steps),
        't': trajectory.times[1:],
        'newton_iterations': trajectory.iterations,
        'newton_residual': trajectory.residuals,
        'substeps': [len(parts) for parts in trajectory.substeps],
    })


def run_simulate(setup, out_dir):
    numerics = setup.numerics
    T = numerics['T']
    steps = max(1, int(round(T / numerics['dt'])))
    value = setup.control_input or setup.control_map.zero_control()
    control = Control.constant(setup.control_map, T, steps, setup.rho, value)
    trajectory = solve_forward(setup.spec, setup.control_map, setup.y0, control)
    energy = trajectory.energy_estimate()
    summary = {
        'T': T,
        'steps': steps,
        'final_norm_H': float(trajectory.norm_H[-1]),
        'sup_norm_V': energy['sup_norm_V'],
        'integral_AH_squared': energy['integral_AH_squared'],
        'max_newton_iterations': int(trajectory.iterations.max()),
        'max_residual': float(trajectory.residuals.max()),
        'substeps': sum(len(parts) for parts in trajectory.substeps),
    }
    write_csv(out_dir / 'trajectory.csv', trajectory.as_frame(nodes=True))
    write_csv(out_dir / 'control.csv', control.as_frame(nodes=True))
    write_csv(out_dir / 'residuals.csv', _solver_frame(trajectory))
    return {'trajectory': TrajectorySummarySerializer(summary).data}


def _audit(setup, target=None):
    numerics = setup.numerics
    return audit_hypotheses(setup.spec, setup.control_map, numerics['audit_samples'], setup.seed,
                            target, numerics['fractional_alpha'], numerics['yosida_nu'])


def run_slide(setup, out_dir):
    numerics = setup.numerics
    audit = _audit(setup, setup.y_tar) if numerics['audit'] else None
    run = run_sliding(setup.spec, setup.control_map, setup.y0, setup.y_tar, setup.rho,
                      numerics['T_max'], numerics['dt'], numerics['hit_tol'], audit,
                      numerics['continuation'])
    report = {'run': SlidingRunSerializer(run.summary()).data}
    if audit is not None:
        report['audit'] = AuditReportSerializer(audit).data
    if numerics.get('rho_sweep'):
        runs = sweep_rho(setup.spec, setup.control_map, setup.y0, setup.y_tar,
                         numerics['rho_sweep'], numerics['T_max'], numerics['dt'],
                         numerics['hit_tol'], audit, settings.PARABOLIC['SWEEP_WORKERS'])
        report['sweep'] = [SlidingRunSerializer(item.summary()).data for item in runs]
    write_csv(out_dir / 'trajectory.csv', run.trajectory.as_frame(nodes=True))
    write_csv(out_dir / 'control.csv', run.as_frame())
    write_csv(out_dir / 'residuals.csv', _solver_frame(run.trajectory))
    return report


def run_optimize(setup, out_dir):
    numerics = setup.numerics
    audit = _audit(setup, setup.y_tar) if numerics['audit'] else None
    problem = PenalizedProblem(
        setup.spec, setup.control_map, setup.y0, setup.y_tar, setup.rho,
        eps=numerics['eps_schedule'][0], dt=numerics['dt'],
        max_iterations=numerics['max_inner_iterations'], tolerance=numerics['inner_tolerance'],
        theta0=numerics['theta0'], t_tol=numerics['t_tol'], audit=audit,
    )
    reports = eps_continuation(problem, numerics['eps_schedule'], numerics['T_bracket'],
                               numerics['chain_reference'])
    final = reports[-1]
    write_csv(out_dir / 'trajectory.csv', final.inner.trajectory.as_frame(nodes=True))
    write_csv(out_dir / 'control.csv', final.inner.control.as_frame(nodes=True))
    write_csv(out_dir / 'residuals.csv', final.series)
    report = {
        'stages': OptimalityReportSerializer(reports, many=True).data,
        'final': OptimalityReportSerializer(final).data,
    }
    if audit is not None:
        report['audit'] = AuditReportSerializer(audit).data
    return report


def run_audit(setup, out_dir):
    return {'audit': AuditReportSerializer(_audit(setup, setup.y_tar)).data}


def _levels(field):
    """Per-component constant level of a spatially constant field."""
    rows = field.matrix
    if np.any(np.ptp(rows, axis=1) > CONSTANT_TOL):
        raise HypothesisError('Oracle reductions need spatially constant states')
    return rows[:, 0]


def run_oracle(setup, out_dir):
    numerics = setup.numerics
    reduction = OdeReduction.from_spec(setup.spec, setup.control_map, _levels(setup.y0),
                                       _levels(setup.y_tar), setup.rho)
    result = brute_force_min_time(reduction, numerics['dt'], numerics['switch_budget'],
                                  numerics['horizon'])
    report = {
        'reduction': {
            'matrix': reduction.matrix.tolist(),
            'rho': reduction.rho,
            'x0': reduction.x0.tolist(),
            'target': reduction.target.tolist(),
            'target_mode': reduction.target_mode,
        },
        'brute_force': OracleResultSerializer(result).data,
    }
    spec = setup.spec
    if isinstance(spec, PotentialDrift) and spec.beta.family in (ZERO, LINEAR):
        a = spec.a1 + (spec.beta.a if spec.beta.family == LINEAR else 0.0)
        analytic = analytic_min_time_scalar(a, reduction.x0[0], reduction.target[0],
                                            reduction.rho)
        report['analytic'] = OracleResultSerializer(analytic).data
    return report


RUNNERS = {
    'simulate': run_simulate,
    'slide': run_slide,
    'optimize': run_optimize,
    'audit': run_audit,
    'oracle': run_oracle,
}


def execute(payload, out=None, seed=None):
    """
    Validate ``payload`` and run it. Validation problems raise
    ``serializers.ValidationError``; numerical failures come back as status 1
    with the failing module's payload written to error.json.
    """
    serializer = RunConfigSerializer(data=payload)
    serializer.is_valid(raise_exception=True)
    config = serializer.validated_data
    if seed is not None:
        config['seed'] = seed
    command = config['command']
    out_dir = Path(out or config.get('output_dir')
                   or Path(settings.PARABOLIC['OUTPUT_ROOT']) / command)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / 'manifest.json', {
        'command': command,
        'config': config,
        'seed': config['seed'],
        'version': settings.PARABOLIC['VERSION'],
    })
    setup = serializer.save()
    logger.info('Running %s into %s (seed %d)', command, out_dir, setup.seed)
    try:
        report = RUNNERS[command](setup, out_dir)
    except ToolkitError as error:
        payload = error.as_payload()
        write_json(out_dir / 'error.json', payload)
        logger.error('%s failed: %s', command, error.message)
        return RunOutcome(1, out_dir, error=payload)
    write_json(out_dir / 'report.json', report)
    return RunOutcome(0, out_dir, report=report)


def load_config(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CommandError(f'Config file {path} does not exist', returncode=2)
    except json.JSONDecodeError as error:
        raise CommandError(f'{path}: line {error.lineno} column {error.colno}: {error.msg}',
                           returncode=2)


def _sweep_one(path, command, out_root, seed):
    out_dir = Path(out_root) / path.stem
    try:
        payload = load_config(path)
        payload.setdefault('command', command)
        if payload['command'] != command:
            raise CommandError(f'Config is for {payload["command"]!r}', returncode=2)
        return execute(payload, out_dir, seed).status
    except (serializers.ValidationError, CommandError) as error:
        out_dir.mkdir(parents=True, exist_ok=True)
        detail = error.detail if isinstance(error, serializers.ValidationError) else str(error)
        write_json(out_dir / 'error.json', {'error': type(error).__name__, 'detail': detail})
        return 2


def run_sweep(directory, command, out_root, seed=None):
    """Every *.json config in ``directory`` into its own output folder, on worker threads."""
    configs = sorted(Path(directory).glob('*.json'))
    if not configs:
        raise CommandError(f'No configs found in {directory}', returncode=2)
    out_root = Path(out_root or Path(settings.PARABOLIC['OUTPUT_ROOT']) / f'{command}_sweep')
    with ThreadPoolExecutor(max_workers=settings.PARABOLIC['SWEEP_WORKERS']) as pool:
        futures = {path.stem: pool.submit(_sweep_one, path, command, out_root, seed)
                   for path in configs}
        statuses = {name: future.result() for name, future in futures.items()}
    out_root.mkdir(parents=True, exist_ok=True)
    write_json(out_root / 'sweep.json', statuses)
    return statuses


class RunCommand(BaseCommand):
    """Common flags and exit codes of the toolkit commands."""
    command = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Run config (JSON)')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--seed', type=int, help='Overrides the config seed')
        parser.add_argument('--sweep', help='Directory of configs run in parallel')

    def handle(self, *args, **options):
        if options['sweep']:
            statuses = run_sweep(options['sweep'], self.command, options['out'], options['seed'])
            failed = {name: status for name, status in statuses.items() if status}
            if failed:
                raise CommandError(f'Failed configs: {json.dumps(failed, sort_keys=True)}',
                                   returncode=max(failed.values()))
            self.stdout.write(self.style.SUCCESS(f'{len(statuses)} {self.command} runs finished'))
            return
        if not options['config']:
            raise CommandError('Either --config or --sweep is required', returncode=2)
        payload = load_config(options['config'])
        payload.setdefault('command', self.command)
        if payload['command'] != self.command:
            raise CommandError(f'Config is for {payload["command"]!r}, not {self.command!r}',
                               returncode=2)
        try:
            outcome = execute(payload, options['out'], options['seed'])
        except serializers.ValidationError as error:
            raise CommandError(json.dumps(error.detail, indent=2, sort_keys=True),
                               returncode=2)
        if outcome.status:
            raise CommandError(json.dumps(outcome.error, sort_keys=True), returncode=1)
        self.stdout.write(self.style.SUCCESS(f'{self.command} finished: {outcome.out_dir}'))
