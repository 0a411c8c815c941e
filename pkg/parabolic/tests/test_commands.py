import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from parabolic.runner import write_json

SCALAR = {
    'grid': {'nodes': [3]},
    'operator': {'kind': 'potential_drift', 'beta': {'family': 'linear', 'a': 1.0}},
    'control': {'rho': 1.0},
    'targets': {'initial': [{'profile': 'zero'}],
                'target': [{'profile': 'constant', 'value': 0.5}]},
}


def config(command, base=SCALAR, **blocks):
    payload = {'command': command, **json.loads(json.dumps(base))}
    for name, block in blocks.items():
        payload[name] = {**payload.get(name, {}), **block}
    return payload


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def run_command(self, command, payload, out='out', **options):
        path = self.root / f'{out}.json'
        path.write_text(json.dumps(payload))
        out_dir = self.root / out
        call_command(command, config=str(path), out=str(out_dir), stdout=StringIO(), **options)
        return out_dir

    def read(self, out_dir, name='report.json'):
        return json.loads((out_dir / name).read_text())


class WriteJsonTests(CommandTestCase):
    def test_non_finite_numbers_become_null(self):
        path = self.root / 'values.json'
        write_json(path, {'c_star': float('inf'), 'nested': [np.float64('nan'), 1.5],
                          'pair': (-np.inf, 2)})
        self.assertEqual(json.loads(path.read_text()),
                         {'c_star': None, 'nested': [None, 1.5], 'pair': [None, 2]})
        self.assertNotIn('NaN', path.read_text())


class AuditCommandTests(CommandTestCase):
    def test_writes_manifest_and_report(self):
        payload = config('audit', base={'grid': {'nodes': [12]}, 'operator': {'preset': 'heat'}},
                         numerics={'audit_samples': 100})
        out_dir = self.run_command('audit', payload, seed=5)
        manifest = self.read(out_dir, 'manifest.json')
        self.assertEqual(manifest['command'], 'audit')
        self.assertEqual(manifest['seed'], 5)
        report = self.read(out_dir)['audit']
        self.assertEqual(report['seed'], 5)
        self.assertAlmostEqual(report['c_star'], 1.0, places=8)
        self.assertTrue(report['passed'])

    def test_sweep_runs_every_config(self):
        configs = self.root / 'configs'
        configs.mkdir()
        for nodes in (8, 10):
            payload = config('audit', base={'grid': {'nodes': [nodes]},
                                            'operator': {'preset': 'allen_cahn'}},
                             numerics={'audit_samples': 100})
            (configs / f'nodes_{nodes}.json').write_text(json.dumps(payload))
        out_root = self.root / 'sweep'
        call_command('audit', sweep=str(configs), out=str(out_root), stdout=StringIO())
        self.assertEqual(self.read(out_root, 'sweep.json'), {'nodes_10': 0, 'nodes_8': 0})
        self.assertTrue((out_root / 'nodes_8' / 'report.json').exists())


class OptimizeCommandTests(CommandTestCase):
    numerics = {'dt': 0.01, 'eps_schedule': [0.01], 'T_bracket': [0.4, 1.0],
                'max_inner_iterations': 15}

    def test_reports_the_penalized_time(self):
        out_dir = self.run_command('optimize', config('optimize', numerics=self.numerics))
        final = self.read(out_dir)['final']
        self.assertLess(final['T_eps_star'], np.log(2.0))
        self.assertGreater(final['T_eps_star'], np.log(2.0) - 0.1)
        self.assertTrue(final['converged'])
        residuals = pd.read_csv(out_dir / 'residuals.csv')
        self.assertIn('hamiltonian', residuals.columns)
        self.assertTrue((out_dir / 'control.csv').exists())

    def test_identical_runs_write_identical_reports(self):
        payload = config('optimize', numerics=self.numerics)
        first = self.run_command('optimize', payload, out='first')
        second = self.run_command('optimize', payload, out='second')
        self.assertEqual((first / 'report.json').read_bytes(),
                         (second / 'report.json').read_bytes())

    def test_missing_bound_is_a_config_error(self):
        payload = config('optimize', numerics=self.numerics)
        del payload['control']['rho']
        with self.assertRaises(CommandError) as caught:
            self.run_command('optimize', payload)
        self.assertEqual(caught.exception.returncode, 2)
        self.assertIn('rho', str(caught.exception))
        self.assertFalse((self.root / 'out' / 'manifest.json').exists())

    def test_unknown_norm_is_a_config_error(self):
        payload = config('optimize', numerics=self.numerics, control={'norm': 'Lp(x)'})
        with self.assertRaises(CommandError) as caught:
            self.run_command('optimize', payload)
        self.assertEqual(caught.exception.returncode, 2)
        self.assertIn('norm', str(caught.exception))

    def test_config_for_another_command(self):
        with self.assertRaises(CommandError) as caught:
            self.run_command('optimize', config('slide'))
        self.assertEqual(caught.exception.returncode, 2)

    def test_malformed_json(self):
        path = self.root / 'broken.json'
        path.write_text('{"command": "optimize",')
        with self.assertRaises(CommandError) as caught:
            call_command('optimize', config=str(path), stdout=StringIO())
        self.assertEqual(caught.exception.returncode, 2)


class SimulateCommandTests(CommandTestCase):
    def test_inadmissible_input_is_a_numerical_failure(self):
        payload = config('simulate', control={'input': [{'profile': 'constant', 'value': 2.0}]},
                         numerics={'T': 0.1, 'dt': 0.01})
        with self.assertRaises(CommandError) as caught:
            self.run_command('simulate', payload)
        self.assertEqual(caught.exception.returncode, 1)
        error = self.read(self.root / 'out', 'error.json')
        self.assertEqual(error['error'], 'AdmissibilityError')
        self.assertTrue((self.root / 'out' / 'manifest.json').exists())

    def test_writes_trajectory_artifacts(self):
        payload = config('simulate', control={'input': [{'profile': 'constant', 'value': 0.5}]},
                         numerics={'T': 0.1, 'dt': 0.01})
        out_dir = self.run_command('simulate', payload)
        summary = self.read(out_dir)['trajectory']
        self.assertEqual(summary['steps'], 10)
        trajectory = pd.read_csv(out_dir / 'trajectory.csv')
        self.assertEqual(len(trajectory), 11)
        self.assertAlmostEqual(trajectory['y0_0'].iloc[-1], 0.5 * (1.0 - 1.01 ** -10), places=12)


class SlideCommandTests(CommandTestCase):
    def test_heat_sliding_run(self):
        payload = {
            'command': 'slide',
            'grid': {'nodes': [15], 'boundary': 'dirichlet'},
            'operator': {'preset': 'heat'},
            'control': {'rho': 10.0},
            'targets': {'initial': [{'profile': 'sine'}], 'target': [{'profile': 'zero'}]},
            'numerics': {'dt': 1e-3, 'T_max': 0.1, 'hit_tol': 1e-2, 'rho_sweep': [10.0, 20.0]},
        }
        out_dir = self.run_command('slide', payload)
        report = self.read(out_dir)
        self.assertLessEqual(report['run']['T_hit'], 0.08)
        self.assertEqual(len(report['sweep']), 2)
        self.assertLessEqual(report['sweep'][1]['T_hit'], report['sweep'][0]['T_hit'])
        frame = pd.read_csv(out_dir / 'control.csv')
        self.assertEqual(list(frame.columns), ['t', 'deviation', 'norm_U', 'hit'])


class OracleCommandTests(CommandTestCase):
    def test_scalar_reduction(self):
        payload = config('oracle', numerics={'dt': 1e-3, 'switch_budget': 0, 'horizon': 1.5})
        report = self.read(self.run_command('oracle', payload))
        self.assertAlmostEqual(report['analytic']['t_star'], np.log(2.0), places=10)
        self.assertLessEqual(abs(report['brute_force']['t_star'] - np.log(2.0)), 2e-3)
        self.assertEqual(report['reduction']['target_mode'], 'full')

    def test_non_constant_states_are_rejected(self):
        payload = config('oracle', targets={'initial': [{'profile': 'cosine'}]})
        with self.assertRaises(CommandError) as caught:
            self.run_command('oracle', payload)
        self.assertEqual(caught.exception.returncode, 1)
