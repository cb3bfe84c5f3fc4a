from io import StringIO
import json
from pathlib import Path
import tempfile

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings

from dtn.io import load_operator
from geometry.domain import GeometryParams
from .config import load_config, parse_config
from .exceptions import ConductivityError, ConfigError, GeometryError, OperatorError
from .models import ExperimentRun
from .services import MANIFEST_NAME, sha256_file


def write_config(directory, data):
    path = Path(directory) / 'config.json'
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(path)


def run_command(name, **options):
    stdout, stderr = StringIO(), StringIO()
    call_command(name, stdout=stdout, stderr=stderr, **options)
    return stdout.getvalue(), stderr.getvalue()


class ConfigTests(SimpleTestCase):

    def test_missing_sections_take_defaults(self):
        config = parse_config({})
        self.assertEqual(config.geometry, GeometryParams())
        self.assertEqual(config.solver.tol, 1e-12)
        self.assertEqual(config.sweep['K'], 6)
        self.assertEqual(config.analysis['reconstruction_budget'], 0.05)
        self.assertEqual(config.analysis['family_size'], 50)
        self.assertIsNone(config.skernel['h_fd'])

    def test_unknown_keys_are_errors(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config({'colour': 'red'})
        self.assertEqual(ctx.exception.key, 'colour')
        with self.assertRaises(ConfigError) as ctx:
            parse_config({'solver': {'tolerance': 1e-9}})
        self.assertEqual(ctx.exception.key, 'solver.tolerance')
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_invalid_values_name_their_key(self):
        cases = [
            ({'sweep': {'K': 3}}, 'sweep.K'),
            ({'sweep': {'t0': 0}}, 'sweep.t0'),
            ({'dtn': {'max_dofs': 0}}, 'dtn.max_dofs'),
            ({'skernel': {'h_fd': -0.1}}, 'skernel.h_fd'),
            ({'geometry': {'family': 'torus'}}, 'geometry.family'),
            ({'conductivity': {'lam': 1.5}}, 'conductivity.lam'),
        ]
        for data, key in cases:
            with self.subTest(key=key), self.assertRaises(ConfigError) as ctx:
                parse_config(data)
            self.assertEqual(ctx.exception.key, key)

    def test_top_level_must_be_an_object(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config([1, 2])
        self.assertEqual(ctx.exception.key, 'config')

    def test_digest(self):
        config = parse_config({})
        self.assertEqual(config.digest, parse_config({'output': {'run_id': 'other'}}).digest)
        self.assertNotEqual(config.digest, config.with_overrides(seed=1).digest)
        self.assertEqual(config.with_overrides(out_dir='/tmp/x').output['dir'], '/tmp/x')

    def test_bundled_configs_validate(self):
        for name in ('default', 'smoke', 'energy3d'):
            with self.subTest(name=name):
                config = load_config(name)
                self.assertEqual(config.output['run_id'], name)
        self.assertEqual(load_config('energy3d').geometry.dimension, 3)

    def test_empty_and_malformed_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError) as ctx:
                load_config(write_config(tmp, '  \n'))
            self.assertTrue(ctx.exception.details.get('empty'))
            with self.assertRaises(ConfigError) as ctx:
                load_config(write_config(tmp, '{"seed": '))
            self.assertIn('line 1', str(ctx.exception))
        with self.assertRaises(ConfigError):
            load_config('no-such-config')


class CommandTests(SimpleTestCase):

    def test_missing_config_prints_usage(self):
        stderr = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('run', stdout=StringIO(), stderr=stderr)
        self.assertEqual(ctx.exception.returncode, ConfigError.exit_code)
        self.assertIn('usage:', stderr.getvalue())

    def test_empty_config_prints_usage(self):
        stderr = StringIO()
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CommandError) as ctx:
                call_command('run', config=write_config(tmp, ''), out_dir=tmp, no_record=True,
                             stdout=StringIO(), stderr=stderr)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('usage:', stderr.getvalue())

    def test_geometry_validation_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, {'geometry': {'rho0': 0.5, 'd0': 0.6}})
            with self.assertRaises(CommandError) as ctx:
                run_command('mesh', config=path, out_dir=tmp, no_record=True)
            self.assertFalse((Path(tmp) / 'mesh.txt').exists())
        self.assertEqual(ctx.exception.returncode, GeometryError.exit_code)
        self.assertIn('geometry.d0', str(ctx.exception))
        self.assertIn('0 < d0 <= rho0', str(ctx.exception))

    def test_config_errors_map_to_their_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, {'sweep': {'K': 2}})
            with self.assertRaises(CommandError) as ctx:
                run_command('experiment', config=path, out_dir=tmp, no_record=True)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('sweep.K', str(ctx.exception))

    def test_mesh_command_writes_a_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            stdout, _ = run_command('mesh', config='smoke', out_dir=tmp, no_record=True)
            manifest = json.loads((Path(tmp) / MANIFEST_NAME).read_text())
            names = {entry['name'] for entry in manifest['files']}
            self.assertEqual(names, {'mesh.txt', 'summary.json'})
            for entry in manifest['files']:
                self.assertEqual(entry['sha256'], sha256_file(Path(tmp) / entry['name']))
            self.assertEqual(manifest['command'], 'mesh')
        self.assertIn('manifest sha256', stdout)

    def test_mesh_out_copy(self):
        with tempfile.TemporaryDirectory() as tmp:
            copy = Path(tmp) / 'copy.txt'
            stdout, _ = run_command('mesh', config='smoke', out_dir=str(Path(tmp) / 'run'), mesh_out=str(copy),
                                    no_record=True)
            self.assertEqual(copy.read_bytes(), (Path(tmp) / 'run' / 'mesh.txt').read_bytes())
        self.assertIn('mesh-out written to', stdout)


class PipelineTests(SimpleTestCase):
    """The smoke config through every stage, twice"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dirs = [Path(cls.tmp.name) / name for name in ('first', 'second')]
        for directory in cls.dirs:
            run_command('run', config='smoke', out_dir=str(directory), no_record=True, threads=2)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_full_artifact_set(self):
        written = {path.name for path in self.dirs[0].iterdir()}
        expected = {'mesh.txt', 'gamma0.txt', 'gamma1.txt', 'fields.json', 'dtn_local_gamma0.txt',
                    'dtn_local_gamma1.txt', 'dtn_dDtilde_gamma0.txt', 'dtn_dDtilde_gamma1.txt', 'skernel.csv',
                    'energy.csv', 'reconstruction.csv', 'experiment.csv', 'summary.json', MANIFEST_NAME}
        self.assertEqual(written, expected)
        manifest = json.loads((self.dirs[0] / MANIFEST_NAME).read_text())
        self.assertEqual({entry['name'] for entry in manifest['files']}, written - {MANIFEST_NAME})

    def test_runs_are_byte_identical(self):
        first, second = self.dirs
        self.assertEqual(sha256_file(first / MANIFEST_NAME), sha256_file(second / MANIFEST_NAME))
        for name in ('experiment.csv', 'skernel.csv', 'reconstruction.csv'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_skernel_sample_copy_and_comparison(self):
        with tempfile.TemporaryDirectory() as tmp:
            copy = Path(tmp) / 'sample.csv'
            stdout, _ = run_command('skernel', config='smoke', out_dir=str(Path(tmp) / 'run'), out=str(copy),
                                    against=str(self.dirs[0] / 'skernel.csv'), no_record=True)
            self.assertEqual(copy.read_bytes(), (self.dirs[0] / 'skernel.csv').read_bytes())
        self.assertIn('largest relative difference', stdout)
        self.assertIn('0.000000e+00', stdout)

    def test_summary_diagnostics(self):
        summary = json.loads((self.dirs[0] / 'summary.json').read_text())
        self.assertLess(summary['kernel_pairing_relative_defect'], 1e-8)
        self.assertTrue(summary['kernel_smallness_holds'])
        self.assertLessEqual(summary['kernel_residual_z'], 1e-10)
        self.assertTrue(0 < summary['beta'] <= 1)
        self.assertIsNotNone(summary['eta'])
        self.assertTrue(0 < summary['eta'] < 1)
        self.assertGreater(summary['epsilon'], 0)


@override_settings(LAB_RECORD_RUNS=True)
class LedgerTests(TestCase):

    def test_completed_run_is_recorded(self):
        with tempfile.TemporaryDirectory() as tmp:
            run_command('mesh', config='smoke', out_dir=tmp, seed=7)
            digest = sha256_file(Path(tmp) / MANIFEST_NAME)
        run = ExperimentRun.objects.get()
        self.assertTrue(run.is_completed())
        self.assertEqual(run.seed, 7)
        self.assertEqual(run.manifest_digest, digest)
        self.assertEqual(run.exit_code, 0)
        self.assertEqual(run.config_digest, load_config('smoke').with_overrides(seed=7).digest)
        self.assertIn('mesh_vertices', run.summary)

    def test_failed_run_is_recorded(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, {'geometry': {'d0': 0.6}})
            with self.assertRaises(CommandError):
                run_command('mesh', config=path, out_dir=tmp)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.exit_code, GeometryError.exit_code)
        self.assertTrue(run.error.startswith('geometry.d0'))

    def test_mark_failed_with_a_plain_exception(self):
        run = ExperimentRun.objects.create(run_id='x', command='run', seed=1, config_digest='0' * 64, out_dir='/tmp')
        run.mark_failed(RuntimeError('boom'))
        run.refresh_from_db()
        self.assertEqual((run.status, run.exit_code, run.error), ('failed', 1, 'boom'))
        self.assertEqual(str(run), 'run x (failed)')


class DumpInterfaceTests(SimpleTestCase):
    """Mesh and field dumps written by one command and read back by the next"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        root = Path(cls.tmp.name)
        cls.mesh_path, cls.gamma_path = root / 'mesh.txt', root / 'gamma1.txt'
        run_command('mesh', config='smoke', out_dir=str(root / 'mesh'), mesh_out=str(cls.mesh_path), no_record=True)
        cls.stdout, _ = run_command('conductivity', config='smoke', out_dir=str(root / 'fields'),
                                    mesh=str(cls.mesh_path), gamma_out=str(cls.gamma_path), no_record=True)
        cls.root = root

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_conductivity_command(self):
        fields = self.root / 'fields'
        self.assertEqual(self.gamma_path.read_bytes(), (fields / 'gamma1.txt').read_bytes())
        self.assertIn('gamma-out written to', self.stdout)
        manifest = json.loads((fields / MANIFEST_NAME).read_text())
        self.assertEqual(manifest['inputs']['mesh']['sha256'], sha256_file(self.mesh_path))
        self.assertEqual({entry['name'] for entry in manifest['files']},
                         {'mesh.txt', 'gamma0.txt', 'gamma1.txt', 'fields.json', 'summary.json'})

    def test_dtn_on_a_loaded_field(self):
        out_dir, operator = self.root / 'dtn', self.root / 'local.txt'
        stdout, _ = run_command('dtn', config='smoke', out_dir=str(out_dir), mesh=str(self.mesh_path),
                                gamma=str(self.gamma_path), tag='Sigma', out=str(operator), against=str(operator),
                                no_record=True)
        self.assertEqual(operator.read_bytes(), (out_dir / 'dtn_local_gamma1.txt').read_bytes())
        self.assertEqual(load_operator(operator).tag, 'Sigma')
        self.assertFalse((out_dir / 'dtn_Sigma_gamma1.txt').exists())
        self.assertIn('norm of the difference', stdout)
        self.assertIn('0.000000e+00', stdout)
        manifest = json.loads((out_dir / MANIFEST_NAME).read_text())
        self.assertEqual(manifest['inputs']['gamma']['sha256'], sha256_file(self.gamma_path))

    def test_operators_on_other_dofs_do_not_compare(self):
        local = self.root / 'sigma.txt'
        run_command('dtn', config='smoke', out_dir=str(self.root / 'sigma'), mesh=str(self.mesh_path),
                    tag='Sigma', out=str(local), no_record=True)
        with self.assertRaises(CommandError) as ctx:
            run_command('dtn', config='smoke', out_dir=str(self.root / 'full'), mesh=str(self.mesh_path),
                        tag='dDtilde', against=str(local), no_record=True)
        self.assertEqual(ctx.exception.returncode, OperatorError.exit_code)

    def test_field_dump_for_another_mesh(self):
        foreign = self.root / 'foreign.txt'
        foreign.write_text(self.gamma_path.read_text().replace('vertices ', 'vertices 1', 1))
        with self.assertRaises(CommandError) as ctx:
            run_command('dtn', config='smoke', out_dir=str(self.root / 'bad'), gamma=str(foreign), no_record=True)
        self.assertEqual(ctx.exception.returncode, ConductivityError.exit_code)
        self.assertIn('gamma:', str(ctx.exception))
