"""Shared plumbing for the pipeline commands."""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.config import load_config
from core.exceptions import ConfigError, LabError
from core.services import LabRunService

logger = logging.getLogger(__name__)


class LabCommand(BaseCommand):
    """Runs the pipeline stages registered for this command name"""
    command = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='path to a JSON run config, or the name of a bundled one')
        parser.add_argument('--out-dir', help='artifact directory (default: output.dir, then LAB_OUTPUT_DIR/<run_id>)')
        parser.add_argument('--seed', type=int, help='override the config seed')
        parser.add_argument('--threads', type=int, default=1, help='worker threads for sweep amplitudes')
        parser.add_argument('--no-record', action='store_true', help='skip the run ledger entry')
        parser.add_argument('--mesh', help='reuse a mesh dump instead of meshing the config geometry')

    def configure(self, config, options):
        """Command-specific overrides of the loaded config"""
        return config

    def after(self, service, options):
        """Extra output once the stages have run"""

    def write_copy(self, dump, item, path, error, key):
        """Write one extra dump outside the run directory"""
        try:
            written = dump(item, path)
        except OSError as exc:
            raise error(f'cannot write {path}: {exc}', key=key) from exc
        self.stdout.write(f'{key.replace("_", "-")} written to {written}')
        return written

    def usage(self):
        return self.create_parser('manage.py', self.command).format_usage()

    def handle(self, *args, **options):
        if not options['config']:
            self.stderr.write(self.usage())
            raise CommandError('no config given', returncode=ConfigError.exit_code)
        try:
            config = self.configure(load_config(options['config']).with_overrides(seed=options['seed']), options)
            service = LabRunService(config, out_dir=options['out_dir'], threads=options['threads'],
                                    mesh_path=options['mesh'], gamma_path=options.get('gamma'))
            record = settings.LAB_RECORD_RUNS and not options['no_record']
            result = service.execute(self.command, record=record)
            self.after(service, options)
        except LabError as exc:
            if exc.details.get('empty'):
                self.stderr.write(self.usage())
            logger.debug('%s failed', self.command, exc_info=True)
            raise CommandError(exc.diagnostic(), returncode=exc.exit_code) from exc
        self.stdout.write(f'{self.command}: {len(result.files)} artifacts in {result.out_dir}')
        self.stdout.write(f'manifest sha256 {result.manifest_digest}')
        return None
