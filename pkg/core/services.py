"""
Pipeline orchestration for the management commands.

LabRunService runs a subset of the stages for one validated RunConfig.
Every artifact is written from the calling thread, and the manifest
lists each one with its sha256. Nothing time-dependent goes into an
artifact, so equal (config, seed) pairs give byte-identical output.
"""
import csv
from dataclasses import dataclass, field
from functools import cached_property
import hashlib
import json
import logging
from pathlib import Path
import time

import numpy as np
from django.conf import settings
from django.db import DatabaseError

from analysis.propagation import PropagationRegions, cascade, fit_propagation
from analysis.reconstruction import GapReconstructor, fourier_traces
from analysis.reports import write_experiment_csv
from analysis.stability import StabilitySweep
from conductivity.fields import bump_clipping, make_reference, perturb_in_D, validate
from conductivity.io import dump_field, load_field
from dtn.io import dump_operator
from dtn.operators import assemble_full_dtn, assemble_local_dtn
from geometry.domain import build_domain
from geometry.io import dump_mesh, load_mesh
from pde.greens import GreenSolver, energy_decay
from skernel.samples import SKernelSample, dump_sample
from skernel.services import SKernelService, elliptic_residual, shell_maximum
from .exceptions import ConductivityError, GeometryError, LabError
from .models import ExperimentRun

logger = logging.getLogger(__name__)

STAGES = ('mesh', 'fields', 'operators', 'kernel', 'experiment')

COMMAND_STAGES = {
    'mesh': ('mesh',),
    'dtn': ('mesh', 'fields', 'operators'),
    'conductivity': ('mesh', 'fields'),
    'skernel': ('mesh', 'fields', 'kernel'),
    'experiment': ('mesh', 'fields', 'experiment'),
    'run': STAGES,
}

MANIFEST_NAME = 'manifest.json'


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _plain(value):
    """numpy scalars and arrays to JSON-ready values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass
class RunResult:
    command: str
    out_dir: Path
    files: dict
    manifest_digest: str
    diagnostics: dict = field(default_factory=dict)


class LabRunService:
    """Runs pipeline stages for one config and writes their artifacts"""

    def __init__(self, config, out_dir=None, threads=1, mesh_path=None, gamma_path=None):
        self.config = config
        self.mesh_path = mesh_path
        self.gamma_path = gamma_path
        self.inputs = {}
        self.sample = None
        directory = out_dir or config.output['dir'] or Path(settings.LAB_OUTPUT_DIR) / config.output['run_id']
        self.out_dir = Path(directory)
        self.threads = max(1, int(threads))
        self.options = config.solver
        self.written = {}
        self.diagnostics = {}

    def _rng(self, stage):
        return np.random.default_rng([self.config.seed, STAGES.index(stage)])

    def _path(self, name):
        return self.out_dir / name

    def _record(self, path):
        self.written[path.name] = path
        return path

    def _input(self, name, path):
        self.inputs[name] = {'name': Path(path).name, 'sha256': sha256_file(path)}

    @cached_property
    def domain(self):
        if self.mesh_path is None:
            return build_domain(self.config.geometry)
        try:
            domain = load_mesh(self.mesh_path)
        except OSError as exc:
            raise GeometryError(f'cannot read mesh dump: {exc}', key='mesh') from exc
        except GeometryError as exc:
            raise GeometryError(str(exc), key=exc.key or 'mesh') from exc
        domain.check_invariants()
        self._input('mesh', self.mesh_path)
        logger.info('Reusing mesh dump %s (%d vertices)', self.mesh_path, domain.mesh.n_vertices)
        return domain

    @cached_property
    def gamma0(self):
        c = self.config.conductivity
        return make_reference(self.domain, c['profile'], lam=c['lam'], value=c['value'], low=c['low'],
                              high=c['high'], E=c['E'])

    @cached_property
    def gamma1(self):
        if self.gamma_path is not None:
            return self._loaded_gamma()
        c = self.config.conductivity
        center = None if c['center'] is None else np.asarray(c['center'], dtype=float)
        gamma, sup_gap = perturb_in_D(self.gamma0, self.domain, c['bump'], c['amplitude'], c['radius_fraction'],
                                      center)
        self.diagnostics['sup_gap'] = float(sup_gap)
        radius = c['radius_fraction'] * self.domain.params.d_size
        clipped = bump_clipping(self.domain, self.domain.center if center is None else center, radius)
        self.diagnostics['bump_clipped_vertices'] = int(len(clipped))
        return gamma

    def _loaded_gamma(self):
        try:
            gamma = load_field(self.gamma_path, self.domain.mesh)
        except OSError as exc:
            raise ConductivityError(f'cannot read field dump: {exc}', key='gamma') from exc
        except ConductivityError as exc:
            raise ConductivityError(str(exc), key='gamma') from exc
        self._input('gamma', self.gamma_path)
        self.diagnostics['sup_gap'] = float(np.abs(gamma.values - self.gamma0.values).max())
        return gamma

    @cached_property
    def local_operators(self):
        max_dofs = self.config.dtn['max_dofs']
        return tuple(assemble_local_dtn(g, self.domain, max_dofs, self.options) for g in (self.gamma0, self.gamma1))

    @cached_property
    def full_operators(self):
        """Operators on the configured tag; the local maps when that tag is Sigma"""
        tag = self.config.dtn['tag']
        if tag == 'Sigma':
            return self.local_operators
        max_dofs = self.config.dtn['max_dofs']
        return tuple(assemble_full_dtn(g, self.domain, tag, max_dofs, self.options) for g in (self.gamma0, self.gamma1))

    @cached_property
    def kernel(self):
        frozen = self.config.skernel['frozen']
        return SKernelService(self.gamma1, self.gamma0, self.domain, gamma0=self.gamma0, options=self.options,
                              frozen=frozen)

    def ball_points(self, count, stage):
        """Mesh nodes near random points of the inner half of B_rho1(Q)"""
        generator = self._rng(stage)
        dim = self.domain.dim
        direction = generator.normal(size=(count, dim))
        direction /= np.linalg.norm(direction, axis=1)[:, None]
        radius = 0.5 * self.domain.rho1 * generator.uniform(size=(count, 1)) ** (1.0 / dim)
        index, _ = self.domain.mesh.nearest_vertex(self.domain.marked_point + radius * direction)
        return self.domain.mesh.vertices[index]

    def write_mesh(self):
        self._record(dump_mesh(self.domain, self._path('mesh.txt')))
        self.diagnostics.update({f'mesh_{k}': v for k, v in self.domain.summary().items()
                                 if k in ('vertices', 'cells', 'max_cell_diameter', 'sigma_dofs')})

    def write_fields(self):
        reports = []
        for name, gamma in (('gamma0', self.gamma0), ('gamma1', self.gamma1)):
            report = validate(gamma, self.domain)
            reports.append(report.as_dict())
            if not report.passed:
                failed = [c.name for c in report.checks if not c.passed]
                if gamma is self.gamma0 and ('ellipticity' in failed or 'W2inf' in failed):
                    raise ConductivityError(f'reference field fails its a-priori bounds: {", ".join(failed)}',
                                            key='conductivity.E')
                logger.warning('%s', report)
            self._record(dump_field(gamma, self._path(f'{name}.txt')))
        path = self._path('fields.json')
        path.write_text(json.dumps(_plain(reports), indent=2, sort_keys=True) + '\n')
        self._record(path)
        self.diagnostics['E1'] = float(self.gamma0.E1)

    def write_operators(self):
        local0, local1 = self.local_operators
        operators = [('dtn_local_gamma0', local0), ('dtn_local_gamma1', local1)]
        tag = self.config.dtn['tag']
        if tag != 'Sigma':
            full0, full1 = self.full_operators
            operators += [(f'dtn_{tag}_gamma0', full0), (f'dtn_{tag}_gamma1', full1)]
            self.diagnostics['full_gap'] = (full1 - full0).norm()
        for name, operator in operators:
            self._record(dump_operator(operator, self._path(f'{name}.txt')))
        self.diagnostics['epsilon'] = (local1 - local0).norm()

    def write_kernel(self):
        kernel = self.kernel
        z = self.ball_points(self.config.skernel['points'], 'kernel')
        w = z[::-1].copy()
        values = kernel.matrix(z, w)
        self.sample = SKernelSample(z, w, values)
        self._record(dump_sample(self.sample, self._path('skernel.csv')))

        local = self.local_operators[1] - self.local_operators[0]
        epsilon = local.norm()
        defects, bounds = [], []
        for j in range(len(z)):
            via = kernel.s_via_pairing(z[j], w[j], local)
            defects.append(abs(values[j, j] - via) / max(abs(values[j, j]), 1e-14))
            bounds.append(abs(values[j, j]) <= kernel.smallness_bound(z[j], w[j], local, epsilon) * (1 + 1e-9))
        in_z = elliptic_residual(kernel.field_in_z(w[0]), self.gamma0, self.domain)
        in_w = elliptic_residual(kernel.field_in_w(z[0]), self.gamma0, self.domain)
        self.diagnostics.update({
            'kernel_pairing_relative_defect': max(defects),
            'kernel_smallness_holds': all(bounds),
            'kernel_residual_z': in_z.relative,
            'kernel_residual_w': in_w.relative,
            'kernel_shell_maximum': shell_maximum(kernel),
        })
        self._write_energy()

    def _write_energy(self):
        # source at the body center, farthest from the Dirichlet walls of the bulge
        domain = self.domain
        green = GreenSolver(self.gamma0, domain, self.options).green(domain.center)
        r_min = 4 * domain.h
        r_max = domain.rho1
        if r_max <= r_min:
            logger.warning('rho1 %.4g is not above 4h; energy radii extend to %.4g', r_max, 2 * r_min)
            r_max = 2 * r_min
        decay = energy_decay(green, r_min, r_max, self.config.skernel['energy_radii'])
        path = self._path('energy.csv')
        with path.open('w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(('radius', 'energy'))
            for r, energy in zip(decay.radii, decay.energies):
                writer.writerow(('%.17g' % r, '%.17g' % energy))
        self._record(path)
        self.diagnostics.update(energy_slope=decay.slope, energy_r_squared=decay.r_squared,
                                energy_expected_slope=2 - domain.dim,
                                energy_source=green.source)

    def _reconstructions(self):
        config = self.config
        kernel = None if config.skernel['frozen'] else self.kernel
        reconstructor = GapReconstructor(self.gamma0, self.gamma1, self.gamma0, self.domain, kernel=kernel,
                                         step=config.skernel['h_fd'],
                                         refine=config.analysis['quadrature_refine'], options=self.options)
        traces = fourier_traces(self.domain, reconstructor.nodes, config.analysis['modes'])
        generator = self._rng('experiment')
        results = []
        for _ in range(config.analysis['pairs']):
            eta1 = generator.normal(size=len(traces)) @ traces
            eta2 = generator.normal(size=len(traces)) @ traces
            results.append(reconstructor.reconstruct(eta1, eta2))
        budget = config.analysis['reconstruction_budget']
        worst = max(r.relative_gap for r in results)
        if worst > budget:
            logger.warning('Reconstruction relative gap %.3g exceeds the budget %.3g', worst, budget)
        path = self._path('reconstruction.csv')
        columns = ('pair', 'direct', 'via_s', 'layer', 'i1', 'i2', 'i3', 'i4', 'refined', 'relative_gap',
                   'quadrature_error')
        with path.open('w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(columns)
            for index, result in enumerate(results):
                values = result.as_dict()
                writer.writerow([index] + ['' if values[c] is None else '%.17g' % values[c] for c in columns[1:]])
        self._record(path)
        return worst

    def write_experiment(self):
        config = self.config
        c = config.conductivity
        center = None if c['center'] is None else np.asarray(c['center'], dtype=float)
        sweep = StabilitySweep(self.gamma0, self.domain, shape=c['bump'], radius_fraction=c['radius_fraction'],
                               center=center, reconstruct=config.sweep['reconstruct'], options=self.options,
                               max_dofs=config.dtn['max_dofs'])
        report = sweep.run(config.sweep['t0'], config.sweep['K'], threads=self.threads,
                           run_id=config.output['run_id'])
        regions = PropagationRegions.of(self.domain)
        report.propagation = fit_propagation(self.gamma0, self.domain, size=config.analysis['family_size'],
                                             seed=config.seed, regions=regions, options=self.options)
        extra = {}
        count = config.analysis['cascade_points']
        if count:
            checks = cascade(report.propagation, self.kernel, self.ball_points(count, 'experiment'), regions)
            extra.update(cascade_points=len(checks), cascade_holds=sum(check.holds for check in checks))
        extra['reconstruction_pairs_worst_relative_gap'] = self._reconstructions()
        self._record(write_experiment_csv(report, self._path('experiment.csv'), extra))
        summary = report.summary()
        self.diagnostics.update(beta=summary['beta'], delta=summary['delta'], eta=report.fitted_eta,
                                eta_at_bound=report.propagation.at_bound, **extra)

    def write_manifest(self, command):
        summary = self._path('summary.json')
        summary.write_text(json.dumps(_plain(self.diagnostics), indent=2, sort_keys=True) + '\n')
        self._record(summary)
        files = {name: sha256_file(path) for name, path in sorted(self.written.items())}
        manifest = {
            'command': command,
            'config_digest': self.config.digest,
            'seed': self.config.seed,
            'inputs': self.inputs,
            'files': [{'name': name, 'sha256': digest, 'bytes': self.written[name].stat().st_size}
                      for name, digest in files.items()],
        }
        path = self._path(MANIFEST_NAME)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
        return files, sha256_file(path)

    def execute(self, command, record=None):
        """Run the stages of a command; returns a RunResult"""
        stages = COMMAND_STAGES[command]
        record = settings.LAB_RECORD_RUNS if record is None else record
        entry = self._open_ledger(command) if record else None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            for stage in STAGES:
                if stage in stages:
                    started = time.perf_counter()
                    getattr(self, f'write_{stage}')()
                    logger.info('Stage %s finished in %.2fs', stage, time.perf_counter() - started)
            files, digest = self.write_manifest(command)
        except LabError as exc:
            self._close_ledger(entry, 'mark_failed', exc)
            raise
        result = RunResult(command, self.out_dir, files, digest, _plain(self.diagnostics))
        self._close_ledger(entry, 'mark_completed', digest, result.diagnostics)
        logger.info('%s wrote %d files to %s (manifest %s)', command, len(files) + 1, self.out_dir, digest[:12])
        return result

    def _open_ledger(self, command):
        try:
            return ExperimentRun.objects.create(
                run_id=self.config.output['run_id'],
                command=command,
                seed=self.config.seed,
                config_digest=self.config.digest,
                out_dir=str(self.out_dir),
            )
        except DatabaseError as exc:
            logger.warning('Run ledger unavailable, not recording: %s', exc)
            return None

    def _close_ledger(self, entry, method, *args):
        if entry is None:
            return
        try:
            getattr(entry, method)(*args)
        except DatabaseError as exc:
            logger.warning('Could not update run ledger entry %s: %s', entry.pk, exc)
