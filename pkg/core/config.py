"""
Run configuration: one JSON document, validated by nested serializers.

Unknown keys at any level are errors. Missing sections fall back to the
defaults in settings. Validation failures become ConfigError with the
dotted key of the first offending entry.
"""
from dataclasses import asdict, dataclass, replace
import hashlib
import json
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from conductivity.fields import BUMP_SHAPES, PROFILES
from geometry.domain import FAMILIES, GeometryParams
from pde.solvers import SolverOptions
from .exceptions import ConfigError

SECTIONS = ('geometry', 'conductivity', 'solver', 'dtn', 'skernel', 'analysis', 'sweep', 'output')

DTN_TAGS = ('Sigma', 'dDtilde', 'dDprime', 'dD')


def positive(value):
    if value <= 0:
        raise serializers.ValidationError('Must be positive.')


def fraction(value):
    if not 0 < value < 1:
        raise serializers.ValidationError('Must lie strictly between 0 and 1.')


class StrictSerializer(serializers.Serializer):
    """Rejects keys it does not declare"""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown key.'] for key in unknown})
        return super().to_internal_value(data)


class GeometrySerializer(StrictSerializer):
    # no defaults here: GeometryParams carries them
    dimension = serializers.ChoiceField(choices=[2, 3], required=False)
    family = serializers.ChoiceField(choices=sorted(FAMILIES), required=False)
    mesh_size = serializers.FloatField(required=False, validators=[positive])
    rho0 = serializers.FloatField(required=False, validators=[positive])
    M0 = serializers.FloatField(required=False)
    d0 = serializers.FloatField(required=False, validators=[positive])
    rho1 = serializers.FloatField(required=False, allow_null=True)
    rho2 = serializers.FloatField(required=False, validators=[positive])
    h1 = serializers.FloatField(required=False, validators=[positive])
    diam_omega = serializers.FloatField(required=False, allow_null=True)
    extent = serializers.FloatField(required=False, validators=[positive])
    d_size = serializers.FloatField(required=False, validators=[positive])
    dprime_size = serializers.FloatField(required=False, validators=[positive])
    dtilde_size = serializers.FloatField(required=False, validators=[positive])
    sigma_angle = serializers.FloatField(required=False, validators=[positive])
    sigma0_fraction = serializers.FloatField(required=False)
    bulge_depth = serializers.FloatField(required=False, allow_null=True)
    mesh_layers = serializers.IntegerField(required=False, min_value=1)


class ConductivitySerializer(StrictSerializer):
    profile = serializers.ChoiceField(choices=PROFILES, default='constant')
    lam = serializers.FloatField(default=0.4, validators=[fraction])
    value = serializers.FloatField(default=1.0)
    low = serializers.FloatField(default=1.0)
    high = serializers.FloatField(default=2.0)
    E = serializers.FloatField(default=50.0, validators=[positive])
    bump = serializers.ChoiceField(choices=BUMP_SHAPES, default='cosine')
    amplitude = serializers.FloatField(default=0.2)
    radius_fraction = serializers.FloatField(default=0.8, validators=[fraction])
    center = serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=3, allow_null=True,
                                   default=None)


class SolverSerializer(StrictSerializer):
    tol = serializers.FloatField(default=lambda: settings.SOLVER_TOL, validators=[positive])
    max_iter = serializers.IntegerField(default=lambda: settings.SOLVER_MAX_ITER, min_value=1)
    direct_limit = serializers.IntegerField(default=lambda: settings.SOLVER_DIRECT_LIMIT, min_value=0)


class DtnSerializer(StrictSerializer):
    max_dofs = serializers.IntegerField(default=lambda: settings.DTN_MAX_DOFS, min_value=1)
    tag = serializers.ChoiceField(choices=DTN_TAGS, default='dDtilde')


class SKernelSerializer(StrictSerializer):
    h_fd = serializers.FloatField(default=None, allow_null=True, validators=[positive])
    points = serializers.IntegerField(default=5, min_value=1)
    frozen = serializers.BooleanField(default=False)
    energy_radii = serializers.IntegerField(default=6, min_value=2)


class AnalysisSerializer(StrictSerializer):
    quadrature_refine = serializers.BooleanField(default=True)
    reconstruction_budget = serializers.FloatField(default=0.05, validators=[positive])
    family_size = serializers.IntegerField(default=50, min_value=2)
    pairs = serializers.IntegerField(default=5, min_value=1)
    modes = serializers.IntegerField(default=3, min_value=1)
    cascade_points = serializers.IntegerField(default=5, min_value=0)


class SweepSerializer(StrictSerializer):
    t0 = serializers.FloatField(default=0.4, validators=[positive])
    K = serializers.IntegerField(default=6, min_value=4)
    reconstruct = serializers.BooleanField(default=True)


class OutputSerializer(StrictSerializer):
    dir = serializers.CharField(default=None, allow_null=True)
    run_id = serializers.RegexField(r'^[A-Za-z0-9_.-]+$', default='default')


class RunConfigSerializer(StrictSerializer):
    geometry = GeometrySerializer()
    conductivity = ConductivitySerializer()
    solver = SolverSerializer()
    dtn = DtnSerializer()
    skernel = SKernelSerializer()
    analysis = AnalysisSerializer()
    sweep = SweepSerializer()
    output = OutputSerializer()
    seed = serializers.IntegerField(default=lambda: settings.LAB_DEFAULT_SEED, min_value=0)

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{name: {} for name in SECTIONS}, **data}
        return super().to_internal_value(data)


def _first_error(detail, prefix=''):
    """Dotted key and message of the first leaf in a serializer error tree"""
    if isinstance(detail, dict):
        key = sorted(detail)[0]
        name = prefix if key == 'non_field_errors' else (f'{prefix}.{key}' if prefix else str(key))
        return _first_error(detail[key], name)
    if isinstance(detail, list):
        if all(isinstance(item, str) for item in detail):
            return prefix, ' '.join(str(item) for item in detail)
        index, item = next((i, item) for i, item in enumerate(detail) if item)
        return _first_error(item, f'{prefix}[{index}]')
    return prefix, str(detail)


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryParams
    conductivity: dict
    solver: SolverOptions
    dtn: dict
    skernel: dict
    analysis: dict
    sweep: dict
    output: dict
    seed: int

    def to_dict(self):
        values = {name: getattr(self, name) for name in SECTIONS}
        values.update(geometry=self.geometry.to_dict(), solver=asdict(self.solver), seed=self.seed)
        return values

    @property
    def digest(self):
        """Hash of the config without its output section"""
        values = self.to_dict()
        del values['output']
        return hashlib.sha256(json.dumps(values, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, seed=None, out_dir=None):
        config = self
        if seed is not None:
            config = replace(config, seed=seed)
        if out_dir is not None:
            config = replace(config, output={**config.output, 'dir': str(out_dir)})
        return config


def parse_config(data):
    if not isinstance(data, dict):
        raise ConfigError('a run config must be a JSON object', key='config')
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        key, message = _first_error(serializer.errors)
        raise ConfigError(message, key=key or 'config')
    values = serializer.validated_data
    return RunConfig(
        geometry=GeometryParams(**values['geometry']),
        conductivity=dict(values['conductivity']),
        solver=SolverOptions(**values['solver']),
        dtn=dict(values['dtn']),
        skernel=dict(values['skernel']),
        analysis=dict(values['analysis']),
        sweep=dict(values['sweep']),
        output=dict(values['output']),
        seed=values['seed'],
    )


def resolve_config_path(name):
    """A path, or the name of a bundled config"""
    path = Path(name)
    if path.is_file():
        return path
    bundled = Path(settings.LAB_CONFIG_DIR) / f'{name}.json'
    if bundled.is_file():
        return bundled
    raise ConfigError(f'no config file {name!r}', key='config')


def load_config(name):
    path = resolve_config_path(name)
    text = path.read_text()
    if not text.strip():
        raise ConfigError(f'{path} is empty', key='config', empty=True)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path} is not valid JSON (line {exc.lineno}, column {exc.colno})',
                          key='config') from exc
    return parse_config(data)
