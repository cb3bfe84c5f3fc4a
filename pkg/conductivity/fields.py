"""
Scalar conductivity fields on a meshed domain.

Fields are stored as vertex values and read as P1 functions. Reference
fields are defined on the whole extended body, so they need no separate
extension step; perturbations live strictly inside D.
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
import logging
from typing import Optional

import numpy as np

from core.exceptions import ConductivityError

logger = logging.getLogger(__name__)

PROFILES = ('constant', 'smooth_ramp')
BUMP_SHAPES = ('cosine', 'mollified')


@dataclass(frozen=True, eq=False)
class ConductivityField:
    mesh: object
    values: np.ndarray
    lam: float
    E: float
    E1: Optional[float] = None
    name: str = 'gamma'
    profile: str = 'custom'

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.mesh.n_vertices,):
            raise ConductivityError(
                f'{self.name} needs one value per vertex ({self.mesh.n_vertices}), got {values.shape}'
            )
        if not np.all(np.isfinite(values)) or values.min() <= 0:
            raise ConductivityError(f'{self.name} must be finite and positive')
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    def __repr__(self):
        return f'ConductivityField({self.name}, range=[{self.min:.4g}, {self.max:.4g}], lam={self.lam})'

    @property
    def min(self):
        return float(self.values.min())

    @property
    def max(self):
        return float(self.values.max())

    @cached_property
    def cell_means(self):
        """Cell averages, which integrate the P1 field exactly on each cell"""
        return self.values[self.mesh.cells].mean(axis=1)

    @cached_property
    def cell_gradients(self):
        local = self.values[self.mesh.cells]
        # differences against the first vertex keep constant fields exactly flat
        return np.einsum('ca,cad->cd', local[:, 1:] - local[:, :1], self.mesh.gradients[:, 1:])

    @cached_property
    def lipschitz_bound(self):
        """Measured W^{1,inf} surrogate over the whole mesh"""
        slopes = _vertex_max(self.mesh, np.linalg.norm(self.cell_gradients, axis=1))
        return float((np.abs(self.values) + slopes).max())

    def interpolate(self, points):
        cells, coords = self.mesh.locate(points)
        if np.any(cells < 0):
            raise ConductivityError('cannot evaluate a field outside the mesh')
        return np.einsum('pk,pk->p', coords, self.values[self.mesh.cells[cells]])

    def with_values(self, values, name=None, profile=None):
        return replace(self, values=values, name=name or self.name, profile=profile or self.profile, E1=None)

    def scaled(self, factor):
        return self.with_values(self.values * factor, name=f'{factor:g}*{self.name}')


def _vertex_max(mesh, cell_values):
    """Largest value of a cellwise quantity over the cells touching each vertex"""
    result = np.zeros(mesh.n_vertices)
    for a in range(mesh.dim + 1):
        np.maximum.at(result, mesh.cells[:, a], cell_values)
    return result


def _check_ellipticity(values, lam, key):
    if not 0 < lam < 1:
        raise ConductivityError('ellipticity constant must lie in (0, 1)', key='conductivity.lambda')
    low, high = values.min(), values.max()
    if low <= lam or high >= 1 / lam:
        raise ConductivityError(
            f'values [{low:.6g}, {high:.6g}] leave the open interval ({lam:g}, {1 / lam:g})', key=key
        )


def smoothstep(s):
    """Quintic ramp with vanishing first and second derivatives at 0 and 1"""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s ** 2)


def make_reference(domain, profile='constant', lam=0.4, value=1.0, low=1.0, high=2.0, E=50.0):
    """Reference conductivity on the whole extended body"""
    mesh = domain.mesh
    if profile == 'constant':
        values = np.full(mesh.n_vertices, float(value))
        _check_ellipticity(values, lam, 'conductivity.value')
    elif profile == 'smooth_ramp':
        x = mesh.vertices[:, 0]
        omega = domain.region('Omega').nodes
        start, stop = x[omega].min(), x[omega].max()
        values = low + (high - low) * smoothstep((x - start) / (stop - start))
        _check_ellipticity(np.array([low, high]), lam, 'conductivity.high')
    else:
        raise ConductivityError(f'unknown profile {profile!r}', key='conductivity.profile')
    gamma = ConductivityField(mesh, values, lam=lam, E=E, name='gamma0', profile=profile)
    logger.debug('Reference %s field, E1 measured %.4g', profile, gamma.lipschitz_bound)
    return replace(gamma, E1=gamma.lipschitz_bound)


def bump(shape, distance, radius):
    """Unit-peak radial bump supported in the open ball of the given radius"""
    s = np.asarray(distance) / radius
    if shape == 'cosine':
        return np.where(s < 1, 0.5 * (1 + np.cos(np.pi * np.minimum(s, 1))), 0.0)
    if shape == 'mollified':
        # plateau of height 1 up to half the radius, C-infinity transition to 0 at the radius
        t = np.clip(2 * (1 - s), 0.0, 1.0)
        with np.errstate(divide='ignore', over='ignore'):
            a = np.where(t > 0, np.exp(-1 / np.where(t > 0, t, 1)), 0.0)
            b = np.where(t < 1, np.exp(-1 / np.where(t < 1, 1 - t, 1)), 0.0)
        return a / (a + b)
    raise ConductivityError(f'unknown bump shape {shape!r}', key='conductivity.bump')


def bump_clipping(domain, center, radius):
    """Vertices of the open bump ball that are not interior nodes of D"""
    distance = np.linalg.norm(domain.mesh.vertices - np.asarray(center, dtype=float), axis=1)
    return np.setdiff1d(np.flatnonzero(distance < radius), domain.region('D').interior_nodes)


def perturb_in_D(gamma0, domain, shape='cosine', amplitude=0.0, radius_fraction=0.8, center=None):
    """
    Add amplitude * bump inside D.

    Vertices outside the interior of D keep the exact reference values.
    Returns the perturbed field and its sup-norm distance to gamma0.
    """
    if not 0 < radius_fraction < 1:
        raise ConductivityError('bump radius must be a fraction in (0, 1) of the size of D',
                                key='conductivity.radius_fraction')
    center = domain.center if center is None else np.asarray(center, dtype=float)
    radius = radius_fraction * domain.params.d_size
    clipped = bump_clipping(domain, center, radius)
    if len(clipped):
        logger.warning('Bump of radius %.4g around %s leaves D; %d vertices of its support keep gamma0',
                       radius, np.round(center, 6).tolist(), len(clipped))
    inner = domain.region('D').interior_nodes
    distance = np.linalg.norm(domain.mesh.vertices[inner] - center, axis=1)
    profile = bump(shape, distance, radius)
    values = gamma0.values.copy()
    support = profile > 0
    values[inner[support]] = gamma0.values[inner[support]] + amplitude * profile[support]
    _check_ellipticity(values, gamma0.lam, 'conductivity.amplitude')
    sup_gap = float(np.abs(values - gamma0.values).max())
    gamma = ConductivityField(gamma0.mesh, values, lam=gamma0.lam, E=gamma0.E, E1=gamma0.E1,
                              name=f'gamma[{shape},{amplitude:g}]', profile=gamma0.profile)
    return gamma, sup_gap


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    vertex: int


@dataclass
class ValidationReport:
    field_name: str
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def check(self, name):
        return next(c for c in self.checks if c.name == name)

    def as_dict(self):
        return {
            'field': self.field_name,
            'passed': self.passed,
            'checks': [vars(c) for c in self.checks],
        }

    def __str__(self):
        lines = [f'{self.field_name}: {"pass" if self.passed else "FAIL"}']
        for c in self.checks:
            lines.append(f'  {c.name:<12} {"ok " if c.passed else "bad"} value={c.value:.6g} '
                         f'bound={c.bound:.6g} vertex={c.vertex}')
        return '\n'.join(lines)


def second_difference_quotients(mesh, gradients, cells_mask):
    """Per-vertex max of gradient jumps across shared facets over barycenter distance"""
    fc = mesh.facet_cells
    both = (fc[:, 1] >= 0)
    both &= cells_mask[fc[:, 0]] & cells_mask[np.where(both, fc[:, 1], 0)]
    pairs = fc[both]
    jump = np.linalg.norm(gradients[pairs[:, 0]] - gradients[pairs[:, 1]], axis=1)
    gap = np.linalg.norm(mesh.barycenters[pairs[:, 0]] - mesh.barycenters[pairs[:, 1]], axis=1)
    quotient = jump / gap
    result = np.zeros(mesh.n_vertices)
    facets = mesh.facets[both]
    for k in range(facets.shape[1]):
        np.maximum.at(result, facets[:, k], quotient)
    return result


def validate(gamma, domain, lam=None, E=None, E1=None):
    """Pass/fail per a-priori bound with the worst offending vertex; pure"""
    lam = gamma.lam if lam is None else lam
    E = gamma.E if E is None else E
    mesh = gamma.mesh
    report = ValidationReport(gamma.name)

    values = gamma.values
    margin = np.minimum(values - lam, 1 / lam - values)
    worst = int(np.argmin(margin))
    report.checks.append(Check('ellipticity', bool(margin[worst] > 0), float(values[worst]), lam, worst))

    omega = domain.region('Omega')
    slopes = np.linalg.norm(gamma.cell_gradients, axis=1)
    omega_slopes = np.where(omega.mask, slopes, 0.0)
    surrogate = np.abs(values) + _vertex_max(mesh, omega_slopes) + second_difference_quotients(
        mesh, gamma.cell_gradients, omega.mask)
    surrogate = np.where(omega.node_mask(), surrogate, 0.0)
    worst = int(np.argmax(surrogate))
    report.checks.append(Check('W2inf', bool(surrogate[worst] <= E), float(surrogate[worst]), E, worst))

    lipschitz = np.abs(values) + _vertex_max(mesh, slopes)
    worst = int(np.argmax(lipschitz))
    bound = E1 if E1 is not None else (gamma.E1 if gamma.E1 is not None else np.inf)
    report.checks.append(Check('W1inf', bool(lipschitz[worst] <= bound), float(lipschitz[worst]), bound, worst))
    return report
