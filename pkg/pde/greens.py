"""
Discrete Green functions on the extended body.

G(., y) is the P1 solution of a(G, phi) = phi(y) for every interior hat
function phi, with G = 0 on the outer boundary. Sources on mesh nodes give
unit nodal loads, which keeps G(x, y) = G(y, x) exact at nodes. Sources
between nodes use the P1-consistent barycentric load, so G moves smoothly
with its source (finite differences in the source position rely on this).
"""
from dataclasses import dataclass
import logging
import threading

import numpy as np

from core.exceptions import SolverError
from .assembly import cell_gradients
from .solvers import DirichletSolver

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class GreensFunction:
    source: np.ndarray
    node: int
    snap_distance: float
    values: np.ndarray
    mesh: object
    conductivity: str = 'gamma'

    def at(self, nodes):
        return self.values[nodes]


def _key(point):
    return tuple(np.round(np.asarray(point, dtype=float), 14))


class GreenSolver:
    """Shares one factorization of the extended-body operator across all sources"""

    def __init__(self, gamma, domain, options=None):
        self.gamma = gamma
        self.domain = domain
        self.mesh = domain.mesh
        region = domain.region('OmegaTilde')
        self.solver = DirichletSolver(gamma, region, dirichlet_nodes=domain.nodes('dOmegaTilde'), options=options)
        self._free = np.zeros(self.mesh.n_vertices, dtype=bool)
        self._free[self.solver.interior] = True
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def stiffness(self):
        return self.solver.stiffness

    def loads(self, points):
        """Sparse (vertices x points) barycentric loads; rejects sources on the outer boundary"""
        loads = self.mesh.point_loads(np.atleast_2d(points))
        interior_weight = np.asarray(loads.tocsr()[self.solver.interior].sum(axis=0)).ravel()
        bad = np.flatnonzero(interior_weight < 1e-12)
        if bad.size:
            raise SolverError(f'source {np.atleast_2d(points)[bad[0]]} lies on the outer boundary')
        return loads

    def columns(self, points):
        """Nodal values of G(., y) for each point y; shape (vertices, points)"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        keys = [_key(p) for p in points]
        missing = [i for i, key in enumerate(keys) if key not in self._cache]
        if missing:
            unique = list(dict.fromkeys(keys[i] for i in missing))
            block = np.array(unique)
            loads = self.loads(block)
            values = self.solver.solve_many(np.zeros((len(self.solver.boundary), len(unique))), loads)
            with self._lock:
                for key, column in zip(unique, values.T):
                    self._cache[key] = column
            logger.debug('Solved %d Green columns (%d cached)', len(unique), len(self._cache))
        return np.column_stack([self._cache[key] for key in keys])

    def node_columns(self, nodes):
        return self.columns(self.mesh.vertices[np.atleast_1d(nodes)])

    def green(self, y, snap=True):
        y = np.asarray(y, dtype=float)
        node, distance = -1, 0.0
        if snap:
            index, dist = self.mesh.nearest_vertex(y)
            node, distance = int(index[0]), float(dist[0])
            y = self.mesh.vertices[node]
            if not self._free[node]:
                raise SolverError(f'source {y} lies on the outer boundary')
        values = self.columns(y)[:, 0]
        return GreensFunction(y, node, distance, values, self.mesh, getattr(self.gamma, 'name', 'gamma'))


def greens_function(gamma, domain, y, options=None):
    """Green function with its source snapped to the nearest mesh node"""
    return GreenSolver(gamma, domain, options).green(y)


def energy_annulus(green, r, h=None):
    """Dirichlet energy of G outside the ball B_r(source)"""
    mesh = green.mesh
    h = h if h is not None else mesh.mesh_size
    if r <= 2 * h:
        raise SolverError(f'radius {r:.4g} is below twice the mesh size {h:.4g}', key='pde.energy_radius')
    outside = np.linalg.norm(mesh.barycenters - green.source, axis=1) >= r
    if not outside.any():
        return 0.0
    grads = cell_gradients(mesh, green.values, np.flatnonzero(outside))
    return float(np.sum(mesh.volumes[outside] * np.einsum('cd,cd->c', grads, grads)))


@dataclass
class EnergyDecay:
    radii: np.ndarray
    energies: np.ndarray
    slope: float
    intercept: float
    r_squared: float


def energy_decay(green, r_min, r_max, count=6, h=None):
    """Annulus energies on geometric radii and their log-log slope"""
    if count < 2 or r_max <= r_min:
        raise SolverError('energy decay needs at least two increasing radii', key='pde.energy_radius')
    radii = np.geomspace(r_min, r_max, count)
    energies = np.array([energy_annulus(green, r, h) for r in radii])
    if np.any(energies <= 0):
        raise SolverError('annulus energy vanished; radii exceed the domain', key='pde.energy_radius')
    x, y = np.log(radii), np.log(energies)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    total = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - np.sum((y - fitted) ** 2) / total if total > 0 else 1.0
    return EnergyDecay(radii, energies, float(slope), float(intercept), float(r_squared))
