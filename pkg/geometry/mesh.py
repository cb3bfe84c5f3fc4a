"""Conforming simplicial meshes (triangles in 2D, tetrahedra in 3D) and cell regions."""
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
import logging

import numpy as np
from scipy import sparse as sp
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from core.exceptions import GeometryError

logger = logging.getLogger(__name__)


def _readonly(array):
    array.flags.writeable = False
    return array


class SimplexMesh:
    """Vertices plus simplex connectivity, with cached P1 geometry"""

    def __init__(self, vertices, cells):
        vertices = np.array(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise GeometryError('vertices must be an (N, 2) or (N, 3) array')
        if cells.ndim != 2 or cells.shape[1] != vertices.shape[1] + 1:
            raise GeometryError('cells must list dimension + 1 vertex indices')
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise GeometryError('cell references a vertex out of range')
        self.vertices = _readonly(vertices)
        self.cells = _readonly(cells)
        self._check_elements()

    def _check_elements(self):
        """Reject zero-measure elements"""
        if not self.n_cells:
            raise GeometryError('mesh has no cells')
        scale = np.ptp(self.vertices, axis=0).max() / max(self.n_cells, 1) ** (1.0 / self.dim)
        degenerate = np.flatnonzero(self.volumes <= 1e-12 * scale ** self.dim)
        if degenerate.size:
            raise GeometryError(
                f'degenerate element: cell {degenerate[0]} has measure {self.volumes[degenerate[0]]:.3e}'
            )

    def __repr__(self):
        return f'SimplexMesh(dim={self.dim}, vertices={self.n_vertices}, cells={self.n_cells})'

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @cached_property
    def _affine(self):
        # columns [1, x_a] per local vertex; its inverse maps a point to barycentric coordinates
        points = self.vertices[self.cells]
        lifted = np.ones((self.n_cells, self.dim + 1, self.dim + 1))
        lifted[:, 1:, :] = np.transpose(points, (0, 2, 1))
        return lifted

    @cached_property
    def volumes(self):
        edges = self.vertices[self.cells[:, 1:]] - self.vertices[self.cells[:, :1]]
        return _readonly(np.abs(np.linalg.det(edges)) / factorial(self.dim))

    @cached_property
    def barycentric_maps(self):
        return _readonly(np.linalg.inv(self._affine))

    @cached_property
    def gradients(self):
        """Constant gradients of the P1 hat functions, shape (cells, dim + 1, dim)"""
        return _readonly(np.ascontiguousarray(self.barycentric_maps[:, :, 1:]))

    @cached_property
    def barycenters(self):
        return _readonly(self.vertices[self.cells].mean(axis=1))

    @cached_property
    def cell_diameters(self):
        points = self.vertices[self.cells]
        diam = np.zeros(self.n_cells)
        for a in range(self.dim + 1):
            for b in range(a + 1, self.dim + 1):
                diam = np.maximum(diam, np.linalg.norm(points[:, a] - points[:, b], axis=1))
        return _readonly(diam)

    @property
    def mesh_size(self):
        return float(self.cell_diameters.max())

    @cached_property
    def _facet_table(self):
        d = self.dim
        # local facet a omits local vertex a
        local = np.array([[j for j in range(d + 1) if j != a] for a in range(d + 1)])
        all_facets = np.sort(self.cells[:, local].reshape(-1, d), axis=1)
        facets, inverse = np.unique(all_facets, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        counts = np.bincount(inverse, minlength=len(facets))
        if counts.max() > 2:
            raise GeometryError('non-conforming mesh: a facet is shared by more than two cells')
        owner = np.repeat(np.arange(self.n_cells), d + 1)
        slot = np.tile(np.arange(d + 1), self.n_cells)
        order = np.argsort(inverse, kind='stable')
        ranked = inverse[order]
        first = np.ones(len(ranked), dtype=bool)
        first[1:] = ranked[1:] != ranked[:-1]
        facet_cells = np.full((len(facets), 2), -1, dtype=np.int64)
        facet_slots = np.full((len(facets), 2), -1, dtype=np.int64)
        facet_cells[ranked[first], 0] = owner[order][first]
        facet_slots[ranked[first], 0] = slot[order][first]
        facet_cells[ranked[~first], 1] = owner[order][~first]
        facet_slots[ranked[~first], 1] = slot[order][~first]
        return facets, facet_cells, facet_slots, inverse.reshape(self.n_cells, d + 1)

    @property
    def facets(self):
        return self._facet_table[0]

    @property
    def facet_cells(self):
        """Adjacent cells per facet; second column is -1 on the mesh boundary"""
        return self._facet_table[1]

    @property
    def facet_slots(self):
        """Local index (opposite vertex) of each facet inside its adjacent cells"""
        return self._facet_table[2]

    @property
    def cell_facets(self):
        return self._facet_table[3]

    @cached_property
    def facet_centroids(self):
        return _readonly(self.vertices[self.facets].mean(axis=1))

    @cached_property
    def facet_measures(self):
        return _readonly(simplex_measures(self.vertices[self.facets]))

    def facet_normal(self, facet_ids, cells):
        """Unit normals of the facets pointing out of the given adjacent cells"""
        facet_ids = np.asarray(facet_ids)
        cells = np.asarray(cells)
        slots = np.where(self.facet_cells[facet_ids, 0] == cells,
                         self.facet_slots[facet_ids, 0], self.facet_slots[facet_ids, 1])
        inward = self.gradients[cells, slots]
        return -inward / np.linalg.norm(inward, axis=1)[:, None]

    @cached_property
    def adjacency(self):
        """Cell-to-cell adjacency through shared facets"""
        pairs = self.facet_cells[self.facet_cells[:, 1] >= 0]
        data = np.ones(len(pairs))
        graph = sp.coo_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(self.n_cells, self.n_cells))
        return (graph + graph.T).tocsr()

    @cached_property
    def vertex_tree(self):
        return cKDTree(self.vertices)

    @cached_property
    def _barycenter_tree(self):
        return cKDTree(self.barycenters)

    def nearest_vertex(self, points):
        """Snap points to their nearest vertices; returns (indices, distances)"""
        distance, index = self.vertex_tree.query(np.atleast_2d(points))
        return index.astype(np.int64), distance

    def barycentric(self, cells, points):
        points = np.atleast_2d(points)
        lifted = np.concatenate([np.ones((len(points), 1)), points], axis=1)
        return np.einsum('nij,nj->ni', self.barycentric_maps[cells], lifted)

    def locate(self, points, tol=1e-10):
        """Containing cell and barycentric coordinates per point (cell -1 when outside)"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(24, self.n_cells)
        _, candidates = self._barycenter_tree.query(points, k=k)
        candidates = candidates.reshape(len(points), k)
        found = np.full(len(points), -1, dtype=np.int64)
        coords = np.zeros((len(points), self.dim + 1))
        for column in range(k):
            pending = np.flatnonzero(found < 0)
            if not pending.size:
                break
            cells = candidates[pending, column]
            lam = self.barycentric(cells, points[pending])
            inside = lam.min(axis=1) >= -tol
            found[pending[inside]] = cells[inside]
            coords[pending[inside]] = lam[inside]
        for index in np.flatnonzero(found < 0):
            # brute force for points far from any candidate barycenter
            lam = self.barycentric(np.arange(self.n_cells), np.repeat(points[index:index + 1], self.n_cells, axis=0))
            hits = np.flatnonzero(lam.min(axis=1) >= -tol)
            if hits.size:
                found[index] = hits[0]
                coords[index] = lam[hits[0]]
        return found, coords

    def point_loads(self, points):
        """Sparse (vertices x points) matrix of P1 point-load weights"""
        cells, coords = self.locate(points)
        if np.any(cells < 0):
            outside = np.flatnonzero(cells < 0)[0]
            raise GeometryError(f'point {np.atleast_2d(points)[outside]} lies outside the mesh')
        rows = self.cells[cells].reshape(-1)
        cols = np.repeat(np.arange(len(cells)), self.dim + 1)
        values = np.clip(coords, 0.0, None)
        values = (values / values.sum(axis=1, keepdims=True)).reshape(-1)
        return sp.csc_matrix((values, (rows, cols)), shape=(self.n_vertices, len(cells)))


def simplex_measures(points):
    """Measures of k-simplices embedded in R^d, points shaped (n, k + 1, d)"""
    k = points.shape[1] - 1
    if k == 0:
        return np.ones(len(points))
    edges = points[:, 1:] - points[:, :1]
    metric = np.einsum('nid,njd->nij', edges, edges)
    return np.sqrt(np.clip(np.linalg.det(metric), 0.0, None)) / factorial(k)


@dataclass(eq=False)
class Region:
    """A set of cells of a mesh, with its boundary and interior nodes"""
    mesh: SimplexMesh
    cells: np.ndarray
    name: str = 'region'
    _mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.cells = _readonly(np.unique(np.asarray(self.cells, dtype=np.int64)))
        mask = np.zeros(self.mesh.n_cells, dtype=bool)
        mask[self.cells] = True
        self._mask = _readonly(mask)

    def __len__(self):
        return len(self.cells)

    @property
    def mask(self):
        return self._mask

    @cached_property
    def nodes(self):
        return _readonly(np.unique(self.mesh.cells[self.cells]))

    @cached_property
    def boundary_facets(self):
        """Facets with exactly one adjacent cell inside the region"""
        fc = self.mesh.facet_cells
        inside = self._mask[fc[:, 0]] & (fc[:, 0] >= 0)
        inside_other = (fc[:, 1] >= 0) & self._mask[np.where(fc[:, 1] >= 0, fc[:, 1], 0)]
        return _readonly(np.flatnonzero(inside ^ inside_other))

    @cached_property
    def boundary_nodes(self):
        return _readonly(np.unique(self.mesh.facets[self.boundary_facets]))

    @cached_property
    def interior_nodes(self):
        return _readonly(np.setdiff1d(self.nodes, self.boundary_nodes, assume_unique=True))

    @property
    def volume(self):
        return float(self.mesh.volumes[self.cells].sum())

    def node_mask(self, nodes=None):
        mask = np.zeros(self.mesh.n_vertices, dtype=bool)
        mask[self.nodes if nodes is None else nodes] = True
        return mask

    def inner_cell(self, facet_ids):
        """The adjacent cell of each boundary facet that lies in the region"""
        fc = self.mesh.facet_cells[facet_ids]
        return np.where(self._mask[fc[:, 0]], fc[:, 0], fc[:, 1])

    def outward_normals(self, facet_ids):
        facet_ids = np.asarray(facet_ids)
        return self.mesh.facet_normal(facet_ids, self.inner_cell(facet_ids))

    def components(self):
        """Number of connected components of the cell adjacency graph"""
        if not len(self.cells):
            return 0
        graph = self.mesh.adjacency[self.cells][:, self.cells]
        count, _ = csgraph.connected_components(graph, directed=False)
        return count

    def is_connected(self):
        return self.components() == 1


def whole(mesh, name='all'):
    return Region(mesh, np.arange(mesh.n_cells), name)
