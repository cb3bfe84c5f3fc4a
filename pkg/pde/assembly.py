"""P1 Galerkin assembly of volume and surface bilinear forms."""
from math import factorial

import numpy as np
from scipy import sparse as sp

from core.exceptions import GeometryError
from geometry.mesh import simplex_measures


def _coefficients(gamma, cells):
    if gamma is None:
        return np.ones(len(cells))
    if np.isscalar(gamma):
        return np.full(len(cells), float(gamma))
    means = getattr(gamma, 'cell_means', None)
    if means is None:
        means = np.asarray(gamma, dtype=float)
    return means[cells]


def _scatter(n, connectivity, local):
    """Sum per-element local matrices into a global csr matrix"""
    k = connectivity.shape[1]
    rows, cols, vals = [], [], []
    for j in range(k):
        for l in range(k):
            rows.append(connectivity[:, j])
            cols.append(connectivity[:, l])
            vals.append(local[:, j, l])
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return matrix.tocsr()


def element_stiffness(mesh, cells):
    grads = mesh.gradients[cells]
    return mesh.volumes[cells][:, None, None] * np.einsum('cad,cbd->cab', grads, grads)


def assemble(gamma, region):
    """
    Stiffness matrix of a(u, v) = integral over region of gamma grad u . grad v.

    The matrix is global-sized (all mesh vertices); rows of vertices outside
    the region are empty. gamma is a conductivity field (its P1 cell means
    integrate exactly), an array of cell values, a scalar, or None for 1.
    """
    mesh = region.mesh
    cells = region.cells
    local = element_stiffness(mesh, cells) * _coefficients(gamma, cells)[:, None, None]
    return _scatter(mesh.n_vertices, mesh.cells[cells], local)


def assemble_mass(region):
    """P1 mass matrix over the region"""
    mesh = region.mesh
    cells = region.cells
    d = mesh.dim
    pattern = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = mesh.volumes[cells][:, None, None] * pattern[None]
    return _scatter(mesh.n_vertices, mesh.cells[cells], local)


def cell_gradients(mesh, values, cells=None):
    """Constant gradients of P1 functions; values shaped (vertices,) or (vertices, k)"""
    cells = np.arange(mesh.n_cells) if cells is None else cells
    local = np.asarray(values)[mesh.cells[cells]]
    grads = mesh.gradients[cells]
    if local.ndim == 2:
        return np.einsum('cad,ca->cd', grads, local)
    return np.einsum('cad,cak->ckd', grads, local)


def energy(stiffness, values):
    return float(values @ (stiffness @ values))


def _surface_tables(mesh, facet_ids):
    facet_ids = np.asarray(facet_ids)
    if not len(facet_ids):
        raise GeometryError('surface assembly needs a nonempty facet set')
    nodes = mesh.facets[facet_ids]
    points = mesh.vertices[nodes]
    return nodes, points, simplex_measures(points)


def surface_mass(mesh, facet_ids):
    """P1 mass matrix on a set of facets (boundary L2 inner product)"""
    nodes, _, measures = _surface_tables(mesh, facet_ids)
    k = nodes.shape[1]
    pattern = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return _scatter(mesh.n_vertices, nodes, measures[:, None, None] * pattern[None])


def surface_stiffness(mesh, facet_ids):
    """P1 Laplace-Beltrami stiffness matrix on a set of facets"""
    nodes, points, measures = _surface_tables(mesh, facet_ids)
    edges = points[:, 1:] - points[:, :1]
    metric = np.einsum('fid,fjd->fij', edges, edges)
    # tangential gradients of the barycentric coordinates 1..k, then coordinate 0
    tangents = np.einsum('fjd,fji->fid', edges, np.linalg.inv(metric))
    grads = np.concatenate([-tangents.sum(axis=1, keepdims=True), tangents], axis=1)
    local = measures[:, None, None] * np.einsum('fad,fbd->fab', grads, grads)
    return _scatter(mesh.n_vertices, nodes, local)


def unit_element_matrix(dim):
    """Stiffness of the reference right simplex with unit conductivity"""
    grads = np.vstack([-np.ones(dim), np.eye(dim)])
    return grads @ grads.T / factorial(dim)
