"""Dirichlet problems for div(gamma grad u) = 0 on tagged subdomains."""
from dataclasses import dataclass
import logging
from typing import Optional

import numpy as np
from django.conf import settings
from scipy import sparse as sp
from scipy.sparse import linalg as spla

from core.exceptions import SolverError
from .assembly import assemble, surface_mass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    tol: float
    max_iter: int
    direct_limit: int

    @classmethod
    def from_settings(cls, tol=None, max_iter=None, direct_limit=None):
        return cls(
            tol=settings.SOLVER_TOL if tol is None else tol,
            max_iter=settings.SOLVER_MAX_ITER if max_iter is None else max_iter,
            direct_limit=settings.SOLVER_DIRECT_LIMIT if direct_limit is None else direct_limit,
        )


@dataclass(eq=False)
class FieldSolution:
    values: np.ndarray
    region: str
    boundary_nodes: np.ndarray
    boundary_data: np.ndarray
    residual_norm: float
    stiffness: sp.csr_matrix
    iterations: int = 0
    mesh: object = None

    def trace(self, nodes):
        return self.values[nodes]


@dataclass(eq=False)
class BoundaryFlux:
    """Co-normal flux as a functional on boundary hat functions"""
    nodes: np.ndarray
    values: np.ndarray
    density: Optional[np.ndarray] = None

    def pairing(self, trace):
        return float(self.values @ trace)

    @property
    def total(self):
        return float(self.values.sum())


class DirichletSolver:
    """
    Factorizes the interior block of the stiffness matrix once and reuses it
    for every set of boundary data or interior loads.
    """

    def __init__(self, gamma, region, dirichlet_nodes=None, options=None):
        self.gamma = gamma
        self.region = region
        self.options = options or SolverOptions.from_settings()
        self.stiffness = assemble(gamma, region)
        self.boundary = np.asarray(region.boundary_nodes if dirichlet_nodes is None else dirichlet_nodes)
        self.interior = np.setdiff1d(region.nodes, self.boundary)
        if not len(self.interior):
            raise SolverError(f'region {region.name} has no free nodes')
        K = self.stiffness.tocsc()
        self._K_ii = K[self.interior][:, self.interior].tocsc()
        self._K_ib = K[self.interior][:, self.boundary].tocsc()
        self._norm = spla.norm(self._K_ii, np.inf)
        self._lu = None
        if len(self.interior) <= self.options.direct_limit:
            self._lu = spla.splu(self._K_ii)
            logger.debug('Factorized %d unknowns on %s', len(self.interior), region.name)
        else:
            diagonal = self._K_ii.diagonal()
            self._jacobi = spla.LinearOperator(self._K_ii.shape, matvec=lambda x: x / diagonal, dtype=float)
            logger.info('Using Jacobi-preconditioned CG for %d unknowns on %s', len(self.interior), region.name)

    @property
    def n_unknowns(self):
        return len(self.interior)

    def _backward_error(self, x, rhs):
        residual = self._K_ii @ x - rhs
        scale = self._norm * np.abs(x).max(axis=0) + np.abs(rhs).max(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return np.abs(residual).max(axis=0) / scale

    def solve_interior(self, rhs):
        """Solve K_ii x = rhs for one or many right-hand sides"""
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        block = rhs[:, None] if single else rhs
        if self._lu is not None:
            x = self._lu.solve(block)
            error = self._backward_error(x, block)
            if np.any(error > self.options.tol):
                # one step of iterative refinement
                x = x - self._lu.solve(self._K_ii @ x - block)
                error = self._backward_error(x, block)
            iterations = 0
        else:
            x = np.zeros_like(block)
            iterations = 0
            for k in range(block.shape[1]):
                counter = _Counter()
                x[:, k], info = spla.cg(self._K_ii, block[:, k], rtol=self.options.tol,
                                        maxiter=self.options.max_iter, M=self._jacobi, callback=counter)
                iterations = max(iterations, counter.count)
                if info > 0:
                    achieved = float(np.linalg.norm(self._K_ii @ x[:, k] - block[:, k])
                                     / max(np.linalg.norm(block[:, k]), 1e-300))
                    raise SolverError(
                        f'CG did not converge in {self.options.max_iter} iterations '
                        f'(relative residual {achieved:.3e}, column {k})',
                        key='solver.max_iter', residual=achieved, column=k,
                    )
            error = self._backward_error(x, block)
            for k in np.flatnonzero(error > self.options.tol):
                # restart with the target scaled by the overshoot
                rtol = max(0.5 * self.options.tol ** 2 / error[k], 1e-16)
                x[:, k], _ = spla.cg(self._K_ii, block[:, k], x0=x[:, k], rtol=rtol,
                                     maxiter=self.options.max_iter, M=self._jacobi)
            error = self._backward_error(x, block)
        worst = float(error.max()) if error.size else 0.0
        if worst > self.options.tol:
            method = 'direct' if self._lu is not None else 'CG'
            raise SolverError(f'{method} solve residual {worst:.3e} exceeds tolerance {self.options.tol:.1e}',
                              key='solver.tol', residual=worst)
        return (x[:, 0] if single else x), worst, iterations

    def solve(self, boundary_data, load=None):
        """
        Discrete gamma-harmonic extension of boundary data.

        boundary_data holds either one value per Dirichlet node or one value
        per mesh vertex. load is an optional global right-hand side vector.
        """
        data = self._boundary_values(boundary_data)
        rhs = -(self._K_ib @ data)
        if load is not None:
            rhs = rhs + np.asarray(load)[self.interior]
        x, residual, iterations = self.solve_interior(rhs)
        values = np.zeros(self.stiffness.shape[0])
        values[self.boundary] = data
        values[self.interior] = x
        return FieldSolution(values, self.region.name, self.boundary, data, residual, self.stiffness, iterations,
                             self.region.mesh)

    def solve_many(self, boundary_block, loads=None):
        """Extensions of many data sets at once; columns in, full-length columns out"""
        block = np.asarray(boundary_block, dtype=float)
        if block.shape[0] != len(self.boundary):
            raise SolverError('boundary block must have one row per Dirichlet node')
        rhs = -(self._K_ib @ block)
        if loads is not None:
            loads = loads.toarray() if sp.issparse(loads) else np.asarray(loads)
            rhs = rhs + loads[self.interior]
        x, _, _ = self.solve_interior(rhs)
        values = np.zeros((self.stiffness.shape[0], block.shape[1]))
        values[self.boundary] = block
        values[self.interior] = x
        return values

    def _boundary_values(self, boundary_data):
        if callable(boundary_data):
            return np.asarray(boundary_data(self.region.mesh.vertices[self.boundary]), dtype=float)
        data = np.asarray(boundary_data, dtype=float)
        if data.shape == (len(self.boundary),):
            return data
        if data.shape == (self.region.mesh.n_vertices,):
            return data[self.boundary]
        raise SolverError(f'boundary data must cover the {len(self.boundary)} Dirichlet nodes')


class _Counter:
    def __init__(self):
        self.count = 0

    def __call__(self, _):
        self.count += 1


def solve_dirichlet(gamma, region, boundary_data, options=None):
    return DirichletSolver(gamma, region, options=options).solve(boundary_data)


def conormal_flux(solution, facet_ids=None):
    """
    Variational co-normal flux of a solution on its Dirichlet nodes.

    Its pairing with any boundary trace equals the integral of
    gamma grad u . grad(extension of the trace). With facets given, the
    functional is restricted to their nodes and a density is recovered
    through the surface mass matrix.
    """
    functional = solution.stiffness @ solution.values
    if facet_ids is None:
        return BoundaryFlux(solution.boundary_nodes, functional[solution.boundary_nodes])
    mesh = solution.mesh
    nodes = np.unique(mesh.facets[facet_ids])
    if not np.all(np.isin(nodes, solution.boundary_nodes)):
        raise SolverError('flux requested on nodes that are not Dirichlet nodes of the solve')
    mass = surface_mass(mesh, facet_ids).tocsc()[nodes][:, nodes]
    density = spla.spsolve(mass.tocsc(), functional[nodes])
    return BoundaryFlux(nodes, functional[nodes], np.atleast_1d(density))
