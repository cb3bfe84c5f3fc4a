"""
Discrete Dirichlet-to-Neumann operators and their H^{1/2} -> H^{-1/2} norms.

Entry (i, j) of an operator is the co-normal flux of the discrete harmonic
extension of hat function j, paired with hat function i. Norms are taken
with the spectral interpolation Gram of the boundary (K, M) pencil; the
dual norm uses the same Gram.
"""
from dataclasses import dataclass, replace
import logging

import numpy as np
from django.conf import settings
from scipy import linalg as la

from core.exceptions import OperatorError, SolverError
from pde.assembly import surface_mass, surface_stiffness
from pde.solvers import DirichletSolver

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    matrix: np.ndarray
    gram: np.ndarray
    dofs: np.ndarray
    tag: str
    conductivity: str = 'gamma'

    def __post_init__(self):
        n = len(self.dofs)
        if self.matrix.shape != (n, n) or self.gram.shape != (n, n):
            raise OperatorError(f'operator on {self.tag} has inconsistent sizes')

    def __repr__(self):
        return f'BoundaryOperator({self.tag}, dofs={len(self.dofs)}, conductivity={self.conductivity})'

    @property
    def size(self):
        return len(self.dofs)

    def _check_compatible(self, other):
        if not np.array_equal(self.dofs, other.dofs):
            raise OperatorError(f'operators on {self.tag} and {other.tag} use different degrees of freedom')

    def __sub__(self, other):
        self._check_compatible(other)
        return replace(self, matrix=self.matrix - other.matrix,
                       conductivity=f'{self.conductivity}-{other.conductivity}')

    def __add__(self, other):
        self._check_compatible(other)
        return replace(self, matrix=self.matrix + other.matrix,
                       conductivity=f'{self.conductivity}+{other.conductivity}')

    def scaled(self, factor):
        return replace(self, matrix=factor * self.matrix, conductivity=f'{factor:g}*{self.conductivity}')

    def apply(self, trace):
        return self.matrix @ trace

    def pairing(self, eta1, eta2):
        """<A eta1, eta2>"""
        return float(np.asarray(eta2) @ (self.matrix @ np.asarray(eta1)))

    def symmetry_defect(self):
        scale = np.abs(self.matrix).max()
        return float(np.abs(self.matrix - self.matrix.T).max() / scale) if scale > 0 else 0.0

    def restrict(self, dofs):
        """Block of the operator and its Gram on a subset of the degrees of freedom"""
        index = np.searchsorted(self.dofs, dofs)
        if np.any(index >= len(self.dofs)) or not np.array_equal(self.dofs[np.minimum(index, len(self.dofs) - 1)], dofs):
            raise OperatorError('restriction dofs are not a subset of the operator dofs')
        block = np.ix_(index, index)
        return BoundaryOperator(self.matrix[block], self.gram[block], np.asarray(dofs), f'{self.tag}|sub',
                                self.conductivity)

    def norm(self):
        return op_norm(self.matrix, self.gram)


def gram_half(mesh, facet_ids, dofs):
    """
    Gram matrix of the discrete H^{1/2} norm on the given boundary nodes.

    With M the surface mass and K the surface Laplace-Beltrami stiffness,
    and (mu, V) the M-orthonormal eigenpairs of K v = mu M v, the Gram is
    (M V) diag(sqrt(1 + mu)) (M V)^T.
    """
    dofs = np.asarray(dofs)
    if not len(dofs):
        raise OperatorError('gram_half needs at least one degree of freedom')
    mass = surface_mass(mesh, facet_ids).tocsr()[dofs][:, dofs].toarray()
    if len(dofs) == 1:
        return mass
    stiffness = surface_stiffness(mesh, facet_ids).tocsr()[dofs][:, dofs].toarray()
    mu, vectors = la.eigh(stiffness, mass)
    weights = np.sqrt(1.0 + np.clip(mu, 0.0, None))
    mv = mass @ vectors
    gram = (mv * weights) @ mv.T
    return 0.5 * (gram + gram.T)


def pencil_eigenvalues(mesh, facet_ids, dofs):
    dofs = np.asarray(dofs)
    mass = surface_mass(mesh, facet_ids).tocsr()[dofs][:, dofs].toarray()
    stiffness = surface_stiffness(mesh, facet_ids).tocsr()[dofs][:, dofs].toarray()
    return la.eigh(stiffness, mass, eigvals_only=True)


def op_norm(matrix, gram=None):
    """Largest singular value of the operator whitened by the Gram"""
    if isinstance(matrix, BoundaryOperator):
        matrix, gram = matrix.matrix, matrix.gram if gram is None else gram
    matrix = np.asarray(matrix, dtype=float)
    gram = np.asarray(gram, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape != gram.shape:
        raise OperatorError(f'operator {matrix.shape} and Gram {gram.shape} do not conform')
    if not np.any(matrix):
        return 0.0
    try:
        factor = la.cholesky(gram, lower=True)
    except la.LinAlgError as exc:
        raise OperatorError('Gram matrix is not positive definite') from exc
    left = la.solve_triangular(factor, matrix, lower=True)
    whitened = la.solve_triangular(factor, left.T, lower=True).T
    scale = np.abs(whitened).max()
    if np.abs(whitened - whitened.T).max() <= 1e-8 * scale:
        return float(np.abs(la.eigvalsh(0.5 * (whitened + whitened.T))).max())
    return float(la.svdvals(whitened)[0])


def assemble_dtn(gamma, region, dofs, facet_ids, tag, max_dofs=None, options=None):
    """DtN operator of a region for data on the given boundary nodes (zero on the rest)"""
    dofs = np.asarray(dofs)
    max_dofs = settings.DTN_MAX_DOFS if max_dofs is None else max_dofs
    if not len(dofs):
        raise OperatorError(f'{tag} has no degrees of freedom', key='dtn.max_dofs')
    if len(dofs) > max_dofs:
        raise OperatorError(f'{tag} has {len(dofs)} degrees of freedom, above the cap {max_dofs}',
                            key='dtn.max_dofs')
    mesh = region.mesh
    solver = DirichletSolver(gamma, region, options=options)
    position = np.searchsorted(solver.boundary, dofs)
    inside = np.minimum(position, len(solver.boundary) - 1)
    if np.any(position >= len(solver.boundary)) or not np.array_equal(solver.boundary[inside], dofs):
        raise OperatorError(f'{tag} dofs are not boundary nodes of {region.name}')
    data = np.zeros((len(solver.boundary), len(dofs)))
    data[position, np.arange(len(dofs))] = 1.0
    try:
        extensions = solver.solve_many(data)
    except SolverError as exc:
        column = exc.details.get('column')
        raise SolverError(f'DtN column solve failed on {tag} (basis index {column}): {exc}',
                          key=exc.key, column=column) from exc
    matrix = (solver.stiffness @ extensions)[dofs]
    gram = gram_half(mesh, facet_ids, dofs)
    operator = BoundaryOperator(matrix, gram, dofs, tag, getattr(gamma, 'name', 'gamma'))
    logger.info('Assembled %s DtN on %d dofs (symmetry defect %.2e)', tag, len(dofs), operator.symmetry_defect())
    return operator


def assemble_local_dtn(gamma, domain, max_dofs=None, options=None):
    """Local map: data supported strictly inside Sigma, solves on Omega"""
    return assemble_dtn(gamma, domain.region('Omega'), domain.sigma_dofs, domain.facets('Sigma'), 'Sigma', max_dofs,
                        options)


def assemble_full_dtn(gamma, domain, tag='dDtilde', max_dofs=None, options=None):
    """Full map on the boundary of an inner region, solves on that region"""
    regions = {'dDtilde': 'Dtilde', 'dDprime': 'Dprime', 'dD': 'D'}
    if tag not in regions:
        raise OperatorError(f'no full DtN map for boundary tag {tag!r}', key='dtn.tag')
    return assemble_dtn(gamma, domain.region(regions[tag]), domain.nodes(tag), domain.facets(tag), tag, max_dofs,
                        options)
